#pragma once

#include <memory>

#include "doseml/vae/model.hpp"

namespace doseml {

struct UnitConfig {
    std::vector<int> channels = {16, 32};  // stride-2 encoder stages (1 -> c1 -> c2)
    int own_res_blocks = 1;                // per-domain residual blocks
    int shared_res_blocks = 1;             // shared-latent residual blocks (>= 1)
    std::vector<int> disc_channels = {16, 32, 64, 64};  // 4-layer stride-2 stack
    double lambda0 = 10.0;   // GAN weight
    double lambda1 = 0.1;    // VAE KL weight
    double lambda3 = 0.1;    // cycle KL of the source code
    double lambda4 = 100.0;  // cycle KL of the re-encoded translation
    double lr_discriminator = 1e-4;
    double lr_encoder_generator = 1e-4;
    int iterations = 500;
    int batch_size = 4;
    int log_every = 10;
    std::uint64_t seed = 0;
    int image_size = 32;

    void validate() const {
        if (shared_res_blocks < 1) throw ArgumentError("unit config: shared_res_blocks must be >= 1");
        if (lambda0 < 0 || lambda1 < 0 || lambda3 < 0 || lambda4 < 0)
            throw ArgumentError("unit config: loss weights must be >= 0");
        if (channels.empty() || disc_channels.size() != 4)
            throw ArgumentError("unit config: bad channel lists");
        if (image_size % (1 << channels.size()) != 0)
            throw ArgumentError("unit config: image_size must be divisible by 2^stages");
    }

    nlohmann::json to_json() const {
        return {{"channels", channels},       {"own_res_blocks", own_res_blocks},
                {"shared_res_blocks", shared_res_blocks}, {"disc_channels", disc_channels},
                {"lambda0", lambda0},         {"lambda1", lambda1},
                {"lambda3", lambda3},         {"lambda4", lambda4},
                {"lr_discriminator", lr_discriminator},
                {"lr_encoder_generator", lr_encoder_generator},
                {"iterations", iterations},   {"batch_size", batch_size},
                {"log_every", log_every},     {"seed", seed},
                {"image_size", image_size}};
    }

    static UnitConfig from_json(const nlohmann::json& j) {
        UnitConfig c;
        c.channels = j.value("channels", c.channels);
        c.own_res_blocks = j.value("own_res_blocks", c.own_res_blocks);
        c.shared_res_blocks = j.value("shared_res_blocks", c.shared_res_blocks);
        c.disc_channels = j.value("disc_channels", c.disc_channels);
        c.lambda0 = j.value("lambda0", c.lambda0);
        c.lambda1 = j.value("lambda1", c.lambda1);
        c.lambda3 = j.value("lambda3", c.lambda3);
        c.lambda4 = j.value("lambda4", c.lambda4);
        c.lr_discriminator = j.value("lr_discriminator", c.lr_discriminator);
        c.lr_encoder_generator = j.value("lr_encoder_generator", c.lr_encoder_generator);
        c.iterations = j.value("iterations", c.iterations);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.log_every = j.value("log_every", c.log_every);
        c.seed = j.value("seed", c.seed);
        c.image_size = j.value("image_size", c.image_size);
        return c;
    }
};

/// Stride-2 conv + leaky ReLU stack ending in a per-sample probability.
struct Discriminator {
    std::vector<ParamPtr> conv_w, conv_b;
    LinearLayer head;
    std::vector<int> channels;
    int image_size = 0;

    Discriminator() = default;
    Discriminator(const std::string& name, const std::vector<int>& chans, int image_size_, Rng& rng)
        : channels(chans), image_size(image_size_) {
        int in_ch = 1;
        for (std::size_t i = 0; i < channels.size(); ++i) {
            conv_w.push_back(make_param(name + ".conv" + std::to_string(i) + ".w",
                                        kaiming_init({channels[i], in_ch, 3, 3}, rng)));
            conv_b.push_back(
                make_param(name + ".conv" + std::to_string(i) + ".b", Tensor({channels[i]})));
            in_ch = channels[i];
        }
        const int s = image_size >> channels.size();
        head = LinearLayer(name + ".head", in_ch * s * s, 1, rng);
    }

    /// Probabilities in (0, 1), shape [N, 1].
    Var forward(ParamBinder& bind, Var x) {
        Tape& tp = bind.tape();
        Var y = x;
        for (std::size_t i = 0; i < conv_w.size(); ++i)
            y = ops::leaky_relu(tp, ops::conv2d(tp, y, bind(conv_w[i]), 2, 1, bind(conv_b[i])));
        const std::vector<int> ys = tp.value(y).shape;  // copy: ops invalidate references
        y = ops::reshape(tp, y, {ys[0], ys[1] * ys[2] * ys[3]});
        return ops::sigmoid(tp, head.forward(bind, y));
    }

    void collect(std::vector<ParamPtr>& out) const {
        out.insert(out.end(), conv_w.begin(), conv_w.end());
        out.insert(out.end(), conv_b.begin(), conv_b.end());
        head.collect(out);
    }
};

/// Two VAEs with a shared latent block, two generators, two discriminators.
/// The last encoder residual block and the first generator residual block
/// are the same parameter storage for both domains.
class UnitNetworks {
public:
    UnitConfig cfg;

    explicit UnitNetworks(UnitConfig config) : cfg(std::move(config)) {
        cfg.validate();
        Rng rng(mix_seed(cfg.seed, 0xB0));
        const int latent_ch = cfg.channels.back();
        for (int d = 0; d < 2; ++d) {
            const std::string en = "e" + std::to_string(d + 1);
            int in_ch = 1;
            for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
                enc_conv_[d].emplace_back(en + ".conv" + std::to_string(i), in_ch, cfg.channels[i],
                                          2, rng);
                in_ch = cfg.channels[i];
            }
            for (int i = 0; i < cfg.own_res_blocks; ++i)
                enc_res_[d].emplace_back(en + ".res" + std::to_string(i), in_ch, rng);
        }
        for (int i = 0; i < cfg.shared_res_blocks; ++i)
            shared_enc_.push_back(
                std::make_shared<ResBlock>("shared.enc" + std::to_string(i), latent_ch, rng));
        for (int i = 0; i < cfg.shared_res_blocks; ++i)
            shared_gen_.push_back(
                std::make_shared<ResBlock>("shared.gen" + std::to_string(i), latent_ch, rng));
        for (int d = 0; d < 2; ++d) {
            const std::string gn = "g" + std::to_string(d + 1);
            for (int i = 0; i < cfg.own_res_blocks; ++i)
                gen_res_[d].emplace_back(gn + ".res" + std::to_string(i), latent_ch, rng);
            for (std::size_t i = cfg.channels.size(); i-- > 0;) {
                const int out_ch = i > 0 ? cfg.channels[i - 1] : 1;
                gen_deconv_[d].emplace_back(gn + ".deconv" +
                                                std::to_string(cfg.channels.size() - 1 - i),
                                            cfg.channels[i], out_ch, i > 0, rng);
            }
            disc_[d] = Discriminator("d" + std::to_string(d + 1), cfg.disc_channels,
                                     cfg.image_size, rng);
        }
    }

    /// Posterior mean of the latent code (unit-variance posterior).
    Var encode_mu(int domain, ParamBinder& bind, Var x, bool train) {
        check_domain(domain);
        const Tensor& xv = bind.tape().value(x);
        if (xv.shape.size() != 4 || xv.shape[2] != cfg.image_size || xv.shape[3] != cfg.image_size)
            throw ShapeError("unit encode: input shape " + xv.shape_str() +
                             " does not match config");
        Var y = x;
        for (auto& blk : enc_conv_[domain - 1]) y = blk.forward(bind, y, train);
        for (auto& blk : enc_res_[domain - 1]) y = blk.forward(bind, y, train);
        for (auto& blk : shared_enc_) y = blk->forward(bind, y, train);
        return y;
    }

    /// z = mu + eps with eps ~ N(0, I); pass a zero tensor for the
    /// deterministic mode.
    Var sample_code(Tape& tp, Var mu, const Tensor& eps) {
        if (!tp.value(mu).same_shape(eps)) throw ShapeError("sample_code: noise shape mismatch");
        return ops::add(tp, mu, tp.leaf(eps, false));
    }

    Var generate(int domain, ParamBinder& bind, Var z, bool train) {
        check_domain(domain);
        Tape& tp = bind.tape();
        Var y = z;
        for (auto& blk : shared_gen_) y = blk->forward(bind, y, train);
        for (auto& blk : gen_res_[domain - 1]) y = blk.forward(bind, y, train);
        for (std::size_t i = 0; i < gen_deconv_[domain - 1].size(); ++i) {
            y = gen_deconv_[domain - 1][i].forward(bind, y, train);
            y = i + 1 < gen_deconv_[domain - 1].size() ? ops::relu(tp, y) : ops::tanh_(tp, y);
        }
        return y;
    }

    Var discriminate(int domain, ParamBinder& bind, Var x) {
        check_domain(domain);
        return disc_[domain - 1].forward(bind, x);
    }

    std::vector<ParamPtr> encoder_generator_parameters() const {
        std::vector<ParamPtr> out;
        for (int d = 0; d < 2; ++d) {
            for (const auto& b : enc_conv_[d]) b.collect(out);
            for (const auto& b : enc_res_[d]) b.collect(out);
            for (const auto& b : gen_res_[d]) b.collect(out);
            for (const auto& b : gen_deconv_[d]) b.collect(out);
        }
        for (const auto& b : shared_enc_) b->collect(out);
        for (const auto& b : shared_gen_) b->collect(out);
        return out;
    }

    std::vector<ParamPtr> discriminator_parameters() const {
        std::vector<ParamPtr> out;
        for (int d = 0; d < 2; ++d) disc_[d].collect(out);
        return out;
    }

    const std::vector<std::shared_ptr<ResBlock>>& shared_encoder_blocks() const {
        return shared_enc_;
    }
    const std::vector<std::shared_ptr<ResBlock>>& shared_generator_blocks() const {
        return shared_gen_;
    }

    std::map<std::string, Tensor> state_dict() const {
        std::map<std::string, Tensor> out;
        for (const auto& p : encoder_generator_parameters()) out[p->name] = p->value;
        for (const auto& p : discriminator_parameters()) out[p->name] = p->value;
        for_each_running([&](const std::string& name, const ops::RunningStats& rs) {
            if (rs.mean.empty()) return;
            out[name + ".running_mean"] = Tensor({static_cast<int>(rs.mean.size())}, rs.mean);
            out[name + ".running_var"] = Tensor({static_cast<int>(rs.var.size())}, rs.var);
        });
        return out;
    }

    void load_state_dict(const std::map<std::string, Tensor>& dict) {
        auto load = [&](const std::vector<ParamPtr>& params) {
            for (const auto& p : params) {
                auto it = dict.find(p->name);
                if (it == dict.end()) throw IoError("checkpoint missing tensor " + p->name);
                p->value = it->second;
            }
        };
        load(encoder_generator_parameters());
        load(discriminator_parameters());
        for_each_running([&](const std::string& name, ops::RunningStats& rs) {
            auto im = dict.find(name + ".running_mean");
            auto iv = dict.find(name + ".running_var");
            if (im == dict.end() || iv == dict.end()) return;
            rs.mean = im->second.data;
            rs.var = iv->second.data;
        });
    }

private:
    static void check_domain(int domain) {
        if (domain != 1 && domain != 2) throw ArgumentError("domain must be 1 or 2");
    }

    template <typename F>
    void for_each_running(F&& f) {
        for (int d = 0; d < 2; ++d) {
            for (auto& b : enc_conv_[d]) f(b.name, b.rs);
            for (auto& b : enc_res_[d]) {
                f(b.name + ".bn1", b.rs1);
                f(b.name + ".bn2", b.rs2);
            }
            for (auto& b : gen_res_[d]) {
                f(b.name + ".bn1", b.rs1);
                f(b.name + ".bn2", b.rs2);
            }
            for (auto& b : gen_deconv_[d])
                if (b.batch_normed) f(b.name, b.rs);
        }
        for (auto& b : shared_enc_) {
            f(b->name + ".bn1", b->rs1);
            f(b->name + ".bn2", b->rs2);
        }
        for (auto& b : shared_gen_) {
            f(b->name + ".bn1", b->rs1);
            f(b->name + ".bn2", b->rs2);
        }
    }

    template <typename F>
    void for_each_running(F&& f) const {
        const_cast<UnitNetworks*>(this)->for_each_running(
            [&](const std::string& n, ops::RunningStats& rs) {
                f(n, static_cast<const ops::RunningStats&>(rs));
            });
    }

    std::vector<ConvBlock> enc_conv_[2];
    std::vector<ResBlock> enc_res_[2];
    std::vector<std::shared_ptr<ResBlock>> shared_enc_, shared_gen_;
    std::vector<ResBlock> gen_res_[2];
    std::vector<DeconvBlock> gen_deconv_[2];
    Discriminator disc_[2];
};

/// 0.5 * mean(mu^2): KL of a unit-variance Gaussian posterior to N(0, I),
/// averaged per element to match the mean-style reconstruction scale.
inline Var unit_kl(Tape& tp, Var mu) { return ops::scale(tp, ops::mean(tp, ops::square(tp, mu)), 0.5); }

}  // namespace doseml
