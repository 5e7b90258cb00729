#pragma once

#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "doseml/core/adam.hpp"
#include "doseml/core/checkpoint.hpp"
#include "doseml/core/nn_ops.hpp"
#include "doseml/core/param.hpp"
#include "doseml/core/tape.hpp"

namespace doseml {

struct VaeConfig {
    int input_channels = 1;
    std::vector<int> hidden_dims = {32, 64, 128, 128};  // paper scale: {64,128,256,512}
    int residual_blocks = 2;                            // paper scale: 5
    int latent_dim = 0;  // 0 derives C_last * (S / 2^stages)^2 / 8
    double beta = 0.005; // paper scale: 100 with sum-style loss magnitudes
    double learning_rate = 1e-4;
    int batch_size = 16;
    int epochs = 50;
    std::uint64_t seed = 0;
    int image_size = 64;
    double log_var_clamp = 20.0;

    int stages() const { return static_cast<int>(hidden_dims.size()); }

    int bottleneck_size() const { return image_size >> stages(); }

    int resolved_latent_dim() const {
        if (latent_dim > 0) return latent_dim;
        const int s = bottleneck_size();
        return hidden_dims.back() * s * s / 8;
    }

    void validate() const {
        if (beta <= 0.0) throw ArgumentError("vae config: beta must be > 0");
        if (hidden_dims.empty()) throw ArgumentError("vae config: hidden_dims empty");
        if (image_size % (1 << stages()) != 0 || bottleneck_size() < 1)
            throw ArgumentError("vae config: image_size must be divisible by 2^stages");
        if (resolved_latent_dim() < 1) throw ArgumentError("vae config: latent_dim must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"input_channels", input_channels}, {"hidden_dims", hidden_dims},
                {"residual_blocks", residual_blocks}, {"latent_dim", latent_dim},
                {"beta", beta},       {"learning_rate", learning_rate},
                {"batch_size", batch_size}, {"epochs", epochs},
                {"seed", seed},       {"image_size", image_size},
                {"log_var_clamp", log_var_clamp}};
    }

    static VaeConfig from_json(const nlohmann::json& j) {
        VaeConfig c;
        c.input_channels = j.value("input_channels", c.input_channels);
        c.hidden_dims = j.value("hidden_dims", c.hidden_dims);
        c.residual_blocks = j.value("residual_blocks", c.residual_blocks);
        c.latent_dim = j.value("latent_dim", c.latent_dim);
        c.beta = j.value("beta", c.beta);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.seed = j.value("seed", c.seed);
        c.image_size = j.value("image_size", c.image_size);
        c.log_var_clamp = j.value("log_var_clamp", c.log_var_clamp);
        return c;
    }
};

/// Binds long-lived parameters onto one tape, memoizing leaf nodes so each
/// parameter appears once per step.
class ParamBinder {
public:
    explicit ParamBinder(Tape& tape, bool requires_grad = true)
        : tape_(tape), requires_grad_(requires_grad) {}

    /// Only the listed parameters are trainable; every other bound parameter
    /// becomes a frozen leaf. Used for alternating-player optimization.
    ParamBinder(Tape& tape, const std::vector<ParamPtr>& trainable) : tape_(tape) {
        for (const auto& p : trainable) trainable_.insert(p.get());
    }

    Var operator()(const ParamPtr& p) {
        auto it = vars_.find(p.get());
        if (it != vars_.end()) return it->second;
        const bool rg = trainable_.empty() ? requires_grad_ : trainable_.count(p.get()) > 0;
        Var v = tape_.leaf(p->value, rg);
        vars_.emplace(p.get(), v);
        return v;
    }

    /// Leaf var for a param if it was bound this step.
    const std::unordered_map<Param*, Var>& bound() const { return vars_; }

    Tape& tape() { return tape_; }

private:
    Tape& tape_;
    bool requires_grad_ = true;
    std::unordered_set<Param*> trainable_;
    std::unordered_map<Param*, Var> vars_;
};

/// Reflection pad 1 + 3x3 conv + batch norm + ReLU.
struct ConvBlock {
    std::string name;
    ParamPtr w, b, gamma, beta;
    ops::RunningStats rs;
    int stride = 1;

    ConvBlock() = default;
    ConvBlock(const std::string& name_, int in_ch, int out_ch, int stride_, Rng& rng)
        : name(name_), stride(stride_) {
        w = make_param(name + ".w", kaiming_init({out_ch, in_ch, 3, 3}, rng));
        b = make_param(name + ".b", Tensor({out_ch}));
        gamma = make_param(name + ".gamma", Tensor::full({out_ch}, 1.0));
        beta = make_param(name + ".beta", Tensor({out_ch}));
    }

    Var forward(ParamBinder& bind, Var x, bool train) {
        Tape& tp = bind.tape();
        Var y = ops::reflection_pad2d(tp, x, 1);
        y = ops::conv2d(tp, y, bind(w), stride, 0, bind(b));
        y = ops::batch_norm(tp, y, bind(gamma), bind(beta), rs, train);
        return ops::relu(tp, y);
    }

    void collect(std::vector<ParamPtr>& out) const { out.insert(out.end(), {w, b, gamma, beta}); }
};

/// Two 3x3 convs with batch norm, identity skip, trailing ReLU.
struct ResBlock {
    std::string name;
    ParamPtr w1, b1, g1, be1, w2, b2, g2, be2;
    ops::RunningStats rs1, rs2;

    ResBlock() = default;
    ResBlock(const std::string& name_, int ch, Rng& rng) : name(name_) {
        w1 = make_param(name + ".w1", kaiming_init({ch, ch, 3, 3}, rng));
        b1 = make_param(name + ".b1", Tensor({ch}));
        g1 = make_param(name + ".g1", Tensor::full({ch}, 1.0));
        be1 = make_param(name + ".be1", Tensor({ch}));
        w2 = make_param(name + ".w2", kaiming_init({ch, ch, 3, 3}, rng));
        b2 = make_param(name + ".b2", Tensor({ch}));
        g2 = make_param(name + ".g2", Tensor::full({ch}, 1.0));
        be2 = make_param(name + ".be2", Tensor({ch}));
    }

    Var forward(ParamBinder& bind, Var x, bool train) {
        Tape& tp = bind.tape();
        Var y = ops::reflection_pad2d(tp, x, 1);
        y = ops::conv2d(tp, y, bind(w1), 1, 0, bind(b1));
        y = ops::batch_norm(tp, y, bind(g1), bind(be1), rs1, train);
        y = ops::relu(tp, y);
        y = ops::reflection_pad2d(tp, y, 1);
        y = ops::conv2d(tp, y, bind(w2), 1, 0, bind(b2));
        y = ops::batch_norm(tp, y, bind(g2), bind(be2), rs2, train);
        return ops::relu(tp, ops::add(tp, x, y));
    }

    void collect(std::vector<ParamPtr>& out) const {
        out.insert(out.end(), {w1, b1, g1, be1, w2, b2, g2, be2});
    }
};

struct LinearLayer {
    ParamPtr w, b;

    LinearLayer() = default;
    LinearLayer(const std::string& name, int in_dim, int out_dim, Rng& rng) {
        w = make_param(name + ".w", kaiming_init({out_dim, in_dim}, rng));
        b = make_param(name + ".b", Tensor({out_dim}));
    }

    Var forward(ParamBinder& bind, Var x) { return ops::linear(bind.tape(), x, bind(w), bind(b)); }

    void collect(std::vector<ParamPtr>& out) const { out.insert(out.end(), {w, b}); }
};

/// Transposed conv stage of the decoder (stride 2, output_padding 1).
struct DeconvBlock {
    std::string name;
    ParamPtr w, b, gamma, beta;
    ops::RunningStats rs;
    bool batch_normed = true;

    DeconvBlock() = default;
    DeconvBlock(const std::string& name_, int in_ch, int out_ch, bool bn, Rng& rng)
        : name(name_), batch_normed(bn) {
        w = make_param(name + ".w", kaiming_init({in_ch, out_ch, 3, 3}, rng));
        b = make_param(name + ".b", Tensor({out_ch}));
        if (bn) {
            gamma = make_param(name + ".gamma", Tensor::full({out_ch}, 1.0));
            beta = make_param(name + ".beta", Tensor({out_ch}));
        }
    }

    /// Activation applied by the caller; this returns the (optionally
    /// batch-normed) pre-activation.
    Var forward(ParamBinder& bind, Var x, bool train) {
        Tape& tp = bind.tape();
        Var y = ops::conv_transpose2d(tp, x, bind(w), 2, 1, 1, bind(b));
        if (batch_normed) y = ops::batch_norm(tp, y, bind(gamma), bind(beta), rs, train);
        return y;
    }

    void collect(std::vector<ParamPtr>& out) const {
        out.insert(out.end(), {w, b});
        if (batch_normed) out.insert(out.end(), {gamma, beta});
    }
};

struct EncoderStatsVars {
    Var mu, log_var;
};

/// Convolutional beta-VAE whose reconstruction target is the measured image
/// instead of the input: stride-2 encoder stack, residual blocks, FC heads
/// for mu / log-variance, FC + transposed-conv decoder ending in tanh.
class VaeModel {
public:
    VaeConfig cfg;

    explicit VaeModel(VaeConfig config) : cfg(std::move(config)) {
        cfg.validate();
        Rng rng(mix_seed(cfg.seed, 0xA0));
        int in_ch = cfg.input_channels;
        for (std::size_t i = 0; i < cfg.hidden_dims.size(); ++i) {
            enc_blocks_.emplace_back("enc.conv" + std::to_string(i), in_ch, cfg.hidden_dims[i], 2,
                                     rng);
            in_ch = cfg.hidden_dims[i];
        }
        for (int i = 0; i < cfg.residual_blocks; ++i)
            enc_res_.emplace_back("enc.res" + std::to_string(i), in_ch, rng);
        const int s = cfg.bottleneck_size();
        const int flat = in_ch * s * s;
        const int latent = cfg.resolved_latent_dim();
        fc_mu_ = LinearLayer("enc.fc_mu", flat, latent, rng);
        fc_log_var_ = LinearLayer("enc.fc_logvar", flat, latent, rng);
        fc_dec_ = LinearLayer("dec.fc", latent, flat, rng);
        for (std::size_t i = cfg.hidden_dims.size(); i-- > 0;) {
            const int out_ch = i > 0 ? cfg.hidden_dims[i - 1] : cfg.input_channels;
            const bool bn = i > 0;
            dec_blocks_.emplace_back("dec.deconv" + std::to_string(cfg.hidden_dims.size() - 1 - i),
                                     cfg.hidden_dims[i], out_ch, bn, rng);
        }
    }

    EncoderStatsVars encode(ParamBinder& bind, Var x, bool train) {
        Tape& tp = bind.tape();
        const std::vector<int> in_shape = tp.value(x).shape;  // copy: ops invalidate references
        if (in_shape.size() != 4 || in_shape[1] != cfg.input_channels ||
            in_shape[2] != cfg.image_size || in_shape[3] != cfg.image_size)
            throw ShapeError("encode: input shape " + tp.value(x).shape_str() +
                             " does not match config");
        Var y = x;
        for (auto& blk : enc_blocks_) y = blk.forward(bind, y, train);
        for (auto& blk : enc_res_) y = blk.forward(bind, y, train);
        const int s = cfg.bottleneck_size();
        y = ops::reshape(tp, y, {in_shape[0], cfg.hidden_dims.back() * s * s});
        Var mu = fc_mu_.forward(bind, y);
        Var log_var = ops::clamp(tp, fc_log_var_.forward(bind, y), -cfg.log_var_clamp,
                                 cfg.log_var_clamp);
        return {mu, log_var};
    }

    /// z = mu + exp(log_var / 2) * eps; gradient flows to mu and log_var only.
    Var reparameterize(Tape& tp, const EncoderStatsVars& stats, const Tensor& eps) {
        if (!tp.value(stats.mu).same_shape(eps))
            throw ShapeError("reparameterize: noise shape mismatch");
        Var eps_leaf = tp.leaf(eps, false);
        Var sigma = ops::exp_(tp, ops::scale(tp, stats.log_var, 0.5));
        return ops::add(tp, stats.mu, ops::mul(tp, sigma, eps_leaf));
    }

    Var decode(ParamBinder& bind, Var z, bool train) {
        Tape& tp = bind.tape();
        const std::vector<int> z_shape = tp.value(z).shape;  // copy: ops invalidate references
        if (z_shape.size() != 2 || z_shape[1] != cfg.resolved_latent_dim())
            throw ShapeError("decode: latent shape " + tp.value(z).shape_str() +
                             " does not match config");
        const int s = cfg.bottleneck_size();
        Var y = ops::relu(tp, fc_dec_.forward(bind, z));
        y = ops::reshape(tp, y, {z_shape[0], cfg.hidden_dims.back(), s, s});
        for (std::size_t i = 0; i < dec_blocks_.size(); ++i) {
            y = dec_blocks_[i].forward(bind, y, train);
            y = i + 1 < dec_blocks_.size() ? ops::relu(tp, y) : ops::tanh_(tp, y);
        }
        return y;
    }

    std::vector<ParamPtr> parameters() const {
        std::vector<ParamPtr> out;
        for (const auto& b : enc_blocks_) b.collect(out);
        for (const auto& b : enc_res_) b.collect(out);
        fc_mu_.collect(out);
        fc_log_var_.collect(out);
        fc_dec_.collect(out);
        for (const auto& b : dec_blocks_) b.collect(out);
        return out;
    }

    /// Parameters plus batch-norm running statistics, for checkpointing.
    std::map<std::string, Tensor> state_dict() const {
        std::map<std::string, Tensor> out;
        for (const auto& p : parameters()) out[p->name] = p->value;
        int i = 0;
        for (const auto& b : enc_blocks_) add_running(out, "enc.conv" + std::to_string(i++), b.rs);
        i = 0;
        for (const auto& b : enc_res_) {
            add_running(out, "enc.res" + std::to_string(i) + ".bn1", b.rs1);
            add_running(out, "enc.res" + std::to_string(i) + ".bn2", b.rs2);
            ++i;
        }
        i = 0;
        for (const auto& b : dec_blocks_) {
            if (b.batch_normed) add_running(out, "dec.deconv" + std::to_string(i), b.rs);
            ++i;
        }
        return out;
    }

    void load_state_dict(const std::map<std::string, Tensor>& dict) {
        for (const auto& p : parameters()) {
            auto it = dict.find(p->name);
            if (it == dict.end()) throw IoError("checkpoint missing tensor " + p->name);
            if (it->second.shape != p->value.shape)
                throw ShapeError("checkpoint shape mismatch for " + p->name);
            p->value = it->second;
        }
        int i = 0;
        for (auto& b : enc_blocks_) load_running(dict, "enc.conv" + std::to_string(i++), b.rs);
        i = 0;
        for (auto& b : enc_res_) {
            load_running(dict, "enc.res" + std::to_string(i) + ".bn1", b.rs1);
            load_running(dict, "enc.res" + std::to_string(i) + ".bn2", b.rs2);
            ++i;
        }
        i = 0;
        for (auto& b : dec_blocks_) {
            if (b.batch_normed) load_running(dict, "dec.deconv" + std::to_string(i), b.rs);
            ++i;
        }
    }

private:
    static void add_running(std::map<std::string, Tensor>& out, const std::string& name,
                            const ops::RunningStats& rs) {
        if (rs.mean.empty()) return;
        out[name + ".running_mean"] = Tensor({static_cast<int>(rs.mean.size())}, rs.mean);
        out[name + ".running_var"] = Tensor({static_cast<int>(rs.var.size())}, rs.var);
    }

    static void load_running(const std::map<std::string, Tensor>& dict, const std::string& name,
                             ops::RunningStats& rs) {
        auto im = dict.find(name + ".running_mean");
        auto iv = dict.find(name + ".running_var");
        if (im == dict.end() || iv == dict.end()) return;  // never trained; keep identity stats
        rs.mean = im->second.data;
        rs.var = iv->second.data;
    }

    std::vector<ConvBlock> enc_blocks_;
    std::vector<ResBlock> enc_res_;
    LinearLayer fc_mu_, fc_log_var_, fc_dec_;
    std::vector<DeconvBlock> dec_blocks_;
};

struct VaeLossVars {
    Var total, reconstruction, kl;
};

/// total = mean-squared reconstruction against the target image plus
/// beta times the standard non-negative KL to the unit Gaussian prior.
inline VaeLossVars vae_loss(Tape& tp, Var x_out, Var x_target, const EncoderStatsVars& stats,
                            double beta) {
    Var rec = ops::mse(tp, x_out, x_target);
    // -(1/2) sum_i (1 + log sigma_i^2 - mu_i^2 - sigma_i^2), mean over batch.
    Var inner = ops::add_const(tp, ops::sub(tp, ops::sub(tp, stats.log_var,
                                                         ops::square(tp, stats.mu)),
                                            ops::exp_(tp, stats.log_var)),
                               1.0);
    Var kl = ops::scale(tp, ops::mean(tp, ops::sum_rows(tp, inner)), -0.5);
    Var total = ops::add(tp, rec, ops::scale(tp, kl, beta));
    return {total, rec, kl};
}

/// Scalar loss values as plain numbers, checked finite.
struct VaeLossReport {
    double total = 0.0, reconstruction = 0.0, kl = 0.0, beta = 0.0;
};

inline VaeLossReport report_loss(Tape& tp, const VaeLossVars& v, double beta) {
    VaeLossReport r{tp.value(v.total).data[0], tp.value(v.reconstruction).data[0],
                    tp.value(v.kl).data[0], beta};
    if (!std::isfinite(r.total))
        throw DivergenceError("non-finite VAE loss (rec=" + std::to_string(r.reconstruction) +
                              ", kl=" + std::to_string(r.kl) + ")");
    return r;
}

}  // namespace doseml
