#pragma once

#include <filesystem>
#include <sstream>

#include "doseml/unit/model.hpp"
#include "doseml/vae/train.hpp"

namespace doseml {

struct UnitLossReport {
    long iteration = 0;
    double vae1 = 0, vae2 = 0, gan1 = 0, gan2 = 0, cycle1 = 0, cycle2 = 0;
    double d1 = 0, d2 = 0;
    double cycle_mae1 = 0;  // plain reconstruction MAE of the 1->2->1 cycle, for monitoring
    double d1_real_mean = 0, d2_real_mean = 0;

    void check_finite() const {
        const std::pair<const char*, double> parts[] = {
            {"L_VAE1", vae1}, {"L_VAE2", vae2},   {"L_GAN1", gan1},   {"L_GAN2", gan2},
            {"L_cyc1", cycle1}, {"L_cyc2", cycle2}, {"D1_loss", d1}, {"D2_loss", d2}};
        for (const auto& [name, v] : parts)
            if (!std::isfinite(v))
                throw DivergenceError(std::string("non-finite UNIT loss component ") + name);
    }
};

/// -mean(log D(real)) - mean(log(1 - D(fake))).
inline Var discriminator_loss(Tape& tp, Var d_real, Var d_fake) {
    Var real_term = ops::scale(tp, ops::mean(tp, ops::log_(tp, d_real)), -1.0);
    Var fake_term = ops::scale(
        tp, ops::mean(tp, ops::log_(tp, ops::add_const(tp, ops::scale(tp, d_fake, -1.0), 1.0))),
        -1.0);
    return ops::add(tp, real_term, fake_term);
}

/// Non-saturating generator objective: -mean(log D(fake)).
inline Var generator_gan_loss(Tape& tp, Var d_fake) {
    return ops::scale(tp, ops::mean(tp, ops::log_(tp, d_fake)), -1.0);
}

inline Checkpoint make_unit_checkpoint(const UnitNetworks& nets, double global_max_dose) {
    Checkpoint ck;
    ck.tensors = nets.state_dict();
    ck.config = {{"model", "unit"}, {"unit", nets.cfg.to_json()}, {"global_max_dose", global_max_dose}};
    return ck;
}

struct UnitTrainResult {
    std::vector<UnitLossReport> log;
    bool diverged = false;
};

inline std::string unit_loss_csv(const std::vector<UnitLossReport>& log) {
    std::ostringstream os;
    os << "iteration,L_VAE1,L_VAE2,L_GAN1,L_GAN2,L_cyc1,L_cyc2,D1_loss,D2_loss\n";
    os.setf(std::ios::scientific);
    os.precision(10);
    for (const auto& r : log)
        os << r.iteration << "," << r.vae1 << "," << r.vae2 << "," << r.gan1 << "," << r.gan2
           << "," << r.cycle1 << "," << r.cycle2 << "," << r.d1 << "," << r.d2 << "\n";
    return os.str();
}

/// Alternating adversarial training. Per iteration: (a) discriminator step
/// on real vs translated images with encoders/generators frozen; (b)
/// encoder-generator step on L_VAE + lambda0 L_GAN + L_cycle with the
/// discriminators frozen. The two domain streams are shuffled independently
/// (unpaired regime).
inline UnitTrainResult train_unit(const DatasetManifest& manifest, const UnitConfig& config,
                                  const std::filesystem::path& out_dir) {
    UnitConfig cfg = config;
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    std::vector<NormalizedPair> train_set = load_normalized_split(manifest, Split::Train);
    if (train_set.empty()) throw DataError("train_unit: empty train split");
    for (const auto& s : train_set)
        if (s.input.height != cfg.image_size || s.input.width != cfg.image_size)
            throw ShapeError("train_unit: dataset image size does not match config");

    UnitNetworks nets(cfg);
    Adam adam_d(cfg.lr_discriminator);
    Adam adam_eg(cfg.lr_encoder_generator);
    const std::vector<ParamPtr> eg_params = nets.encoder_generator_parameters();
    const std::vector<ParamPtr> d_params = nets.discriminator_parameters();

    // Independent per-domain sampling; pairing is never used.
    Rng pick1(mix_seed(cfg.seed, 0x11));
    Rng pick2(mix_seed(cfg.seed, 0x22));
    Rng noise(mix_seed(cfg.seed, 0x33));
    const int n = static_cast<int>(train_set.size());

    auto draw_batch = [&](Rng& rng, bool predicted) {
        std::vector<const DoseImage*> imgs;
        for (int i = 0; i < cfg.batch_size; ++i) {
            const auto& s = train_set[rng.uniform_int(0, n - 1)];
            imgs.push_back(predicted ? &s.input : &s.target);
        }
        return pack_batch(imgs);
    };
    auto draw_eps = [&](const std::vector<int>& shape) {
        Tensor eps(shape);
        for (double& v : eps.data) v = noise.normal();
        return eps;
    };
    auto grads_for = [](Tape& tp, ParamBinder& bind, const std::vector<ParamPtr>& params) {
        std::vector<const std::vector<double>*> gs;
        gs.reserve(params.size());
        for (const auto& p : params) {
            tp.ensure_grad(bind(p).idx);
            gs.push_back(&tp.grad(bind(p)));
        }
        return gs;
    };

    UnitTrainResult result;
    try {
        for (int iter = 1; iter <= cfg.iterations; ++iter) {
            const Tensor x1 = draw_batch(pick1, true);   // domain 1: predicted
            const Tensor x2 = draw_batch(pick2, false);  // domain 2: measured
            UnitLossReport rep;
            rep.iteration = iter;

            {  // (a) discriminator step; encoders/generators frozen
                Tape tp;
                ParamBinder bind(tp, d_params);
                Var v1 = tp.leaf(x1, false);
                Var v2 = tp.leaf(x2, false);
                Var mu1 = nets.encode_mu(1, bind, v1, true);
                Var mu2 = nets.encode_mu(2, bind, v2, true);
                Var z1 = nets.sample_code(tp, mu1, draw_eps(tp.value(mu1).shape));
                Var z2 = nets.sample_code(tp, mu2, draw_eps(tp.value(mu2).shape));
                Var x12 = nets.generate(2, bind, z1, true);
                Var x21 = nets.generate(1, bind, z2, true);
                Var d1_real = nets.discriminate(1, bind, v1);
                Var d1_fake = nets.discriminate(1, bind, x21);
                Var d2_real = nets.discriminate(2, bind, v2);
                Var d2_fake = nets.discriminate(2, bind, x12);
                Var d1_loss = discriminator_loss(tp, d1_real, d1_fake);
                Var d2_loss = discriminator_loss(tp, d2_real, d2_fake);
                Var total = ops::add(tp, d1_loss, d2_loss);
                tp.backward(total);
                adam_d.step(d_params, grads_for(tp, bind, d_params));
                rep.d1 = tp.value(d1_loss).data[0];
                rep.d2 = tp.value(d2_loss).data[0];
                double s1 = 0, s2 = 0;
                for (double v : tp.value(d1_real).data) s1 += v;
                for (double v : tp.value(d2_real).data) s2 += v;
                rep.d1_real_mean = s1 / tp.value(d1_real).numel();
                rep.d2_real_mean = s2 / tp.value(d2_real).numel();
            }

            {  // (b) encoder-generator step; discriminators frozen
                Tape tp;
                ParamBinder bind(tp, eg_params);
                Var v1 = tp.leaf(x1, false);
                Var v2 = tp.leaf(x2, false);
                Var mu1 = nets.encode_mu(1, bind, v1, true);
                Var mu2 = nets.encode_mu(2, bind, v2, true);
                Var z1 = nets.sample_code(tp, mu1, draw_eps(tp.value(mu1).shape));
                Var z2 = nets.sample_code(tp, mu2, draw_eps(tp.value(mu2).shape));
                Var x11 = nets.generate(1, bind, z1, true);
                Var x22 = nets.generate(2, bind, z2, true);
                Var x12 = nets.generate(2, bind, z1, true);
                Var x21 = nets.generate(1, bind, z2, true);
                Var mu121 = nets.encode_mu(2, bind, x12, true);
                Var mu212 = nets.encode_mu(1, bind, x21, true);
                Var z12 = nets.sample_code(tp, mu121, draw_eps(tp.value(mu121).shape));
                Var z21 = nets.sample_code(tp, mu212, draw_eps(tp.value(mu212).shape));
                Var x121 = nets.generate(1, bind, z12, true);
                Var x212 = nets.generate(2, bind, z21, true);

                Var vae1 = ops::add(tp, ops::mse(tp, x11, v1),
                                    ops::scale(tp, unit_kl(tp, mu1), cfg.lambda1));
                Var vae2 = ops::add(tp, ops::mse(tp, x22, v2),
                                    ops::scale(tp, unit_kl(tp, mu2), cfg.lambda1));
                Var gan1 = generator_gan_loss(tp, nets.discriminate(1, bind, x21));
                Var gan2 = generator_gan_loss(tp, nets.discriminate(2, bind, x12));
                Var cyc1 = ops::add(
                    tp,
                    ops::add(tp, ops::mse(tp, x121, v1),
                             ops::scale(tp, unit_kl(tp, mu1), cfg.lambda3)),
                    ops::scale(tp, unit_kl(tp, mu121), cfg.lambda4));
                Var cyc2 = ops::add(
                    tp,
                    ops::add(tp, ops::mse(tp, x212, v2),
                             ops::scale(tp, unit_kl(tp, mu2), cfg.lambda3)),
                    ops::scale(tp, unit_kl(tp, mu212), cfg.lambda4));
                Var total = ops::add(
                    tp,
                    ops::add(tp, ops::add(tp, vae1, vae2),
                             ops::scale(tp, ops::add(tp, gan1, gan2), cfg.lambda0)),
                    ops::add(tp, cyc1, cyc2));
                tp.backward(total);
                adam_eg.step(eg_params, grads_for(tp, bind, eg_params));

                rep.vae1 = tp.value(vae1).data[0];
                rep.vae2 = tp.value(vae2).data[0];
                rep.gan1 = tp.value(gan1).data[0];
                rep.gan2 = tp.value(gan2).data[0];
                rep.cycle1 = tp.value(cyc1).data[0];
                rep.cycle2 = tp.value(cyc2).data[0];
                double cm = 0;
                const auto& a = tp.value(x121).data;
                const auto& b = tp.value(v1).data;
                for (std::size_t i = 0; i < a.size(); ++i) cm += std::abs(a[i] - b[i]);
                rep.cycle_mae1 = cm / a.size();
            }

            rep.check_finite();
            if (iter % cfg.log_every == 0 || iter == 1 || iter == cfg.iterations) {
                result.log.push_back(rep);
                atomic_write(out_dir / "loss.csv", unit_loss_csv(result.log));
            }
            if (iter % 50 == 0 || iter == cfg.iterations)
                atomic_save_checkpoint(make_unit_checkpoint(nets, manifest.global_max_dose),
                                       out_dir / "final.ckpt");
        }
    } catch (const DivergenceError&) {
        result.diverged = true;
        atomic_write(out_dir / "loss.csv", unit_loss_csv(result.log));
        atomic_save_checkpoint(make_unit_checkpoint(nets, manifest.global_max_dose),
                               out_dir / "final.ckpt");
    }
    return result;
}

/// Translate a cGy image to the other domain (deterministic: eps = 0).
inline DoseImage unit_translate(UnitNetworks& nets, int from_domain, const DoseImage& input_cgy,
                                double global_max_dose, bool deterministic = true,
                                std::uint64_t noise_seed = 0) {
    DoseImage x = normalize(input_cgy, global_max_dose);
    Tape tp;
    ParamBinder bind(tp, false);
    Var xv = tp.leaf(pack_batch({&x}), false);
    Var mu = nets.encode_mu(from_domain, bind, xv, false);
    Tensor eps(tp.value(mu).shape);
    if (!deterministic) {
        Rng rng(noise_seed);
        for (double& v : eps.data) v = rng.normal();
    }
    Var z = nets.sample_code(tp, mu, eps);
    Var out = nets.generate(from_domain == 1 ? 2 : 1, bind, z, false);
    DoseImage result = unpack_image(tp.value(out), 0, nets.cfg.image_size);
    result = denormalize(result, global_max_dose);
    result.patient_id = input_cgy.patient_id;
    return result;
}

}  // namespace doseml
