#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "doseml/data/manifest.hpp"
#include "doseml/data/preprocess.hpp"
#include "doseml/vae/model.hpp"

namespace doseml {

/// Write-then-rename so readers never see a half-written file.
inline void atomic_write(const std::filesystem::path& path, const std::string& contents) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write " + tmp.string());
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    }
    std::filesystem::rename(tmp, path);
}

inline void atomic_save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    ck.save(tmp);
    std::filesystem::rename(tmp, path);
}

/// One normalized training sample; values in [-1, 1].
struct NormalizedPair {
    DoseImage input;   // predicted
    DoseImage target;  // measured
    std::string sample_id;
};

inline std::vector<NormalizedPair> load_normalized_split(const DatasetManifest& manifest,
                                                         Split split) {
    std::vector<NormalizedPair> out;
    int index = 0;
    for (const auto* e : manifest.split_entries(split)) {
        PairRecord p = manifest.load_pair(*e);
        NormalizedPair s;
        s.input = normalize(p.predicted, manifest.global_max_dose);
        s.target = normalize(p.measured, manifest.global_max_dose);
        s.sample_id = e->patient_id + "#" + std::to_string(index++);
        out.push_back(std::move(s));
    }
    return out;
}

/// Pack images (already normalized) into a [N, 1, S, S] batch tensor.
inline Tensor pack_batch(const std::vector<const DoseImage*>& images) {
    const int n = static_cast<int>(images.size());
    const int h = images[0]->height, w = images[0]->width;
    Tensor t({n, 1, h, w});
    for (int i = 0; i < n; ++i) {
        if (images[i]->height != h || images[i]->width != w)
            throw ShapeError("pack_batch: mixed image sizes");
        std::copy(images[i]->values.begin(), images[i]->values.end(),
                  t.data.begin() + static_cast<std::size_t>(i) * h * w);
    }
    return t;
}

inline DoseImage unpack_image(const Tensor& t, int index, int image_size) {
    DoseImage img(image_size, image_size);
    const std::size_t off = static_cast<std::size_t>(index) * image_size * image_size;
    std::copy(t.data.begin() + off, t.data.begin() + off + img.values.size(), img.values.begin());
    return img;
}

struct EpochLoss {
    int epoch = 0;
    VaeLossReport train, val;
};

struct TrainResult {
    std::vector<EpochLoss> history;
    int best_epoch = -1;
    double best_val_total = 0.0;
    bool diverged = false;
};

inline Checkpoint make_vae_checkpoint(const VaeModel& model, double global_max_dose) {
    Checkpoint ck;
    ck.tensors = model.state_dict();
    ck.config = {{"model", "vae"}, {"vae", model.cfg.to_json()}, {"global_max_dose", global_max_dose}};
    return ck;
}

inline std::string loss_csv(const std::vector<EpochLoss>& history) {
    std::ostringstream os;
    os << "epoch,train_total,train_rec,train_kl,val_total,val_rec,val_kl\n";
    os.setf(std::ios::scientific);
    os.precision(10);
    for (const auto& e : history)
        os << e.epoch << "," << e.train.total << "," << e.train.reconstruction << ","
           << e.train.kl << "," << e.val.total << "," << e.val.reconstruction << "," << e.val.kl
           << "\n";
    return os.str();
}

/// Mean loss over a split in eval mode (running batch-norm stats, eps = 0),
/// no augmentation.
inline VaeLossReport evaluate_split(VaeModel& model, const std::vector<NormalizedPair>& samples) {
    VaeLossReport acc;
    acc.beta = model.cfg.beta;
    long total_n = 0;
    for (std::size_t start = 0; start < samples.size();
         start += static_cast<std::size_t>(model.cfg.batch_size)) {
        const std::size_t end =
            std::min(samples.size(), start + static_cast<std::size_t>(model.cfg.batch_size));
        std::vector<const DoseImage*> ins, tgts;
        for (std::size_t i = start; i < end; ++i) {
            ins.push_back(&samples[i].input);
            tgts.push_back(&samples[i].target);
        }
        Tape tp;
        ParamBinder bind(tp, false);
        Var x = tp.leaf(pack_batch(ins), false);
        Var t = tp.leaf(pack_batch(tgts), false);
        EncoderStatsVars stats = model.encode(bind, x, false);
        Var z = model.reparameterize(tp, stats, Tensor(tp.value(stats.mu).shape));
        Var out = model.decode(bind, z, false);
        VaeLossVars lv = vae_loss(tp, out, t, stats, model.cfg.beta);
        VaeLossReport r = report_loss(tp, lv, model.cfg.beta);
        const long n = static_cast<long>(end - start);
        acc.total += r.total * n;
        acc.reconstruction += r.reconstruction * n;
        acc.kl += r.kl * n;
        total_n += n;
    }
    if (total_n > 0) {
        acc.total /= total_n;
        acc.reconstruction /= total_n;
        acc.kl /= total_n;
    }
    return acc;
}

/// Full training loop: seeded shuffled mini-batches with augmentation, Adam
/// updates, per-epoch validation in eval mode, best-validation checkpoint
/// retained alongside the final parameters. On divergence the last per-epoch
/// checkpoint stays on disk.
inline TrainResult train_vae(const DatasetManifest& manifest, const VaeConfig& config,
                             const std::filesystem::path& out_dir) {
    VaeConfig cfg = config;
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    std::vector<NormalizedPair> train_set = load_normalized_split(manifest, Split::Train);
    std::vector<NormalizedPair> val_set = load_normalized_split(manifest, Split::Val);
    if (train_set.empty() || val_set.empty())
        throw DataError("train_vae: manifest needs nonempty train and val splits");

    VaeModel model(cfg);
    Adam adam(cfg.learning_rate);
    std::vector<ParamPtr> params = model.parameters();

    TrainResult result;
    try {
        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            Rng shuffle_rng(mix_seed(cfg.seed, 0x5F00 + static_cast<std::uint64_t>(epoch)));
            std::vector<std::size_t> order(train_set.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
            Rng noise_rng(mix_seed(cfg.seed, 0xE000 + static_cast<std::uint64_t>(epoch)));

            VaeLossReport train_acc;
            train_acc.beta = cfg.beta;
            long seen = 0;
            for (std::size_t start = 0; start < order.size();
                 start += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t end =
                    std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
                std::vector<DoseImage> ins, tgts;
                for (std::size_t i = start; i < end; ++i) {
                    const NormalizedPair& s = train_set[order[i]];
                    const std::uint64_t aug_seed =
                        mix_seed(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)), order[i]);
                    const Augmentation a = sample_augmentation(aug_seed);
                    ins.push_back(apply_augmentation(s.input, a));
                    tgts.push_back(apply_augmentation(s.target, a));
                }
                std::vector<const DoseImage*> inp, tgp;
                for (const auto& im : ins) inp.push_back(&im);
                for (const auto& im : tgts) tgp.push_back(&im);

                Tape tp;
                ParamBinder bind(tp);
                Var x = tp.leaf(pack_batch(inp), false);
                Var t = tp.leaf(pack_batch(tgp), false);
                EncoderStatsVars stats = model.encode(bind, x, true);
                Tensor eps = Tensor::randn(tp.value(stats.mu).shape, noise_rng);
                Var z = model.reparameterize(tp, stats, eps);
                Var out = model.decode(bind, z, true);
                VaeLossVars lv = vae_loss(tp, out, t, stats, cfg.beta);
                VaeLossReport r = report_loss(tp, lv, cfg.beta);
                tp.backward(lv.total);

                std::vector<const std::vector<double>*> grads;
                grads.reserve(params.size());
                for (const auto& p : params) {
                    tp.ensure_grad(bind(p).idx);
                    grads.push_back(&tp.grad(bind(p)));
                }
                adam.step(params, grads);

                const long n = static_cast<long>(end - start);
                train_acc.total += r.total * n;
                train_acc.reconstruction += r.reconstruction * n;
                train_acc.kl += r.kl * n;
                seen += n;
            }
            train_acc.total /= seen;
            train_acc.reconstruction /= seen;
            train_acc.kl /= seen;

            VaeLossReport val = evaluate_split(model, val_set);
            result.history.push_back({epoch, train_acc, val});

            atomic_save_checkpoint(make_vae_checkpoint(model, manifest.global_max_dose),
                                   out_dir / "final.ckpt");
            if (result.best_epoch < 0 || val.total < result.best_val_total) {
                result.best_epoch = epoch;
                result.best_val_total = val.total;
                atomic_save_checkpoint(make_vae_checkpoint(model, manifest.global_max_dose),
                                       out_dir / "best.ckpt");
            }
            atomic_write(out_dir / "loss.csv", loss_csv(result.history));
        }
    } catch (const DivergenceError&) {
        result.diverged = true;
        atomic_write(out_dir / "loss.csv", loss_csv(result.history));
        if (result.history.empty()) throw;  // nothing trained; no good checkpoint exists
    }
    return result;
}

/// Load a trained VAE and its normalization scale from a CKPT1 file.
struct LoadedVae {
    VaeModel model;
    double global_max_dose = 0.0;

    explicit LoadedVae(const Checkpoint& ck)
        : model(VaeConfig::from_json(ck.config.at("vae"))),
          global_max_dose(ck.config.at("global_max_dose").get<double>()) {
        model.load_state_dict(ck.tensors);
    }
};

/// encode -> reparameterize -> decode -> denormalize. Deterministic mode
/// uses eps = 0; sampled mode draws seeded noise.
inline DoseImage translate(VaeModel& model, const DoseImage& input_cgy, double global_max_dose,
                           bool deterministic = true, std::uint64_t noise_seed = 0) {
    if (input_cgy.height != model.cfg.image_size || input_cgy.width != model.cfg.image_size)
        throw ShapeError("translate: input size does not match checkpoint config");
    DoseImage x = normalize(input_cgy, global_max_dose);
    Tape tp;
    ParamBinder bind(tp, false);
    Var xv = tp.leaf(pack_batch({&x}), false);
    EncoderStatsVars stats = model.encode(bind, xv, false);
    Tensor eps(tp.value(stats.mu).shape);
    if (!deterministic) {
        Rng rng(noise_seed);
        for (double& v : eps.data) v = rng.normal();
    }
    Var z = model.reparameterize(tp, stats, eps);
    Var out = model.decode(bind, z, false);
    DoseImage result = unpack_image(tp.value(out), 0, model.cfg.image_size);
    result = denormalize(result, global_max_dose);
    result.patient_id = input_cgy.patient_id;
    return result;
}

}  // namespace doseml
