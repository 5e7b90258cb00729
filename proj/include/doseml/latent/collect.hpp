#pragma once

#include "doseml/latent/kmeans.hpp"
#include "doseml/vae/train.hpp"

namespace doseml {

/// Posterior means (deterministic mode) for every sample of a split, in
/// manifest order. Sampled mode draws one z per sample instead.
inline LatentSet collect_latents(VaeModel& model, const DatasetManifest& manifest, Split split,
                                 bool sampled = false, std::uint64_t noise_seed = 0) {
    std::vector<NormalizedPair> samples = load_normalized_split(manifest, split);
    LatentSet set;
    set.d = model.cfg.resolved_latent_dim();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Tape tp;
        ParamBinder bind(tp, false);
        Var x = tp.leaf(pack_batch({&samples[i].input}), false);
        EncoderStatsVars stats = model.encode(bind, x, false);
        std::vector<double> row;
        if (sampled) {
            Rng rng(mix_seed(noise_seed, i));
            Tensor eps(tp.value(stats.mu).shape);
            for (double& v : eps.data) v = rng.normal();
            Var z = model.reparameterize(tp, stats, eps);
            row = tp.value(z).data;
        } else {
            row = tp.value(stats.mu).data;
        }
        set.data.insert(set.data.end(), row.begin(), row.end());
        set.sample_ids.push_back(samples[i].sample_id);
        ++set.n;
    }
    if (set.n < 2) throw DataError("collect_latents: split has fewer than 2 samples");
    return set;
}

}  // namespace doseml
