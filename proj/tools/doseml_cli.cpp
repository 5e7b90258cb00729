// Command-line front end: dataset generation, preprocessing, training,
// translation, evaluation, latent-space analysis, and report emission.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 I/O or data error,
// 4 training divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "doseml/data/synthetic.hpp"
#include "doseml/latent/collect.hpp"
#include "doseml/latent/tsne.hpp"
#include "doseml/metrics/ffd.hpp"
#include "doseml/metrics/ranking.hpp"
#include "doseml/metrics/records.hpp"
#include "doseml/unit/train.hpp"
#include "doseml/vae/train.hpp"

namespace fs = std::filesystem;
using namespace doseml;

namespace {

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

double parse_double_field(const std::string& s) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    return std::stod(s);
}

std::string sanitize_id(const std::string& id) {
    std::string out = id;
    for (char& c : out)
        if (c == '#' || c == '/' || c == '\\') c = '-';
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

void write_resolved_config(const fs::path& dir, const nlohmann::json& j) {
    atomic_write(dir / "resolved-config.json", j.dump(2) + "\n");
}

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    return nlohmann::json::parse(f);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

FieldSpec parse_degradation(const std::string& spec_str) {
    FieldSpec spec;
    if (spec_str.empty()) return spec;
    std::istringstream is(spec_str);
    std::string item;
    while (std::getline(is, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            throw ArgumentError("degradation item '" + item + "' is not key=value");
        const std::string key = item.substr(0, eq);
        const double val = std::stod(item.substr(eq + 1));
        if (key == "blur") spec.blur_sigma_px = val;
        else if (key == "noise") spec.noise_sigma_cgy = val;
        else if (key == "gain") spec.gain_amplitude = val;
        else if (key == "penumbra") spec.penumbra_px = val;
        else if (key == "peak-min") spec.peak_min_cgy = val;
        else if (key == "peak-max") spec.peak_max_cgy = val;
        else if (key == "archetypes") spec.archetypes = static_cast<int>(val);
        else throw ArgumentError("unknown degradation key '" + key + "'");
    }
    return spec;
}

int cmd_gen_data(const fs::path& out_dir, int pairs, int patients, int size, std::uint64_t seed,
                 const std::string& degradation) {
    if (pairs < patients || patients < 3)
        throw ArgumentError("gen-data requires pairs >= patients >= 3");
    const FieldSpec spec = parse_degradation(degradation);

    fs::create_directories(out_dir / "images");
    auto patient_of = [&](int i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "P%04d", i % patients);
        return std::string(buf);
    };

    DatasetManifest manifest;
    manifest.seed = seed;
    std::map<std::string, int> counts;
    double max_dose = 0.0;
    for (int i = 0; i < pairs; ++i) {
        const std::string pid = patient_of(i);
        PairRecord pair = generate_pair(mix_seed(seed, static_cast<std::uint64_t>(i) + 1), size,
                                        size, spec, pid);
        char pred_name[40], meas_name[40];
        std::snprintf(pred_name, sizeof(pred_name), "images/pair%04d_pred.edm", i);
        std::snprintf(meas_name, sizeof(meas_name), "images/pair%04d_meas.edm", i);
        save_edm(pair.predicted, out_dir / pred_name);
        save_edm(pair.measured, out_dir / meas_name);
        // The manifest maximum must bound the stored f32 values.
        for (double v : pair.predicted.values) max_dose = std::max(max_dose, double(float(v)));
        for (double v : pair.measured.values) max_dose = std::max(max_dose, double(float(v)));
        manifest.entries.push_back({pid, pred_name, meas_name, Split::Train});
        ++counts[pid];
    }
    manifest.global_max_dose = max_dose;

    std::vector<std::pair<std::string, int>> patient_counts(counts.begin(), counts.end());
    const std::map<std::string, Split> assignment = split_patients(patient_counts, seed);
    for (auto& e : manifest.entries) e.split = assignment.at(e.patient_id);
    manifest.save(out_dir / "manifest.json");

    write_resolved_config(out_dir, {{"command", "gen-data"},
                                    {"pairs", pairs},
                                    {"patients", patients},
                                    {"size", size},
                                    {"seed", seed},
                                    {"degradation",
                                     {{"blur", spec.blur_sigma_px},
                                      {"noise", spec.noise_sigma_cgy},
                                      {"gain", spec.gain_amplitude},
                                      {"penumbra", spec.penumbra_px},
                                      {"peak-min", spec.peak_min_cgy},
                                      {"peak-max", spec.peak_max_cgy},
                                      {"archetypes", spec.archetypes}}}});
    std::cout << "wrote " << pairs << " pairs (" << patients << " patients) to " << out_dir.string()
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

int cmd_preprocess(const fs::path& manifest_path, const fs::path& out_dir, int size,
                   double threshold, double ceiling) {
    const DatasetManifest in = DatasetManifest::load(manifest_path);
    fs::create_directories(out_dir / "images");
    DatasetManifest out;
    out.seed = in.seed;
    double max_dose = 0.0;
    int excluded = 0, index = 0;
    for (const auto& e : in.entries) {
        PairRecord pair = in.load_pair(e);
        CleanResult cp = clean(pair.predicted, ceiling);
        CleanResult cm = clean(pair.measured, ceiling);
        if (cp.excluded || cm.excluded) {
            ++excluded;
            continue;
        }
        pair.predicted = cp.image;
        pair.measured = cm.image;
        pair = crop_pair_to_field(pair, threshold);
        pair.predicted = resize(pair.predicted, size, size);
        pair.measured = resize(pair.measured, size, size);
        char pred_name[40], meas_name[40];
        std::snprintf(pred_name, sizeof(pred_name), "images/pair%04d_pred.edm", index);
        std::snprintf(meas_name, sizeof(meas_name), "images/pair%04d_meas.edm", index);
        ++index;
        save_edm(pair.predicted, out_dir / pred_name);
        save_edm(pair.measured, out_dir / meas_name);
        for (double v : pair.predicted.values) max_dose = std::max(max_dose, double(float(v)));
        for (double v : pair.measured.values) max_dose = std::max(max_dose, double(float(v)));
        out.entries.push_back({e.patient_id, pred_name, meas_name, e.split});
    }
    if (out.entries.empty()) throw DataError("preprocess excluded every pair");
    out.global_max_dose = max_dose;
    out.save(out_dir / "manifest.json");
    write_resolved_config(out_dir, {{"command", "preprocess"},
                                    {"manifest", manifest_path.string()},
                                    {"size", size},
                                    {"threshold", threshold},
                                    {"ceiling", ceiling}});
    std::cout << "preprocessed " << out.entries.size() << " pairs (" << excluded << " excluded)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const std::string& model, const fs::path& manifest_path, const fs::path& config_path,
              const fs::path& out_dir, std::optional<std::uint64_t> seed,
              std::optional<int> epochs_or_iters) {
    const DatasetManifest manifest = DatasetManifest::load(manifest_path);
    fs::create_directories(out_dir);
    const nlohmann::json cfg_json =
        config_path.empty() ? nlohmann::json::object() : read_json_file(config_path);

    if (model == "vae") {
        VaeConfig cfg = VaeConfig::from_json(cfg_json);
        if (seed) cfg.seed = *seed;
        if (epochs_or_iters) cfg.epochs = *epochs_or_iters;
        cfg.validate();
        write_resolved_config(out_dir, {{"command", "train"},
                                        {"model", "vae"},
                                        {"manifest", manifest_path.string()},
                                        {"vae", cfg.to_json()}});
        TrainResult result = train_vae(manifest, cfg, out_dir);
        if (result.diverged) {
            std::cerr << "training diverged; last checkpoint retained\n";
            return 4;
        }
        std::cout << "trained vae for " << result.history.size() << " epochs; best epoch "
                  << result.best_epoch << "\n";
        return 0;
    }
    if (model == "unit") {
        UnitConfig cfg = UnitConfig::from_json(cfg_json);
        if (seed) cfg.seed = *seed;
        if (epochs_or_iters) cfg.iterations = *epochs_or_iters;
        cfg.validate();
        write_resolved_config(out_dir, {{"command", "train"},
                                        {"model", "unit"},
                                        {"manifest", manifest_path.string()},
                                        {"unit", cfg.to_json()}});
        UnitTrainResult result = train_unit(manifest, cfg, out_dir);
        if (result.diverged) {
            std::cerr << "training diverged; last checkpoint retained\n";
            return 4;
        }
        std::cout << "trained unit for " << cfg.iterations << " iterations\n";
        return 0;
    }
    throw ArgumentError("unknown model '" + model + "' (expected vae or unit)");
}

// ---------------------------------------------------------------------------
// translate
// ---------------------------------------------------------------------------

/// Either model behind one interface: cGy image in, cGy image out.
struct Translator {
    std::optional<LoadedVae> vae;
    std::optional<UnitNetworks> unit;
    double global_max_dose = 0.0;

    explicit Translator(const Checkpoint& ck) {
        const std::string model = ck.config.value("model", "");
        global_max_dose = ck.config.at("global_max_dose").get<double>();
        if (model == "vae") {
            vae.emplace(ck);
        } else if (model == "unit") {
            unit.emplace(UnitConfig::from_json(ck.config.at("unit")));
            unit->load_state_dict(ck.tensors);
        } else {
            throw IoError("checkpoint has unknown model type '" + model + "'");
        }
    }

    DoseImage operator()(const DoseImage& input, int from_domain = 1, bool deterministic = true,
                         std::uint64_t noise_seed = 0) {
        if (vae) return translate(vae->model, input, global_max_dose, deterministic, noise_seed);
        return unit_translate(*unit, from_domain, input, global_max_dose, deterministic,
                              noise_seed);
    }
};

int cmd_translate(const fs::path& ckpt_path, const fs::path& input_path, const fs::path& out_path,
                  int from_domain, bool sampled, std::uint64_t noise_seed) {
    Translator tr(Checkpoint::load(ckpt_path));
    const DoseImage input = load_edm(input_path);
    save_edm(tr(input, from_domain, !sampled, noise_seed), out_path);
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

const char* kMetricsHeader =
    "sample_id,comparison,mae_cgy,psnr_db,ssim,rdd_in_pct,rdd_out_pct,add_in_cgy,add_out_cgy";

std::string record_row(const MetricsRecord& r) {
    std::ostringstream os;
    os << r.sample_id << "," << to_string(r.comparison) << "," << fmt(r.mae_cgy) << ","
       << fmt(r.psnr_db) << "," << fmt(r.ssim) << "," << fmt_opt(r.rdd_infield_pct) << ","
       << fmt_opt(r.rdd_outfield_pct) << "," << fmt_opt(r.add_infield_cgy) << ","
       << fmt_opt(r.add_outfield_cgy);
    return os.str();
}

MetricsRecord parse_record_row(const std::vector<std::string>& f) {
    if (f.size() != 9) throw DataError("metrics.csv row has wrong field count");
    MetricsRecord r;
    r.sample_id = f[0];
    if (f[1] == "input_vs_target") r.comparison = Comparison::InputVsTarget;
    else if (f[1] == "output_vs_target") r.comparison = Comparison::OutputVsTarget;
    else if (f[1] == "output_vs_input") r.comparison = Comparison::OutputVsInput;
    else throw DataError("unknown comparison '" + f[1] + "' in metrics.csv");
    r.mae_cgy = parse_double_field(f[2]);
    r.psnr_db = parse_double_field(f[3]);
    r.ssim = parse_double_field(f[4]);
    if (!f[5].empty()) r.rdd_infield_pct = parse_double_field(f[5]);
    if (!f[6].empty()) r.rdd_outfield_pct = parse_double_field(f[6]);
    if (!f[7].empty()) r.add_infield_cgy = parse_double_field(f[7]);
    if (!f[8].empty()) r.add_outfield_cgy = parse_double_field(f[8]);
    return r;
}

int cmd_evaluate(const fs::path& ckpt_path, const fs::path& manifest_path, const fs::path& out_dir,
                 const std::string& split_name, bool identity, int ffd_dim,
                 std::uint64_t ffd_seed) {
    const DatasetManifest manifest = DatasetManifest::load(manifest_path);
    const Split split = split_from_string(split_name);
    std::optional<Translator> tr;
    if (!identity) tr.emplace(Checkpoint::load(ckpt_path));
    fs::create_directories(out_dir / "images");

    const auto entries = manifest.split_entries(split);
    if (entries.empty()) throw DataError("evaluate: split '" + split_name + "' is empty");

    std::vector<MetricsRecord> records;
    std::ostringstream csv;
    csv << kMetricsHeader << "\n";
    int index = 0;
    for (const auto* e : entries) {
        PairRecord pair = manifest.load_pair(*e);
        const std::string sample_id = e->patient_id + "#" + std::to_string(index++);
        const DoseImage& input = pair.predicted;
        const DoseImage& target = pair.measured;
        const DoseImage output = identity ? input : (*tr)(input);

        const std::string base = sanitize_id(sample_id);
        save_edm(input, out_dir / "images" / (base + "_input.edm"));
        save_edm(output, out_dir / "images" / (base + "_output.edm"));
        save_edm(target, out_dir / "images" / (base + "_target.edm"));

        for (const MetricsRecord& r :
             {compute_record(sample_id, Comparison::InputVsTarget, input, target),
              compute_record(sample_id, Comparison::OutputVsTarget, output, target),
              compute_record(sample_id, Comparison::OutputVsInput, output, input)}) {
            records.push_back(r);
            csv << record_row(r) << "\n";
        }
    }
    atomic_write(out_dir / "metrics.csv", csv.str());

    // Summary: mean +- std per metric per comparison, then set-level Frechet
    // scores over the whole dataset (the set-level statistic is about the
    // distribution of images, not a per-sample quantity).
    std::ostringstream sum;
    sum << "comparison,metric,mean,std\n";
    for (Comparison c :
         {Comparison::InputVsTarget, Comparison::OutputVsTarget, Comparison::OutputVsInput}) {
        auto col = [&](auto getter) {
            std::vector<double> xs;
            for (const auto& r : records)
                if (r.comparison == c) {
                    if (auto v = getter(r)) xs.push_back(*v);
                }
            return mean_std(xs);
        };
        const std::pair<const char*, MeanStd> rows[] = {
            {"mae_cgy", col([](const MetricsRecord& r) { return std::optional<double>(r.mae_cgy); })},
            {"psnr_db", col([](const MetricsRecord& r) { return std::optional<double>(r.psnr_db); })},
            {"ssim", col([](const MetricsRecord& r) { return std::optional<double>(r.ssim); })},
            {"rdd_in_pct", col([](const MetricsRecord& r) { return r.rdd_infield_pct; })},
            {"rdd_out_pct", col([](const MetricsRecord& r) { return r.rdd_outfield_pct; })},
            {"add_in_cgy", col([](const MetricsRecord& r) { return r.add_infield_cgy; })},
            {"add_out_cgy", col([](const MetricsRecord& r) { return r.add_outfield_cgy; })},
        };
        for (const auto& [name, ms] : rows)
            sum << to_string(c) << "," << name << "," << fmt(ms.mean) << "," << fmt(ms.stddev)
                << "\n";
    }

    std::vector<DoseImage> all_inputs, all_targets, all_outputs;
    for (const auto& e : manifest.entries) {
        PairRecord pair = manifest.load_pair(e);
        all_outputs.push_back(identity ? pair.predicted : (*tr)(pair.predicted));
        all_inputs.push_back(std::move(pair.predicted));
        all_targets.push_back(std::move(pair.measured));
    }
    const FeatureExtractor extractor(ffd_seed, ffd_dim, std::max(688.0, manifest.global_max_dose));
    if (all_inputs.size() >= static_cast<std::size_t>(ffd_dim) + 1) {
        sum << "input_vs_target,ffd," << fmt(frechet_feature_distance(all_inputs, all_targets, extractor)) << ",\n";
        sum << "output_vs_target,ffd," << fmt(frechet_feature_distance(all_outputs, all_targets, extractor)) << ",\n";
        sum << "output_vs_input,ffd," << fmt(frechet_feature_distance(all_outputs, all_inputs, extractor)) << ",\n";
    } else {
        std::cerr << "dataset smaller than ffd-dim+1; Frechet rows omitted\n";
    }
    atomic_write(out_dir / "summary.csv", sum.str());

    write_resolved_config(out_dir, {{"command", "evaluate"},
                                    {"model", identity ? "identity" : ckpt_path.string()},
                                    {"manifest", manifest_path.string()},
                                    {"split", split_name},
                                    {"identity", identity},
                                    {"ffd_dim", ffd_dim},
                                    {"ffd_seed", ffd_seed}});
    std::cout << "evaluated " << entries.size() << " samples\n";
    return 0;
}

// ---------------------------------------------------------------------------
// latent
// ---------------------------------------------------------------------------

LatentSet collect_unit_latents(UnitNetworks& nets, const DatasetManifest& manifest, Split split) {
    std::vector<NormalizedPair> samples = load_normalized_split(manifest, split);
    LatentSet set;
    for (auto& s : samples) {
        Tape tp;
        ParamBinder bind(tp, false);
        Var x = tp.leaf(pack_batch({&s.input}), false);
        Var mu = nets.encode_mu(1, bind, x, false);
        const auto& row = tp.value(mu).data;
        set.d = static_cast<int>(row.size());
        set.data.insert(set.data.end(), row.begin(), row.end());
        set.sample_ids.push_back(s.sample_id);
        ++set.n;
    }
    if (set.n < 2) throw DataError("latent: split has fewer than 2 samples");
    return set;
}

int cmd_latent(const fs::path& ckpt_path, const fs::path& manifest_path, const fs::path& out_dir,
               const std::string& split_name, bool sampled, int k_min, int k_max,
               double perplexity, int tsne_iters, std::uint64_t seed) {
    const DatasetManifest manifest = DatasetManifest::load(manifest_path);
    const Split split = split_from_string(split_name);
    const Checkpoint ck = Checkpoint::load(ckpt_path);
    fs::create_directories(out_dir);

    LatentSet latents;
    if (ck.config.value("model", "") == "vae") {
        LoadedVae vae(ck);
        latents = collect_latents(vae.model, manifest, split, sampled, mix_seed(seed, 0x77));
    } else if (ck.config.value("model", "") == "unit") {
        UnitNetworks nets(UnitConfig::from_json(ck.config.at("unit")));
        nets.load_state_dict(ck.tensors);
        latents = collect_unit_latents(nets, manifest, split);
    } else {
        throw IoError("checkpoint has unknown model type");
    }

    const KSelection sel = select_k(latents, k_min, std::min(k_max, latents.n), seed);
    std::ostringstream ks;
    ks << "K,mean_silhouette\n";
    for (const auto& [k, s] : sel.scores) ks << k << "," << fmt(s) << "\n";
    atomic_write(out_dir / "kselect.csv", ks.str());

    const std::vector<double> sil = silhouette(latents, sel.clustering);
    std::ostringstream cs;
    cs << "sample_id,cluster_label,silhouette\n";
    for (int i = 0; i < latents.n; ++i)
        cs << latents.sample_ids[i] << "," << sel.clustering.assignments[i] << "," << fmt(sil[i])
           << "\n";
    atomic_write(out_dir / "clusters.csv", cs.str());

    const TsneResult emb = tsne_embed(latents, perplexity, tsne_iters, mix_seed(seed, 0x7E));
    std::ostringstream es;
    es << "sample_id,tsne_x,tsne_y\n";
    for (int i = 0; i < latents.n; ++i)
        es << latents.sample_ids[i] << "," << fmt(emb.coords[2 * i]) << ","
           << fmt(emb.coords[2 * i + 1]) << "\n";
    atomic_write(out_dir / "embedding.csv", es.str());

    write_resolved_config(out_dir, {{"command", "latent"},
                                    {"model", ckpt_path.string()},
                                    {"manifest", manifest_path.string()},
                                    {"split", split_name},
                                    {"sampled", sampled},
                                    {"k_min", k_min},
                                    {"k_max", k_max},
                                    {"perplexity", perplexity},
                                    {"tsne_iterations", tsne_iters},
                                    {"seed", seed}});
    std::cout << "selected K=" << sel.best_k << " over " << latents.n << " latents\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// 16-bit binary PGM (big-endian sample order per the format).
void save_pgm16(const DoseImage& img, double cgy_per_level, const fs::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << "P5\n" << img.width << " " << img.height << "\n65535\n";
    for (double v : img.values) {
        long level = std::lround(v / cgy_per_level);
        level = std::clamp(level, 0L, 65535L);
        const unsigned char hi = static_cast<unsigned char>(level >> 8);
        const unsigned char lo = static_cast<unsigned char>(level & 0xFF);
        f.put(static_cast<char>(hi));
        f.put(static_cast<char>(lo));
    }
    if (!f) throw IoError("short write on " + path.string());
}

void write_profiles(const DoseImage& img, const fs::path& path_base) {
    const DoseProfiles p = dose_profiles(img);
    std::ostringstream cross, inl;
    cross << "index,dose_cgy\n";
    for (std::size_t i = 0; i < p.crossline.size(); ++i)
        cross << i << "," << fmt(p.crossline[i]) << "\n";
    inl << "index,dose_cgy\n";
    for (std::size_t i = 0; i < p.inline_.size(); ++i) inl << i << "," << fmt(p.inline_[i]) << "\n";
    atomic_write(path_base.string() + "_crossline.csv", cross.str());
    atomic_write(path_base.string() + "_inline.csv", inl.str());
}

int cmd_report(const fs::path& metrics_dir, const fs::path& out_dir) {
    std::ifstream f(metrics_dir / "metrics.csv");
    if (!f) throw IoError("cannot open " + (metrics_dir / "metrics.csv").string());
    std::string line;
    std::getline(f, line);  // header
    std::vector<MetricsRecord> output_vs_target;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        MetricsRecord r = parse_record_row(split_csv_line(line));
        if (r.comparison == Comparison::OutputVsTarget) output_vs_target.push_back(r);
    }
    if (output_vs_target.empty()) throw DataError("metrics.csv has no output_vs_target rows");
    fs::create_directories(out_dir);

    std::string best_id, worst_id;
    std::ostringstream rank_csv;
    rank_csv << "rank,sample_id,composite_score\n";
    if (output_vs_target.size() == 1) {
        best_id = worst_id = output_vs_target[0].sample_id;
        rank_csv << "1," << best_id << "," << fmt(0.5) << "\n";
    } else {
        const CompositeRanking ranking = composite_rank(output_vs_target);
        best_id = ranking.best_id;
        worst_id = ranking.worst_id;
        int rank = 1;
        for (const auto& r : ranking.ordered)
            rank_csv << rank++ << "," << r.sample_id << "," << fmt(r.composite_score) << "\n";
    }
    atomic_write(out_dir / "ranking.csv", rank_csv.str());

    // Image dumps for the best and worst samples, on one shared dose scale.
    const char* roles[] = {"input", "output", "target"};
    std::map<std::string, DoseImage> images;
    double max_dose = 0.0;
    for (const std::string& id : {best_id, worst_id})
        for (const char* role : roles) {
            const fs::path src =
                metrics_dir / "images" / (sanitize_id(id) + "_" + role + ".edm");
            DoseImage img = load_edm(src);
            max_dose = std::max(max_dose, img.max_value());
            images.emplace(sanitize_id(id) + "_" + role, std::move(img));
        }
    const double cgy_per_level = max_dose > 0.0 ? max_dose / 65535.0 : 1.0;
    atomic_write(out_dir / "scale.txt", fmt(cgy_per_level) + "\n");
    for (const auto& [name, img] : images) {
        const char* kind = best_id == worst_id                     ? "best"
                           : name.rfind(sanitize_id(best_id), 0) == 0 ? "best"
                                                                      : "worst";
        (void)kind;
        save_pgm16(img, cgy_per_level, out_dir / (name + ".pgm"));
        write_profiles(img, out_dir / name);
    }

    nlohmann::json rj = {{"best_id", best_id},
                         {"worst_id", worst_id},
                         {"scale_cgy_per_level", cgy_per_level}};
    atomic_write(out_dir / "report.json", rj.dump(2) + "\n");
    write_resolved_config(out_dir,
                          {{"command", "report"}, {"metrics", metrics_dir.string()}});
    std::cout << "best " << best_id << ", worst " << worst_id << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dose-image translation pipelines: data, training, evaluation, reports"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic paired dataset");
    std::string gen_out, gen_degradation;
    int gen_pairs = 200, gen_patients = 50, gen_size = 64;
    std::uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out)->required();
    gen->add_option("--pairs", gen_pairs);
    gen->add_option("--patients", gen_patients);
    gen->add_option("--size", gen_size);
    gen->add_option("--seed", gen_seed);
    gen->add_option("--degradation", gen_degradation,
                    "key=value list: blur,noise,gain,penumbra,peak-min,peak-max,archetypes");

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "Clean, crop to field, resize a dataset");
    std::string pre_manifest, pre_out;
    int pre_size = 64;
    double pre_threshold = 0.05, pre_ceiling = 10000.0;
    pre->add_option("--manifest", pre_manifest)->required();
    pre->add_option("--out", pre_out)->required();
    pre->add_option("--size", pre_size);
    pre->add_option("--threshold", pre_threshold);
    pre->add_option("--ceiling", pre_ceiling);

    // train
    auto* tr = app.add_subcommand("train", "Train a translation model");
    std::string tr_model, tr_manifest, tr_config, tr_out;
    std::uint64_t tr_seed = 0;
    int tr_steps = 0;
    bool tr_has_seed = false, tr_has_steps = false;
    tr->add_option("--model", tr_model)->required()->check(CLI::IsMember({"vae", "unit"}));
    tr->add_option("--manifest", tr_manifest)->required();
    tr->add_option("--config", tr_config);
    tr->add_option("--out", tr_out)->required();
    tr->add_option("--seed", tr_seed)->each([&](const std::string&) { tr_has_seed = true; });
    tr->add_option("--steps", tr_steps, "Override epochs (vae) / iterations (unit)")
        ->each([&](const std::string&) { tr_has_steps = true; });

    // translate
    auto* xl = app.add_subcommand("translate", "Translate one dose image");
    std::string xl_model, xl_input, xl_out;
    int xl_domain = 1;
    bool xl_sampled = false;
    std::uint64_t xl_noise_seed = 0;
    xl->add_option("--model", xl_model)->required();
    xl->add_option("--input", xl_input)->required();
    xl->add_option("--out", xl_out)->required();
    xl->add_option("--from-domain", xl_domain);
    xl->add_flag("--sampled", xl_sampled);
    xl->add_option("--noise-seed", xl_noise_seed);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Per-sample metrics and set-level summary");
    std::string ev_model, ev_manifest, ev_out, ev_split = "test";
    bool ev_identity = false;
    int ev_ffd_dim = 64;
    std::uint64_t ev_ffd_seed = 7;
    ev->add_option("--model", ev_model);
    ev->add_option("--manifest", ev_manifest)->required();
    ev->add_option("--out", ev_out)->required();
    ev->add_option("--split", ev_split);
    ev->add_flag("--identity", ev_identity, "Evaluate the identity model (output := input)");
    ev->add_option("--ffd-dim", ev_ffd_dim);
    ev->add_option("--ffd-seed", ev_ffd_seed);

    // latent
    auto* la = app.add_subcommand("latent", "Latent clustering, K selection, t-SNE embedding");
    std::string la_model, la_manifest, la_out, la_split = "test";
    bool la_sampled = false;
    int la_kmin = 2, la_kmax = 8, la_tsne_iters = 1000;
    double la_perplexity = 30.0;
    std::uint64_t la_seed = 0;
    la->add_option("--model", la_model)->required();
    la->add_option("--manifest", la_manifest)->required();
    la->add_option("--out", la_out)->required();
    la->add_option("--split", la_split);
    la->add_flag("--sampled", la_sampled);
    la->add_option("--kmin", la_kmin);
    la->add_option("--kmax", la_kmax);
    la->add_option("--perplexity", la_perplexity);
    la->add_option("--tsne-iters", la_tsne_iters);
    la->add_option("--seed", la_seed);

    // report
    auto* rp = app.add_subcommand("report", "Best/worst panels, profiles, image dumps");
    std::string rp_metrics, rp_out;
    rp->add_option("--metrics", rp_metrics)->required();
    rp->add_option("--out", rp_out)->required();

    try {
        app.parse(argc, argv);
        if (*gen)
            return cmd_gen_data(gen_out, gen_pairs, gen_patients, gen_size, gen_seed,
                                gen_degradation);
        if (*pre) return cmd_preprocess(pre_manifest, pre_out, pre_size, pre_threshold, pre_ceiling);
        if (*tr)
            return cmd_train(tr_model, tr_manifest, tr_config, tr_out,
                             tr_has_seed ? std::optional<std::uint64_t>(tr_seed) : std::nullopt,
                             tr_has_steps ? std::optional<int>(tr_steps) : std::nullopt);
        if (*xl) return cmd_translate(xl_model, xl_input, xl_out, xl_domain, xl_sampled,
                                      xl_noise_seed);
        if (*ev) {
            if (!ev_identity && ev_model.empty())
                throw ArgumentError("evaluate requires --model or --identity");
            return cmd_evaluate(ev_model, ev_manifest, ev_out, ev_split, ev_identity, ev_ffd_dim,
                                ev_ffd_seed);
        }
        if (*la)
            return cmd_latent(la_model, la_manifest, la_out, la_split, la_sampled, la_kmin,
                              la_kmax, la_perplexity, la_tsne_iters, la_seed);
        if (*rp) return cmd_report(rp_metrics, rp_out);
        return 2;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    } catch (const ArgumentError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
