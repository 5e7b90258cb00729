#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doseml/core/rng.hpp"
#include "doseml/data/dose_image.hpp"

namespace doseml {

enum class Split { Train, Val, Test };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        default: return "test";
    }
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw ArgumentError("unknown split name: " + s);
}

struct ManifestEntry {
    std::string patient_id;
    std::string predicted_path;  // relative to the manifest's directory
    std::string measured_path;
    Split split = Split::Train;
};

/// Description of a split dataset on disk.
struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    double global_max_dose = 0.0;
    std::uint64_t seed = 0;
    std::filesystem::path base_dir;  // set on load; not serialized

    std::vector<const ManifestEntry*> split_entries(Split s) const {
        std::vector<const ManifestEntry*> out;
        for (const auto& e : entries)
            if (e.split == s) out.push_back(&e);
        return out;
    }

    PairRecord load_pair(const ManifestEntry& e) const {
        PairRecord p;
        p.predicted = load_edm(base_dir / e.predicted_path);
        p.measured = load_edm(base_dir / e.measured_path);
        p.predicted.patient_id = p.measured.patient_id = p.patient_id = e.patient_id;
        return p;
    }

    void save(const std::filesystem::path& path) const {
        nlohmann::json j;
        j["global_max_dose"] = global_max_dose;
        j["seed"] = seed;
        j["entries"] = nlohmann::json::array();
        for (const auto& e : entries)
            j["entries"].push_back({{"patient_id", e.patient_id},
                                    {"predicted_path", e.predicted_path},
                                    {"measured_path", e.measured_path},
                                    {"split", to_string(e.split)}});
        std::ofstream f(path);
        if (!f) throw IoError("cannot write manifest " + path.string());
        f << j.dump(2) << "\n";
    }

    static DatasetManifest load(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot open manifest " + path.string());
        nlohmann::json j = nlohmann::json::parse(f);
        DatasetManifest m;
        m.global_max_dose = j.at("global_max_dose").get<double>();
        m.seed = j.value("seed", std::uint64_t{0});
        for (const auto& e : j.at("entries"))
            m.entries.push_back({e.at("patient_id").get<std::string>(),
                                 e.at("predicted_path").get<std::string>(),
                                 e.at("measured_path").get<std::string>(),
                                 split_from_string(e.at("split").get<std::string>())});
        m.base_dir = path.parent_path();
        return m;
    }
};

/// Assign splits at patient granularity with pair-count proportions as close
/// to the ratios as the patient grouping allows. No patient appears in more
/// than one split. Deterministic given the seed.
inline std::map<std::string, Split> split_patients(
    const std::vector<std::pair<std::string, int>>& patient_pair_counts, std::uint64_t seed,
    double train_ratio = 0.8, double val_ratio = 0.1) {
    if (patient_pair_counts.size() < 3)
        throw DataError("split requires at least 3 distinct patients");
    std::vector<std::pair<std::string, int>> patients = patient_pair_counts;
    std::sort(patients.begin(), patients.end());
    Rng rng(seed);
    std::shuffle(patients.begin(), patients.end(), rng.engine());

    long total = 0;
    for (const auto& [_, n] : patients) total += n;
    const double train_target = train_ratio * total;
    const double val_target = (train_ratio + val_ratio) * total;

    std::map<std::string, Split> out;
    long cum = 0;
    std::size_t i = 0;
    // Greedy fill; assigning a patient when it moves the cumulative count
    // closer to the boundary than stopping short would.
    for (; i < patients.size() - 2; ++i) {
        if (std::abs(cum + patients[i].second - train_target) > std::abs(cum - train_target)) break;
        out[patients[i].first] = Split::Train;
        cum += patients[i].second;
    }
    for (; i < patients.size() - 1; ++i) {
        if (std::abs(cum + patients[i].second - val_target) > std::abs(cum - val_target)) break;
        out[patients[i].first] = Split::Val;
        cum += patients[i].second;
    }
    for (; i < patients.size(); ++i) out[patients[i].first] = Split::Test;

    bool has_val = false, has_test = false;
    for (const auto& [_, s] : out) {
        has_val |= s == Split::Val;
        has_test |= s == Split::Test;
    }
    if (!has_val || !has_test) throw DataError("split produced an empty val or test set");
    return out;
}

}  // namespace doseml
