#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doseml/core/error.hpp"
#include "doseml/core/tensor.hpp"

namespace doseml {

/// CKPT1 container: u64 little-endian header length, JSON header, then raw
/// little-endian f64 values concatenated in header order. The header carries
/// the format tag, a config snapshot, and one {name, shape, dtype} entry per
/// tensor. Tensors are kept in name order so files are byte-stable.
class Checkpoint {
public:
    std::map<std::string, Tensor> tensors;
    nlohmann::json config;

    void save(const std::filesystem::path& path) const {
        nlohmann::json header;
        header["format"] = "CKPT1";
        header["config"] = config.is_null() ? nlohmann::json::object() : config;
        nlohmann::json list = nlohmann::json::array();
        for (const auto& [name, t] : tensors)
            list.push_back({{"name", name}, {"shape", t.shape}, {"dtype", "f64"}});
        header["tensors"] = list;
        const std::string hs = header.dump();

        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot write checkpoint " + path.string());
        const std::uint64_t len = hs.size();
        f.write(reinterpret_cast<const char*>(&len), sizeof(len));
        f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (const auto& [name, t] : tensors)
            f.write(reinterpret_cast<const char*>(t.data.data()),
                    static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!f) throw IoError("short write on checkpoint " + path.string());
    }

    static Checkpoint load(const std::filesystem::path& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open checkpoint " + path.string());
        std::uint64_t len = 0;
        f.read(reinterpret_cast<char*>(&len), sizeof(len));
        std::string hs(len, '\0');
        f.read(hs.data(), static_cast<std::streamsize>(len));
        if (!f) throw IoError("truncated checkpoint header in " + path.string());
        nlohmann::json header = nlohmann::json::parse(hs);
        if (header.value("format", "") != "CKPT1")
            throw IoError("not a CKPT1 file: " + path.string());
        Checkpoint ck;
        ck.config = header.value("config", nlohmann::json::object());
        for (const auto& e : header.at("tensors")) {
            std::vector<int> shape = e.at("shape").get<std::vector<int>>();
            Tensor t(shape);
            f.read(reinterpret_cast<char*>(t.data.data()),
                   static_cast<std::streamsize>(t.data.size() * sizeof(double)));
            if (!f) throw IoError("truncated tensor data in " + path.string());
            ck.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
        }
        return ck;
    }
};

}  // namespace doseml
