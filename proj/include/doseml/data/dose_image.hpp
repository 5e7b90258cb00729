#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doseml/core/error.hpp"

namespace doseml {

/// 2-D matrix of dose values in cGy. The unit of all I/O and metrics.
struct DoseImage {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // row-major
    std::string patient_id;

    DoseImage() = default;
    DoseImage(int h, int w, std::string pid = {})
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0.0),
          patient_id(std::move(pid)) {}

    double& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
    long numel() const { return static_cast<long>(values.size()); }

    double max_value() const {
        double m = 0.0;
        for (double v : values)
            if (v > m) m = v;
        return m;
    }
};

/// Predicted/measured image pair for one patient.
struct PairRecord {
    DoseImage predicted;
    DoseImage measured;
    std::string patient_id;
};

/// EDM1 dose matrix file: magic "EDM1", u32 LE height, u32 LE width, then
/// height*width f32 LE values row-major (cGy).
inline void save_edm(const DoseImage& img, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f.write("EDM1", 4);
    const std::uint32_t h = static_cast<std::uint32_t>(img.height);
    const std::uint32_t w = static_cast<std::uint32_t>(img.width);
    f.write(reinterpret_cast<const char*>(&h), 4);
    f.write(reinterpret_cast<const char*>(&w), 4);
    std::vector<float> buf(img.values.begin(), img.values.end());
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw IoError("short write on " + path.string());
}

inline DoseImage load_edm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "EDM1", 4) != 0)
        throw IoError("not an EDM1 file: " + path.string());
    std::uint32_t h = 0, w = 0;
    f.read(reinterpret_cast<char*>(&h), 4);
    f.read(reinterpret_cast<char*>(&w), 4);
    if (!f || h == 0 || w == 0) throw IoError("bad EDM1 dimensions in " + path.string());
    DoseImage img(static_cast<int>(h), static_cast<int>(w));
    std::vector<float> buf(img.values.size());
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw IoError("truncated EDM1 data in " + path.string());
    for (std::size_t i = 0; i < buf.size(); ++i) img.values[i] = buf[i];
    return img;
}

}  // namespace doseml
