#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "lporec/model.hpp"
#include "lporec/trainer.hpp"

namespace lporec {

enum class Precision : uint8_t { f32, f64 };

inline const char* precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

// Fully materialized run configuration, assembled from a preset plus a flat
// `key = value` config file. Unknown keys are rejected. `to_text()` echoes
// every key so a run can be reproduced from its own output.
struct RunConfig {
    std::string preset = "desk";
    uint64_t seed = 0;
    std::string out_dir;
    std::string data_dir;
    Precision precision = Precision::f32;
    ModelDims dims;  // num_items stays 0 until a catalog is loaded
    TrainConfig train;

    static RunConfig preset_config(const std::string& name);
    static RunConfig from_file(const std::filesystem::path& path);
    static RunConfig from_text(const std::string& text);

    void apply_kv(const std::string& key, const std::string& value);
    std::string to_text() const;
    void save(const std::filesystem::path& path) const;
};

}  // namespace lporec
