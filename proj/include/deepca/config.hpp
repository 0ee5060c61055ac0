#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "deepca/learning.hpp"
#include "deepca/model.hpp"

namespace deepca::config {

using nlohmann::json;

json parse_file(const std::filesystem::path& path);

// Schema validation before any computation; unknown keys are rejected.
// Sections: model (layers, penalties), train, data (generator + params),
// run (T lists, seeds, output directory, experiment knobs).
void validate(const json& cfg);

// Builds the model declared in cfg["model"] for the given input shape.
// Weights are Gaussian, scaled by 1/sqrt(fan-in); dense overcomplete
// layers get their rows orthonormalized unless model.orthonormal_init is
// false. Deterministic in init_seed.
Model build_model(const json& model_cfg, const std::vector<std::size_t>& input_shape,
                  std::uint64_t init_seed);

struct GeneratedData {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> input_shape;
  Tensor dictionary;  // sparse_dictionary generator only
};

// Instantiates cfg["data"]. seed_override, when nonzero, replaces the
// seed recorded in the config (used by multi-seed experiment sweeps).
GeneratedData build_data(const json& data_cfg, std::uint64_t seed_override = 0);

TrainConfig build_train_config(const json& train_cfg);

}  // namespace deepca::config
