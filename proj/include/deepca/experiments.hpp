#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "deepca/learning.hpp"
#include "deepca/model.hpp"
#include "deepca/rng.hpp"

namespace deepca::experiments {

using nlohmann::json;

// Worker count for trial/batch parallelism: requested (0 = hardware),
// capped by the DEEPCA_THREADS environment variable when set.
std::size_t worker_cap(std::size_t requested);

struct RandomModelOptions {
  std::size_t max_layers = 3;
  bool allow_conv = true;
  bool force_biased_relu = false;  // every penalty nonneg_l1 (biased ReLU)
  bool learnable_bias = false;
};

// Small random layer chains for gradient checks and equivalence sweeps.
Model make_random_model(Rng& rng, const RandomModelOptions& opts);
Tensor random_input(Rng& rng, const Model& model);

struct GradcheckParamReport {
  std::size_t model_index = 0;
  std::size_t iterations = 0;
  std::string param;
  double max_err = 0.0;  // |ad - fd| / (1 + |fd|), elementwise max
};

struct GradcheckResult {
  bool pass = true;
  double worst_err = 0.0;
  std::vector<GradcheckParamReport> reports;
};

GradcheckResult run_gradcheck(const json& cfg, const std::filesystem::path& out_dir);

struct ExplainingAwayResult {
  std::size_t trials = 0;
  std::size_t wins = 0;  // optimized strictly sparser at <= reconstruction error
};

ExplainingAwayResult run_demo_explaining_away(const json& cfg,
                                              const std::filesystem::path& out_dir);

struct SparsityRow {
  std::size_t iterations = 0;
  bool learnable = false;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  double bias_initial = 0.0;
  double bias_final = 0.0;
  std::vector<double> sparsity;
};

struct SparsityResult {
  std::vector<SparsityRow> rows;
};

SparsityResult run_demo_sparsity(const json& cfg, const std::filesystem::path& out_dir);

struct InpaintRow {
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  double train_mae = 0.0;
  double test_mae = 0.0;
  double max_violation = 0.0;
};

struct InpaintResult {
  std::vector<InpaintRow> rows;
};

InpaintResult run_demo_inpaint(const json& cfg, const std::filesystem::path& out_dir);

// Trains the configured model on the configured data; writes metrics.csv
// and model.dcac into the run directory.
void run_train(const json& cfg, const std::filesystem::path& out_dir);

// Batch inference: reads a DCAT tensor (single example, or batched along a
// leading axis), writes the outputs as DCAT. trace_path, when nonempty,
// receives per-sweep residual rows (single example only).
void run_infer(const std::filesystem::path& checkpoint, const std::filesystem::path& input,
               std::size_t iterations, const std::filesystem::path& output,
               const std::filesystem::path& trace_path = {});

struct EvalSummary {
  double loss = 0.0;
  double mae = 0.0;
  double max_violation = 0.0;
  std::vector<double> sparsity;
};

EvalSummary run_eval(const json& cfg, const std::filesystem::path& checkpoint,
                     const std::filesystem::path& out_dir);

}  // namespace deepca::experiments
