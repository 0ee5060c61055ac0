#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deepca/admm.hpp"
#include "deepca/model.hpp"
#include "deepca/rng.hpp"

namespace deepca {

enum class LossKind { SquaredError, SoftmaxCrossEntropy };

const char* loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

// squared_error: 1/2 ||pred - target||^2.
// softmax_cross_entropy: -log softmax(pred)[target], target is a scalar
// tensor holding the class index; log-sum-exp stabilized.
double loss_value(LossKind kind, const Tensor& prediction, const Tensor& target);

struct Example {
  Tensor input;
  Tensor target;
  // Optional per-example equality constraint injected into the last
  // layer's penalty slot at inference time.
  std::vector<std::size_t> eq_indices;
  Tensor eq_values;
  bool has_equality() const { return !eq_indices.empty(); }
};

struct Dataset {
  std::vector<Example> examples;
  std::size_t size() const { return examples.size(); }
};

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 1;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  std::size_t iterations = 1;  // unroll depth T
  LossKind loss = LossKind::SquaredError;
  bool bias_learnable = false;
  // Apply the reconstruction chain to the output code before the loss
  // (unsupervised reconstruction setups).
  bool decode_output = false;
  // Optional intermediate reconstruction losses: (layer j, weight) adds
  // weight * 1/2 ||x - decode_j(z_j)||^2. Off by default.
  std::vector<std::pair<std::size_t, double>> intermediate_losses;
  std::size_t threads = 1;      // batch-parallel gradient workers
  std::size_t eval_every = 1;   // 0: skip eval-split metrics

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  std::vector<double> sparsity;  // fraction of |z_j| > 1e-8 per layer
};

// Minibatch SGD with momentum through the unrolled inference graph.
// Deterministic given the seed; learnable biases are clamped at 0 after
// each step; a non-finite batch loss aborts with NumericalError.
class Trainer {
 public:
  Trainer(Model model, TrainConfig config);

  // Runs `epochs` further epochs (0 = config.epochs) and appends metrics.
  std::vector<EpochMetrics> run(const Dataset& train, const Dataset* eval_split = nullptr,
                                std::size_t epochs = 0);

  const Model& model() const { return model_; }
  Model& mutable_model() { return model_; }
  const TrainConfig& config() const { return config_; }
  std::size_t epoch() const { return epoch_; }

  void save(const std::filesystem::path& path) const;
  static Trainer load(const std::filesystem::path& path);

 private:
  Trainer() = default;
  struct ExampleResult;
  ExampleResult process_example(const Example& ex, const SolveCache& cache) const;

  Model model_;
  TrainConfig config_;
  std::vector<Tensor> velocity_;  // per trainable parameter, declaration order
  std::size_t epoch_ = 0;
  Rng rng_{0};
};

// Named mutable views of a model's trainable parameters in declaration
// order: layer weights, then the bias when it is learnable.
struct ParamRef {
  std::string name;
  Tensor* tensor;
};
std::vector<ParamRef> trainable_parameters(Model& model);

// Checkpoint file (DCAC): magic "DCAC" | version 0x01 | u32 LE length |
// architecture record (JSON) | u32 LE tensor count | DCAT-encoded tensors
// in declaration order (parameters, then optimizer state).
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const TrainConfig& config, const std::vector<Tensor>& velocity,
                     std::size_t epoch, const Rng& rng);

struct Checkpoint {
  Model model;
  TrainConfig config;
  std::vector<Tensor> velocity;
  std::size_t epoch = 0;
  Rng rng{0};
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Byte length of the tensor region (everything after the architecture
// record); parameters only, so it is independent of the unroll depth.
std::size_t checkpoint_parameter_section_bytes(const std::filesystem::path& path);

}  // namespace deepca
