#include "deepca/learning.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "deepca/adnn_tape.hpp"
#include "deepca/errors.hpp"
#include "deepca/tensor_io.hpp"

namespace deepca {

using nlohmann::json;

namespace {

constexpr double kSparsityEps = 1e-8;

std::size_t class_index(const Tensor& target, std::size_t num_classes) {
  if (target.size() != 1) throw UsageError("cross-entropy target must be a scalar class index");
  const double raw = target[0];
  if (!(raw >= 0.0) || raw != std::floor(raw) || raw >= static_cast<double>(num_classes)) {
    throw UsageError("invalid class index " + std::to_string(raw));
  }
  return static_cast<std::size_t>(raw);
}

}  // namespace

const char* loss_kind_name(LossKind kind) {
  return kind == LossKind::SquaredError ? "squared_error" : "softmax_cross_entropy";
}

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "squared_error") return LossKind::SquaredError;
  if (name == "softmax_cross_entropy") return LossKind::SoftmaxCrossEntropy;
  throw FormatError("unknown loss kind: " + name);
}

double loss_value(LossKind kind, const Tensor& prediction, const Tensor& target) {
  if (kind == LossKind::SquaredError) {
    const Tensor r = sub(prediction, target);
    return 0.5 * dot(r, r);
  }
  const std::size_t label = class_index(target, prediction.size());
  const double m = max_value(prediction);
  double denom = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) denom += std::exp(prediction[i] - m);
  return std::log(denom) + m - prediction[label];
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  if (iterations < 1) throw UsageError("iteration count must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw UsageError("momentum must be in [0, 1)");
}

std::vector<ParamRef> trainable_parameters(Model& model) {
  std::vector<ParamRef> params;
  for (std::size_t j = 0; j < model.layer_count(); ++j) {
    params.push_back({"layer" + std::to_string(j) + ".weights",
                      &model.layers[j].op.mutable_weights()});
    auto& pen = model.layers[j].penalty;
    if (pen.kind() == PenaltyKind::NonnegL1 && pen.bias_learnable()) {
      params.push_back({"layer" + std::to_string(j) + ".bias", &pen.mutable_bias()});
    }
  }
  return params;
}

struct Trainer::ExampleResult {
  double loss = 0.0;
  std::vector<Tensor> grads;
  std::vector<std::size_t> nonzeros;  // per layer
};

Trainer::Trainer(Model model, TrainConfig config)
    : model_(std::move(model)), config_(std::move(config)), rng_(config_.seed) {
  config_.validate();
  model_.iterations = config_.iterations;
  for (auto& layer : model_.layers) {
    if (layer.penalty.kind() == PenaltyKind::NonnegL1) {
      layer.penalty.set_bias_learnable(config_.bias_learnable);
    }
  }
  model_.validate();
  for (const auto& p : trainable_parameters(model_)) {
    velocity_.push_back(Tensor::zeros_like(*p.tensor));
  }
}

Trainer::ExampleResult Trainer::process_example(const Example& ex, const SolveCache& cache) const {
  Tape tape;
  PenaltySpec override_spec;
  const PenaltySpec* output_penalty = nullptr;
  if (ex.has_equality()) {
    override_spec = PenaltySpec::equality(ex.eq_indices, ex.eq_values);
    output_penalty = &override_spec;
  }
  const TapedInference rec =
      record_unrolled_inference(tape, model_, ex.input, config_.iterations, output_penalty, &cache);

  NodeId prediction = rec.output();
  if (config_.decode_output) {
    prediction = record_decode_chain(tape, rec, model_, prediction, model_.layer_count());
  }
  NodeId loss = config_.loss == LossKind::SquaredError
                    ? tape.squared_error(prediction, ex.target)
                    : tape.softmax_cross_entropy(
                          prediction, class_index(ex.target, tape.value(prediction).size()));
  for (const auto& [layer, weight] : config_.intermediate_losses) {
    if (layer == 0 || layer > model_.layer_count()) {
      throw UsageError("intermediate loss layer out of range");
    }
    NodeId decoded = record_decode_chain(tape, rec, model_, rec.act[layer - 1], layer);
    loss = tape.add(loss, tape.scale(tape.squared_error(decoded, ex.input), weight));
  }
  tape.backward(loss);

  ExampleResult out;
  out.loss = tape.value(loss)[0];
  for (std::size_t j = 0; j < model_.layer_count(); ++j) {
    out.grads.push_back(tape.gradient(rec.weight_nodes[j]));
    if (rec.bias_nodes[j] != kNoNode) out.grads.push_back(tape.gradient(rec.bias_nodes[j]));
    out.nonzeros.push_back(count_nonzero(tape.value(rec.act[j]), kSparsityEps));
  }
  return out;
}

std::vector<EpochMetrics> Trainer::run(const Dataset& train, const Dataset* eval_split,
                                       std::size_t epochs) {
  if (train.size() == 0) throw UsageError("training dataset is empty");
  if (epochs == 0) epochs = config_.epochs;
  auto params = trainable_parameters(model_);
  std::vector<EpochMetrics> metrics;

  std::vector<std::size_t> layer_dims;
  for (const auto& layer : model_.layers) layer_dims.push_back(layer.op.output_size());

  for (std::size_t e = 0; e < epochs; ++e) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    rng_.shuffle(order);

    double epoch_loss = 0.0;
    std::vector<double> epoch_nnz(model_.layer_count(), 0.0);

    for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
      const std::size_t count = std::min(config_.batch_size, order.size() - start);
      const SolveCache cache = make_solve_cache(model_);

      std::vector<ExampleResult> results(count);
      const std::size_t workers = std::min(std::max<std::size_t>(config_.threads, 1), count);
      if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
          results[i] = process_example(train.examples[order[start + i]], cache);
        }
      } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        for (std::size_t w = 0; w < workers; ++w) {
          pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
              try {
                results[i] = process_example(train.examples[order[start + i]], cache);
              } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
              }
            }
          });
        }
        for (auto& t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
      }

      // Fixed-order reduction keeps batch gradients deterministic no matter
      // how many workers ran.
      double batch_loss = 0.0;
      std::vector<Tensor> grad_sum;
      for (std::size_t p = 0; p < params.size(); ++p) {
        grad_sum.push_back(Tensor::zeros_like(*params[p].tensor));
      }
      for (std::size_t i = 0; i < count; ++i) {
        batch_loss += results[i].loss;
        for (std::size_t p = 0; p < params.size(); ++p) {
          for (std::size_t k = 0; k < grad_sum[p].size(); ++k) {
            grad_sum[p][k] += results[i].grads[p][k];
          }
        }
        for (std::size_t j = 0; j < model_.layer_count(); ++j) {
          epoch_nnz[j] += static_cast<double>(results[i].nonzeros[j]);
        }
      }
      batch_loss /= static_cast<double>(count);
      if (!std::isfinite(batch_loss)) {
        throw NumericalError("training diverged: non-finite loss at epoch " +
                             std::to_string(epoch_ + 1) + ", batch starting at " +
                             std::to_string(start));
      }
      epoch_loss += batch_loss * static_cast<double>(count);

      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& vel = velocity_[p];
        Tensor& param = *params[p].tensor;
        for (std::size_t k = 0; k < param.size(); ++k) {
          vel[k] = config_.momentum * vel[k] + grad_sum[p][k] * inv;
          param[k] -= config_.learning_rate * vel[k];
        }
      }
      for (auto& layer : model_.layers) {
        auto& pen = layer.penalty;
        if (pen.kind() == PenaltyKind::NonnegL1 && pen.bias_learnable()) {
          Tensor& b = pen.mutable_bias();
          for (std::size_t k = 0; k < b.size(); ++k) b[k] = std::max(0.0, b[k]);
        }
      }
    }

    ++epoch_;
    EpochMetrics m;
    m.epoch = epoch_;
    m.split = "train";
    m.loss = epoch_loss / static_cast<double>(train.size());
    for (std::size_t j = 0; j < model_.layer_count(); ++j) {
      m.sparsity.push_back(epoch_nnz[j] / static_cast<double>(train.size()) /
                           static_cast<double>(layer_dims[j]));
    }
    metrics.push_back(std::move(m));

    if (eval_split != nullptr && config_.eval_every > 0 && epoch_ % config_.eval_every == 0) {
      EpochMetrics em;
      em.epoch = epoch_;
      em.split = "eval";
      em.sparsity.assign(model_.layer_count(), 0.0);
      for (const auto& ex : eval_split->examples) {
        PenaltySpec override_spec;
        InferOptions opts;
        opts.iterations = config_.iterations;
        if (ex.has_equality()) {
          override_spec = PenaltySpec::equality(ex.eq_indices, ex.eq_values);
          opts.output_penalty = &override_spec;
        }
        const InferenceState state = infer(model_, ex.input, opts);
        Tensor prediction = state.output();
        if (config_.decode_output) {
          for (std::size_t j = model_.layer_count(); j-- > 0;) {
            prediction = model_.layers[j].op.forward(prediction);
          }
        }
        em.loss += loss_value(config_.loss, prediction, ex.target);
        for (std::size_t j = 0; j < model_.layer_count(); ++j) {
          em.sparsity[j] += static_cast<double>(count_nonzero(state.act[j], kSparsityEps)) /
                            static_cast<double>(layer_dims[j]);
        }
      }
      const double n = static_cast<double>(eval_split->size());
      em.loss /= n;
      for (auto& s : em.sparsity) s /= n;
      metrics.push_back(std::move(em));
    }
  }
  return metrics;
}

namespace {

json penalty_to_json(const PenaltySpec& pen) {
  json p;
  p["kind"] = penalty_kind_name(pen.kind());
  if (pen.kind() == PenaltyKind::NonnegL1) p["learnable"] = pen.bias_learnable();
  if (pen.kind() == PenaltyKind::Equality) {
    p["indices"] = pen.equality_indices();
    p["values"] = pen.equality_values().values();
  }
  return p;
}

// Bias tensors travel in the tensor section, not the JSON record.
PenaltySpec penalty_from_json(const json& p, const Tensor* bias) {
  const PenaltyKind kind = penalty_kind_from_name(p.at("kind").get<std::string>());
  switch (kind) {
    case PenaltyKind::None: return PenaltySpec::none();
    case PenaltyKind::Nonneg: return PenaltySpec::nonneg();
    case PenaltyKind::NonnegL1: {
      if (bias == nullptr) throw FormatError("checkpoint: missing bias tensor");
      return PenaltySpec::nonneg_l1(*bias, p.value("learnable", false));
    }
    case PenaltyKind::Simplex: return PenaltySpec::simplex();
    case PenaltyKind::Equality: {
      auto indices = p.at("indices").get<std::vector<std::size_t>>();
      auto values = p.at("values").get<std::vector<double>>();
      // An empty index set is the runtime constraint slot: data supplies
      // (indices, values) per example at inference time.
      if (values.empty()) return PenaltySpec::equality({}, Tensor());
      return PenaltySpec::equality(std::move(indices), Tensor({values.size()}, values));
    }
  }
  throw FormatError("checkpoint: bad penalty record");
}

const char* update_rule_name(UpdateRule rule) {
  switch (rule) {
    case UpdateRule::Auto: return "auto";
    case UpdateRule::Exact: return "exact";
    case UpdateRule::Parseval: return "parseval";
  }
  return "auto";
}

UpdateRule update_rule_from_name(const std::string& name) {
  if (name == "auto") return UpdateRule::Auto;
  if (name == "exact") return UpdateRule::Exact;
  if (name == "parseval") return UpdateRule::Parseval;
  throw FormatError("unknown update rule: " + name);
}

json train_config_to_json(const TrainConfig& c) {
  json t;
  t["epochs"] = c.epochs;
  t["batch_size"] = c.batch_size;
  t["learning_rate"] = c.learning_rate;
  t["momentum"] = c.momentum;
  t["seed"] = c.seed;
  t["iterations"] = c.iterations;
  t["loss"] = loss_kind_name(c.loss);
  t["bias_learnable"] = c.bias_learnable;
  t["decode_output"] = c.decode_output;
  t["threads"] = c.threads;
  t["eval_every"] = c.eval_every;
  json inter = json::array();
  for (const auto& [layer, weight] : c.intermediate_losses) inter.push_back({layer, weight});
  t["intermediate_losses"] = inter;
  return t;
}

TrainConfig train_config_from_json(const json& t) {
  TrainConfig c;
  c.epochs = t.at("epochs").get<std::size_t>();
  c.batch_size = t.at("batch_size").get<std::size_t>();
  c.learning_rate = t.at("learning_rate").get<double>();
  c.momentum = t.at("momentum").get<double>();
  c.seed = t.at("seed").get<std::uint64_t>();
  c.iterations = t.at("iterations").get<std::size_t>();
  c.loss = loss_kind_from_name(t.at("loss").get<std::string>());
  c.bias_learnable = t.at("bias_learnable").get<bool>();
  c.decode_output = t.at("decode_output").get<bool>();
  c.threads = t.at("threads").get<std::size_t>();
  c.eval_every = t.at("eval_every").get<std::size_t>();
  for (const auto& item : t.at("intermediate_losses")) {
    c.intermediate_losses.emplace_back(item.at(0).get<std::size_t>(), item.at(1).get<double>());
  }
  return c;
}

constexpr char kCheckpointMagic[4] = {'D', 'C', 'A', 'C'};
constexpr std::uint8_t kCheckpointVersion = 0x01;

void put_u32_le(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

std::uint32_t get_u32_le(std::istream& in) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (!in) throw FormatError("DCAC: truncated u32 field");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const TrainConfig& config, const std::vector<Tensor>& velocity,
                     std::size_t epoch, const Rng& rng) {
  json arch;
  arch["format"] = "dcac";
  json layers = json::array();
  std::vector<const Tensor*> tensors;
  for (const auto& layer : model.layers) {
    json rec;
    if (layer.op.is_dense()) {
      rec["type"] = "dense";
      rec["rows"] = layer.op.input_size();
      rec["cols"] = layer.op.output_size();
    } else {
      const auto& g = layer.op.geometry();
      rec["type"] = "conv2d";
      rec["stride"] = g.stride;
      rec["pad"] = g.pad;
      rec["data_h"] = g.data_h;
      rec["data_w"] = g.data_w;
    }
    rec["penalty"] = penalty_to_json(layer.penalty);
    layers.push_back(std::move(rec));
    tensors.push_back(&layer.op.weights());
    if (layer.penalty.kind() == PenaltyKind::NonnegL1) tensors.push_back(&layer.penalty.bias());
  }
  for (const auto& v : velocity) tensors.push_back(&v);
  arch["layers"] = std::move(layers);
  arch["iterations"] = model.iterations;
  arch["rho"] = model.rho;
  arch["update_rule"] = update_rule_name(model.update_rule);
  arch["epoch"] = epoch;
  arch["rng"] = rng.serialize();
  arch["train"] = train_config_to_json(config);
  arch["velocity_count"] = velocity.size();

  const std::string text = arch.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("DCAC: cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, 4);
  out.put(static_cast<char>(kCheckpointVersion));
  put_u32_le(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u32_le(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor* t : tensors) write_dcat(out, *t);
  if (!out) throw FormatError("DCAC: write failure");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("DCAC: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("DCAC: bad magic");
  if (in.get() != kCheckpointVersion) throw FormatError("DCAC: unsupported version");
  const std::uint32_t arch_len = get_u32_le(in);
  std::string text(arch_len, '\0');
  in.read(text.data(), arch_len);
  if (!in) throw FormatError("DCAC: truncated architecture record");
  json arch;
  try {
    arch = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("DCAC: bad architecture record: ") + e.what());
  }
  const std::uint32_t n_tensors = get_u32_le(in);
  std::vector<Tensor> tensors;
  tensors.reserve(n_tensors);
  for (std::uint32_t i = 0; i < n_tensors; ++i) tensors.push_back(read_dcat(in));

  Checkpoint ck;
  std::size_t cursor = 0;
  auto next_tensor = [&]() -> Tensor& {
    if (cursor >= tensors.size()) throw FormatError("DCAC: missing tensor");
    return tensors[cursor++];
  };
  for (const auto& rec : arch.at("layers")) {
    Layer layer;
    Tensor weights = next_tensor();
    const std::string type = rec.at("type").get<std::string>();
    if (type == "dense") {
      layer.op = LinearOperator::dense(std::move(weights));
    } else if (type == "conv2d") {
      layer.op = LinearOperator::conv2d(std::move(weights), rec.at("stride").get<std::size_t>(),
                                        rec.at("pad").get<std::size_t>(),
                                        rec.at("data_h").get<std::size_t>(),
                                        rec.at("data_w").get<std::size_t>());
    } else {
      throw FormatError("DCAC: unknown layer type " + type);
    }
    const json& p = rec.at("penalty");
    const Tensor* bias = nullptr;
    Tensor bias_storage;
    if (p.at("kind").get<std::string>() == "nonneg_l1") {
      bias_storage = next_tensor();
      bias = &bias_storage;
    }
    layer.penalty = penalty_from_json(p, bias);
    ck.model.layers.push_back(std::move(layer));
  }
  ck.model.iterations = arch.at("iterations").get<std::size_t>();
  ck.model.rho = arch.at("rho").get<double>();
  ck.model.update_rule = update_rule_from_name(arch.at("update_rule").get<std::string>());
  ck.config = train_config_from_json(arch.at("train"));
  ck.epoch = arch.at("epoch").get<std::size_t>();
  ck.rng = Rng::deserialize(arch.at("rng").get<std::string>());
  const std::size_t vel_count = arch.at("velocity_count").get<std::size_t>();
  for (std::size_t i = 0; i < vel_count; ++i) ck.velocity.push_back(next_tensor());
  if (cursor != tensors.size()) throw FormatError("DCAC: extra tensors in file");
  ck.model.validate();
  return ck;
}

std::size_t checkpoint_parameter_section_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("DCAC: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("DCAC: bad magic");
  if (in.get() != kCheckpointVersion) throw FormatError("DCAC: unsupported version");
  const std::uint32_t arch_len = get_u32_le(in);
  in.seekg(arch_len, std::ios::cur);
  const auto tensor_start = in.tellg();
  in.seekg(0, std::ios::end);
  return static_cast<std::size_t>(in.tellg() - tensor_start);
}

void Trainer::save(const std::filesystem::path& path) const {
  save_checkpoint(path, model_, config_, velocity_, epoch_, rng_);
}

Trainer Trainer::load(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  Trainer t;
  t.model_ = std::move(ck.model);
  t.config_ = std::move(ck.config);
  t.velocity_ = std::move(ck.velocity);
  t.epoch_ = ck.epoch;
  t.rng_ = ck.rng;
  auto params = trainable_parameters(t.model_);
  if (params.size() != t.velocity_.size()) {
    throw FormatError("DCAC: optimizer state does not match trainable parameters");
  }
  return t;
}

}  // namespace deepca
