#include "deepca/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <string>

#include "deepca/errors.hpp"
#include "deepca/linalg.hpp"
#include "deepca/synth.hpp"

namespace deepca::config {

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw FormatError("config: " + where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.contains(key)) {
      throw FormatError("config: unknown key \"" + key + "\" in " + where);
    }
  }
}

void validate_penalty(const json& p, const std::string& where) {
  check_keys(p, {"kind", "bias"}, where);
  const std::string kind = p.at("kind").get<std::string>();
  if (kind == "nonneg_l1") {
    if (!p.contains("bias")) throw FormatError("config: " + where + " nonneg_l1 needs a bias");
  } else if (kind != "none" && kind != "nonneg" && kind != "simplex" &&
             kind != "equality_slot") {
    throw FormatError("config: " + where + " has unknown penalty kind \"" + kind + "\"");
  }
}

void validate_model(const json& m) {
  check_keys(m, {"rho", "update_rule", "orthonormal_init", "layers"}, "model");
  if (!m.contains("layers") || !m.at("layers").is_array() || m.at("layers").empty()) {
    throw FormatError("config: model.layers must be a nonempty array");
  }
  std::size_t index = 0;
  for (const auto& layer : m.at("layers")) {
    const std::string where = "model.layers[" + std::to_string(index) + "]";
    const std::string type = layer.value("type", "");
    if (type == "dense") {
      check_keys(layer, {"type", "cols", "penalty"}, where);
      if (!layer.contains("cols")) throw FormatError("config: " + where + " needs cols");
    } else if (type == "conv2d") {
      check_keys(layer, {"type", "channels", "kernel", "stride", "pad", "penalty"}, where);
      if (!layer.contains("channels") || !layer.contains("kernel")) {
        throw FormatError("config: " + where + " needs channels and kernel");
      }
    } else {
      throw FormatError("config: " + where + " has unknown type \"" + type + "\"");
    }
    if (layer.contains("penalty")) validate_penalty(layer.at("penalty"), where + ".penalty");
    ++index;
  }
}

void validate_train(const json& t) {
  check_keys(t,
             {"epochs", "batch_size", "learning_rate", "momentum", "seed", "T", "loss",
              "bias_learnable", "decode_output", "threads", "eval_every", "intermediate_losses"},
             "train");
}

void validate_data(const json& d) {
  const std::string generator = d.value("generator", "");
  if (generator == "sparse_dictionary") {
    check_keys(d,
               {"generator", "d", "k", "coherence", "density", "count", "test_count", "noise",
                "seed"},
               "data");
  } else if (generator == "depth_field") {
    check_keys(d,
               {"generator", "height", "width", "patches", "mask_density", "noise", "train_count",
                "test_count", "seed"},
               "data");
  } else {
    throw FormatError("config: unknown data generator \"" + generator + "\"");
  }
}

void validate_run(const json& r) {
  check_keys(r,
             {"out", "T_list", "seeds", "trials", "tolerance", "bias", "trace", "opt_steps",
              "models", "dims"},
             "run");
}

}  // namespace

json parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("config: cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
}

void validate(const json& cfg) {
  check_keys(cfg, {"model", "train", "data", "run"}, "top level");
  try {
    if (cfg.contains("model")) validate_model(cfg.at("model"));
    if (cfg.contains("train")) validate_train(cfg.at("train"));
    if (cfg.contains("data")) validate_data(cfg.at("data"));
    if (cfg.contains("run")) validate_run(cfg.at("run"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: malformed value: ") + e.what());
  }
}

Model build_model(const json& model_cfg, const std::vector<std::size_t>& input_shape,
                  std::uint64_t init_seed) {
  Rng rng(init_seed);
  Model model;
  model.rho = model_cfg.value("rho", 1.0);
  const std::string rule = model_cfg.value("update_rule", "auto");
  if (rule == "auto") {
    model.update_rule = UpdateRule::Auto;
  } else if (rule == "exact") {
    model.update_rule = UpdateRule::Exact;
  } else if (rule == "parseval") {
    model.update_rule = UpdateRule::Parseval;
  } else {
    throw FormatError("config: unknown update_rule \"" + rule + "\"");
  }
  const bool orthonormal = model_cfg.value("orthonormal_init", true);

  std::vector<std::size_t> current = input_shape;
  for (const auto& layer_cfg : model_cfg.at("layers")) {
    Layer layer;
    const std::string type = layer_cfg.at("type").get<std::string>();
    if (type == "dense") {
      std::size_t rows = 1;
      for (std::size_t d : current) rows *= d;
      const auto cols = layer_cfg.at("cols").get<std::size_t>();
      Tensor matrix({rows, cols});
      const double sigma = 1.0 / std::sqrt(static_cast<double>(rows));
      for (std::size_t i = 0; i < matrix.size(); ++i) matrix[i] = rng.normal(0.0, sigma);
      // Overcomplete layers start near the tight-frame condition.
      if (orthonormal && rows <= cols) orthonormalize_rows(matrix);
      layer.op = LinearOperator::dense(std::move(matrix), current, {cols});
      current = {cols};
    } else {
      if (current.size() != 3) {
        throw FormatError("config: conv2d layer needs a (channels, h, w) input; got rank " +
                          std::to_string(current.size()));
      }
      const auto channels = layer_cfg.at("channels").get<std::size_t>();
      const auto kernel = layer_cfg.at("kernel").get<std::size_t>();
      const auto stride = layer_cfg.value("stride", std::size_t{1});
      const auto pad = layer_cfg.value("pad", std::size_t{0});
      Tensor weights({channels, current[0], kernel, kernel});
      const double sigma =
          1.0 / std::sqrt(static_cast<double>(current[0] * kernel * kernel));
      for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = rng.normal(0.0, sigma);
      layer.op = LinearOperator::conv2d(std::move(weights), stride, pad, current[1], current[2]);
      current = layer.op.output_shape();
    }

    if (layer_cfg.contains("penalty")) {
      const json& p = layer_cfg.at("penalty");
      const std::string kind = p.at("kind").get<std::string>();
      if (kind == "none") {
        layer.penalty = PenaltySpec::none();
      } else if (kind == "nonneg") {
        layer.penalty = PenaltySpec::nonneg();
      } else if (kind == "simplex") {
        layer.penalty = PenaltySpec::simplex();
      } else if (kind == "nonneg_l1") {
        // Bias carries the layer's full output shape.
        layer.penalty = PenaltySpec::nonneg_l1(Tensor::full(current, p.at("bias").get<double>()));
      } else if (kind == "equality_slot") {
        layer.penalty = PenaltySpec::equality({}, Tensor());
      }
    }
    model.layers.push_back(std::move(layer));
  }
  model.validate();
  return model;
}

GeneratedData build_data(const json& data_cfg, std::uint64_t seed_override) {
  const std::string generator = data_cfg.at("generator").get<std::string>();
  const std::uint64_t seed =
      seed_override != 0 ? seed_override : data_cfg.value("seed", std::uint64_t{1});
  GeneratedData out;

  if (generator == "sparse_dictionary") {
    const auto d = data_cfg.at("d").get<std::size_t>();
    const auto k = data_cfg.at("k").get<std::size_t>();
    const double coherence = data_cfg.value("coherence", 0.0);
    const double density = data_cfg.value("density", 0.2);
    const auto count = data_cfg.value("count", std::size_t{32});
    const auto test_count = data_cfg.value("test_count", std::size_t{0});
    const double noise = data_cfg.value("noise", 0.0);

    Rng master(seed);
    out.dictionary = synth::dictionary_gen(d, k, coherence, master.next_u64());
    auto make_example = [&]() {
      const Tensor code = synth::sparse_code_gen(k, density, master.next_u64());
      Tensor x = dense_apply(out.dictionary, code);
      if (noise > 0.0) {
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += master.normal(0.0, noise);
      }
      Example ex;
      ex.input = x;
      ex.target = std::move(x);
      return ex;
    };
    for (std::size_t i = 0; i < count; ++i) out.train.examples.push_back(make_example());
    for (std::size_t i = 0; i < test_count; ++i) out.test.examples.push_back(make_example());
    out.input_shape = {d};
  } else if (generator == "depth_field") {
    const auto h = data_cfg.at("height").get<std::size_t>();
    const auto w = data_cfg.at("width").get<std::size_t>();
    const auto patches = data_cfg.value("patches", std::size_t{5});
    const double mask_density = data_cfg.at("mask_density").get<double>();
    const double noise = data_cfg.value("noise", 0.0);
    const auto train_count = data_cfg.value("train_count", std::size_t{32});
    const auto test_count = data_cfg.value("test_count", std::size_t{8});

    Rng master(seed);
    auto make_example = [&]() {
      const synth::DepthField field =
          synth::depth_field_gen(h, w, patches, mask_density, noise, master.next_u64());
      Example ex;
      // Channel 0: observed values scattered on the grid; channel 1: mask.
      Tensor input({2, h, w});
      for (std::size_t i = 0; i < field.mask.size(); ++i) {
        input[field.mask[i]] = field.observed[i];
        input[h * w + field.mask[i]] = 1.0;
      }
      ex.input = std::move(input);
      ex.target = field.truth.reshaped({h * w});
      ex.eq_indices = field.mask;
      ex.eq_values = field.observed;
      return ex;
    };
    for (std::size_t i = 0; i < train_count; ++i) out.train.examples.push_back(make_example());
    for (std::size_t i = 0; i < test_count; ++i) out.test.examples.push_back(make_example());
    out.input_shape = {2, h, w};
  } else {
    throw FormatError("config: unknown data generator \"" + generator + "\"");
  }
  return out;
}

TrainConfig build_train_config(const json& train_cfg) {
  TrainConfig c;
  c.epochs = train_cfg.value("epochs", std::size_t{1});
  c.batch_size = train_cfg.value("batch_size", std::size_t{1});
  c.learning_rate = train_cfg.value("learning_rate", 0.01);
  c.momentum = train_cfg.value("momentum", 0.9);
  c.seed = train_cfg.value("seed", std::uint64_t{1});
  c.iterations = train_cfg.value("T", std::size_t{1});
  c.loss = loss_kind_from_name(train_cfg.value("loss", "squared_error"));
  c.bias_learnable = train_cfg.value("bias_learnable", false);
  c.decode_output = train_cfg.value("decode_output", false);
  c.threads = train_cfg.value("threads", std::size_t{1});
  c.eval_every = train_cfg.value("eval_every", std::size_t{1});
  if (train_cfg.contains("intermediate_losses")) {
    for (const auto& item : train_cfg.at("intermediate_losses")) {
      c.intermediate_losses.emplace_back(item.at(0).get<std::size_t>(),
                                         item.at(1).get<double>());
    }
  }
  c.validate();
  return c;
}

}  // namespace deepca::config
