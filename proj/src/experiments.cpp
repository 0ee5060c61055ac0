#include "deepca/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "deepca/adnn_tape.hpp"
#include "deepca/config.hpp"
#include "deepca/errors.hpp"
#include "deepca/manifest.hpp"
#include "deepca/oracle.hpp"
#include "deepca/synth.hpp"
#include "deepca/tensor_io.hpp"

namespace deepca::experiments {

namespace {

// Runs fn(0..n-1) on up to `workers` threads; results land in caller-owned
// slots indexed by trial, so aggregation order never depends on scheduling.
void parallel_trials(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::min(std::max<std::size_t>(workers, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
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

std::string csv_num(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

void write_resolved_config(RunDir& dir, const json& cfg) {
  dir.write_text("config.json", cfg.dump(2) + "\n");
}

std::uint64_t primary_seed(const json& cfg) {
  if (cfg.contains("run") && cfg.at("run").contains("seeds") &&
      !cfg.at("run").at("seeds").empty()) {
    return cfg.at("run").at("seeds").at(0).get<std::uint64_t>();
  }
  if (cfg.contains("train") && cfg.at("train").contains("seed")) {
    return cfg.at("train").at("seed").get<std::uint64_t>();
  }
  if (cfg.contains("data") && cfg.at("data").contains("seed")) {
    return cfg.at("data").at("seed").get<std::uint64_t>();
  }
  return 0;
}

std::string csv_header_comment(const json& cfg) {
  return "# seed=" + std::to_string(primary_seed(cfg)) + "\n";
}

constexpr std::uint64_t kInitSeedOffset = 7919;

std::vector<std::size_t> size_t_list(const json& j) {
  std::vector<std::size_t> out;
  for (const auto& v : j) out.push_back(v.get<std::size_t>());
  return out;
}

std::vector<std::uint64_t> seed_list(const json& run, std::vector<std::uint64_t> fallback) {
  if (run.contains("seeds")) {
    std::vector<std::uint64_t> out;
    for (const auto& v : run.at("seeds")) out.push_back(v.get<std::uint64_t>());
    return out;
  }
  return fallback;
}

}  // namespace

std::size_t worker_cap(std::size_t requested) {
  std::size_t hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  std::size_t n = requested == 0 ? hw : requested;
  if (const char* env = std::getenv("DEEPCA_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap > 0) n = std::min(n, static_cast<std::size_t>(cap));
  }
  return std::max<std::size_t>(n, 1);
}

Model make_random_model(Rng& rng, const RandomModelOptions& opts) {
  // (kernel, stride, pad) combinations that tile common small grids.
  static constexpr struct { std::size_t k, s, p; } kConvChoices[] = {
      {3, 1, 0}, {3, 1, 1}, {2, 2, 0}, {4, 2, 1}};

  const std::size_t layer_count = 1 + rng.index(opts.max_layers);
  const bool conv_front = opts.allow_conv && rng.uniform01() < 0.5;

  Model model;
  std::vector<std::size_t> current;
  if (conv_front) {
    current = {1 + rng.index(2), 6, 6};
  } else {
    current = {3 + rng.index(4)};
  }
  const std::vector<std::size_t> input_shape = current;

  for (std::size_t j = 0; j < layer_count; ++j) {
    Layer layer;
    // Conv geometries must tile the current grid; collect the valid ones.
    std::vector<std::size_t> valid_choices;
    if (conv_front && current.size() == 3) {
      for (std::size_t c = 0; c < std::size(kConvChoices); ++c) {
        const auto& ch = kConvChoices[c];
        if (current[1] + 2 * ch.p >= ch.k && current[2] + 2 * ch.p >= ch.k &&
            (current[1] + 2 * ch.p - ch.k) % ch.s == 0 &&
            (current[2] + 2 * ch.p - ch.k) % ch.s == 0) {
          valid_choices.push_back(c);
        }
      }
    }
    const bool make_conv =
        !valid_choices.empty() &&
        (j + 1 < layer_count ? rng.uniform01() < 0.7 : rng.uniform01() < 0.5);
    if (make_conv) {
      const auto& choice = kConvChoices[valid_choices[rng.index(valid_choices.size())]];
      const std::size_t channels = 1 + rng.index(3);
      Tensor kernel({channels, current[0], choice.k, choice.k});
      const double sigma = 1.0 / std::sqrt(static_cast<double>(current[0] * choice.k * choice.k));
      for (std::size_t i = 0; i < kernel.size(); ++i) kernel[i] = rng.normal(0.0, sigma);
      layer.op = LinearOperator::conv2d(std::move(kernel), choice.s, choice.p, current[1],
                                        current[2]);
      current = layer.op.output_shape();
    } else {
      std::size_t rows = 1;
      for (std::size_t d : current) rows *= d;
      const std::size_t cols = 3 + rng.index(6);
      Tensor matrix({rows, cols});
      const double sigma = 1.0 / std::sqrt(static_cast<double>(rows));
      for (std::size_t i = 0; i < matrix.size(); ++i) matrix[i] = rng.normal(0.0, sigma);
      layer.op = LinearOperator::dense(std::move(matrix), current, {cols});
      current = {cols};
    }

    std::size_t dim = 1;
    for (std::size_t d : current) dim *= d;
    auto random_bias = [&] {
      Tensor bias(current);  // bias carries the layer's output shape
      for (std::size_t i = 0; i < dim; ++i) bias[i] = rng.uniform(0.0, 0.3);
      return bias;
    };
    if (opts.force_biased_relu) {
      layer.penalty = PenaltySpec::nonneg_l1(random_bias(), opts.learnable_bias);
    } else {
      switch (rng.index(4)) {
        case 0:
          layer.penalty = PenaltySpec::none();
          break;
        case 1:
          layer.penalty = PenaltySpec::nonneg();
          break;
        case 2:
          layer.penalty = PenaltySpec::nonneg_l1(random_bias(), opts.learnable_bias);
          break;
        case 3:
          layer.penalty = PenaltySpec::simplex();
          break;
      }
    }
    model.layers.push_back(std::move(layer));
  }
  model.validate();
  return model;
}

Tensor random_input(Rng& rng, const Model& model) {
  Tensor x(model.input_shape());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  return x;
}

GradcheckResult run_gradcheck(const json& cfg, const std::filesystem::path& out_dir) {
  config::validate(cfg);
  const json run = cfg.value("run", json::object());
  const std::size_t model_count = run.value("models", std::size_t{8});
  const double tolerance = run.value("tolerance", 1e-4);
  const std::vector<std::size_t> t_list =
      run.contains("T_list") ? size_t_list(run.at("T_list")) : std::vector<std::size_t>{1, 2, 3};
  const std::uint64_t seed = seed_list(run, {4242}).front();
  constexpr double kKinkMargin = 1e-4;
  constexpr double kStep = 1e-5;

  RunDir dir(out_dir);
  write_resolved_config(dir, cfg);

  Rng rng(seed);
  GradcheckResult result;

  for (std::size_t m = 0; m < model_count; ++m) {
    RandomModelOptions opts;
    opts.learnable_bias = true;
    for (const std::size_t iterations : t_list) {
      // Resample until every proximal input clears the kink margin.
      Model model = make_random_model(rng, opts);
      Tensor x = random_input(rng, model);
      Tensor target(model.output_shape());
      for (std::size_t i = 0; i < target.size(); ++i) target[i] = rng.normal();

      Tape probe;
      TapedInference rec = record_unrolled_inference(probe, model, x, iterations);
      std::size_t attempts = 0;
      while (probe.min_prox_kink_margin() < kKinkMargin && attempts < 200) {
        if (attempts % 8 == 7) model = make_random_model(rng, opts);
        x = random_input(rng, model);
        probe = Tape();
        rec = record_unrolled_inference(probe, model, x, iterations);
        ++attempts;
      }

      Tape tape;
      rec = record_unrolled_inference(tape, model, x, iterations);
      const NodeId loss = tape.squared_error(rec.output(), target);
      tape.backward(loss);

      auto params = trainable_parameters(model);
      std::vector<Tensor> analytic;
      for (std::size_t j = 0, p = 0; j < model.layer_count(); ++j) {
        analytic.push_back(tape.gradient(rec.weight_nodes[j]));
        ++p;
        if (rec.bias_nodes[j] != kNoNode) analytic.push_back(tape.gradient(rec.bias_nodes[j]));
      }

      for (std::size_t p = 0; p < params.size(); ++p) {
        Model scratch = model;
        auto scratch_params = trainable_parameters(scratch);
        const Tensor fd = oracle::finite_difference_grad(
            [&](const Tensor& theta) {
              *scratch_params[p].tensor = theta;
              const InferenceState state = infer(scratch, x, {.iterations = iterations});
              return loss_value(LossKind::SquaredError, state.output(), target);
            },
            *params[p].tensor, kStep);

        double max_err = 0.0;
        for (std::size_t i = 0; i < fd.size(); ++i) {
          max_err = std::max(max_err,
                             std::fabs(analytic[p][i] - fd[i]) / (1.0 + std::fabs(fd[i])));
        }
        result.reports.push_back({m, iterations, params[p].name, max_err});
        result.worst_err = std::max(result.worst_err, max_err);
      }
    }
  }
  result.pass = result.worst_err <= tolerance;

  std::ostringstream csv;
  csv << csv_header_comment(cfg);
  csv << "model,T,param,max_err\n";
  for (const auto& r : result.reports) {
    csv << r.model_index << ',' << r.iterations << ',' << r.param << ',' << csv_num(r.max_err)
        << '\n';
  }
  dir.write_text("report.csv", csv.str());
  dir.write_text("summary.txt", std::string(result.pass ? "PASS" : "FAIL") +
                                    " worst_err=" + csv_num(result.worst_err) +
                                    " tolerance=" + csv_num(tolerance) + "\n");
  dir.write_manifest();
  return result;
}

ExplainingAwayResult run_demo_explaining_away(const json& cfg,
                                              const std::filesystem::path& out_dir) {
  config::validate(cfg);
  const json run = cfg.value("run", json::object());
  const json data = cfg.value("data", json::object());
  const std::size_t trials = run.value("trials", std::size_t{100});
  const double bias_level = run.value("bias", 0.1);
  const std::size_t opt_steps = run.value("opt_steps", std::size_t{4000});
  const std::size_t d = data.value("d", std::size_t{32});
  const std::size_t k = data.value("k", std::size_t{64});
  const double coherence = data.value("coherence", 0.5);
  const double density = data.value("density", 0.12);
  const std::uint64_t seed = data.value("seed", std::uint64_t{1});

  RunDir dir(out_dir);
  write_resolved_config(dir, cfg);

  std::vector<std::uint64_t> trial_seeds(trials);
  Rng master(seed);
  for (auto& s : trial_seeds) s = master.next_u64();

  std::vector<oracle::ExplainingAwayTrial> results(trials);
  parallel_trials(trials, worker_cap(0), [&](std::size_t t) {
    Rng trial_rng(trial_seeds[t]);
    const Tensor dict = synth::dictionary_gen(d, k, coherence, trial_rng.next_u64());
    Tensor code = synth::sparse_code_gen(k, density, trial_rng.next_u64());
    while (count_nonzero(code, 0.0) == 0) {
      code = synth::sparse_code_gen(k, density, trial_rng.next_u64());
    }
    const Tensor image = dense_apply(dict, code);
    const Tensor bias = Tensor::full({k}, bias_level);
    results[t] = oracle::explaining_away_single(dict, image, bias, opt_steps);
  });

  ExplainingAwayResult summary;
  summary.trials = trials;
  std::ostringstream csv;
  csv << csv_header_comment(cfg);
  csv << "trial,ff_nonzeros,opt_nonzeros,ff_error,opt_error,win\n";
  for (std::size_t t = 0; t < trials; ++t) {
    const auto& r = results[t];
    const bool win = r.opt_nonzeros < r.ff_nonzeros && r.opt_error <= r.ff_error;
    if (win) ++summary.wins;
    csv << t << ',' << r.ff_nonzeros << ',' << r.opt_nonzeros << ',' << csv_num(r.ff_error) << ','
        << csv_num(r.opt_error) << ',' << (win ? 1 : 0) << '\n';
  }
  dir.write_text("trials.csv", csv.str());
  dir.write_text("summary.txt", std::to_string(summary.wins) + "/" + std::to_string(trials) +
                                    " trials optimized strictly sparser at <= error\n");
  dir.write_manifest();
  return summary;
}

SparsityResult run_demo_sparsity(const json& cfg, const std::filesystem::path& out_dir) {
  config::validate(cfg);
  const json run = cfg.value("run", json::object());
  const std::vector<std::size_t> t_list =
      run.contains("T_list") ? size_t_list(run.at("T_list")) : std::vector<std::size_t>{1, 2, 3};
  const std::vector<std::uint64_t> seeds = seed_list(run, {1, 2, 3, 4, 5});

  RunDir dir(out_dir);
  write_resolved_config(dir, cfg);

  SparsityResult result;
  struct Job {
    std::size_t iterations;
    bool learnable;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const std::size_t t : t_list) {
    for (const bool learnable : {false, true}) {
      for (const std::uint64_t s : seeds) jobs.push_back({t, learnable, s});
    }
  }
  std::vector<SparsityRow> rows(jobs.size());

  parallel_trials(jobs.size(), worker_cap(0), [&](std::size_t idx) {
    const Job& job = jobs[idx];
    config::GeneratedData data = config::build_data(cfg.at("data"), job.seed);
    Model model = config::build_model(cfg.at("model"), data.input_shape, job.seed + kInitSeedOffset);

    TrainConfig tc = config::build_train_config(cfg.at("train"));
    tc.iterations = job.iterations;
    tc.bias_learnable = job.learnable;
    tc.seed = job.seed;
    tc.decode_output = true;
    tc.eval_every = 0;
    tc.threads = 1;  // parallelism lives at the job level here

    double bias_initial = 0.0;
    std::size_t bias_terms = 0;
    for (const auto& layer : model.layers) {
      if (layer.penalty.kind() == PenaltyKind::NonnegL1) {
        for (std::size_t i = 0; i < layer.penalty.bias().size(); ++i) {
          bias_initial += layer.penalty.bias()[i];
          ++bias_terms;
        }
      }
    }
    bias_initial /= std::max<std::size_t>(bias_terms, 1);

    Trainer trainer(std::move(model), tc);
    trainer.run(data.train, nullptr);

    // Fresh evaluation with the trained parameters.
    const Model& trained = trainer.model();
    double loss = 0.0;
    std::vector<double> sparsity(trained.layer_count(), 0.0);
    for (const auto& ex : data.train.examples) {
      const InferenceState state = infer(trained, ex.input, {.iterations = job.iterations});
      Tensor pred = state.output();
      for (std::size_t j = trained.layer_count(); j-- > 0;) {
        pred = trained.layers[j].op.forward(pred);
      }
      loss += loss_value(LossKind::SquaredError, pred, ex.target);
      for (std::size_t j = 0; j < trained.layer_count(); ++j) {
        sparsity[j] += static_cast<double>(count_nonzero(state.act[j], 1e-8)) /
                       static_cast<double>(trained.layers[j].op.output_size());
      }
    }
    const double n = static_cast<double>(data.train.size());
    loss /= n;
    for (auto& s : sparsity) s /= n;

    double bias_final = 0.0;
    bias_terms = 0;
    for (const auto& layer : trained.layers) {
      if (layer.penalty.kind() == PenaltyKind::NonnegL1) {
        for (std::size_t i = 0; i < layer.penalty.bias().size(); ++i) {
          bias_final += layer.penalty.bias()[i];
          ++bias_terms;
        }
      }
    }
    bias_final /= std::max<std::size_t>(bias_terms, 1);

    rows[idx] = {job.iterations, job.learnable, job.seed, loss, bias_initial, bias_final,
                 std::move(sparsity)};
  });

  result.rows = std::move(rows);
  std::ostringstream csv;
  csv << csv_header_comment(cfg);
  csv << "T,bias_mode,seed,final_loss,mean_bias_initial,mean_bias_final";
  const std::size_t layer_count = result.rows.empty() ? 0 : result.rows.front().sparsity.size();
  for (std::size_t j = 1; j <= layer_count; ++j) csv << ",sparsity_layer" << j;
  csv << '\n';
  for (const auto& r : result.rows) {
    csv << r.iterations << ',' << (r.learnable ? "learnable" : "fixed") << ',' << r.seed << ','
        << csv_num(r.final_loss) << ',' << csv_num(r.bias_initial) << ',' << csv_num(r.bias_final);
    for (const double s : r.sparsity) csv << ',' << csv_num(s);
    csv << '\n';
  }
  dir.write_text("results.csv", csv.str());
  dir.write_manifest();
  return result;
}

InpaintResult run_demo_inpaint(const json& cfg, const std::filesystem::path& out_dir) {
  config::validate(cfg);
  const json run = cfg.value("run", json::object());
  const std::vector<std::size_t> t_list = run.contains("T_list")
                                              ? size_t_list(run.at("T_list"))
                                              : std::vector<std::size_t>{1, 2, 3, 5, 10, 20};
  const std::vector<std::uint64_t> seeds = seed_list(run, {1, 2, 3, 4, 5});
  const bool dump_predictions = run.value("trace", false);

  RunDir dir(out_dir);
  write_resolved_config(dir, cfg);

  struct Job {
    std::size_t iterations;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const std::size_t t : t_list) {
    for (const std::uint64_t s : seeds) jobs.push_back({t, s});
  }
  std::vector<InpaintRow> rows(jobs.size());

  parallel_trials(jobs.size(), worker_cap(0), [&](std::size_t idx) {
    const Job& job = jobs[idx];
    config::GeneratedData data = config::build_data(cfg.at("data"), job.seed);
    Model model = config::build_model(cfg.at("model"), data.input_shape, job.seed + kInitSeedOffset);

    TrainConfig tc = config::build_train_config(cfg.at("train"));
    tc.iterations = job.iterations;
    tc.seed = job.seed;
    tc.eval_every = 0;
    tc.threads = 1;

    Trainer trainer(std::move(model), tc);
    trainer.run(data.train, nullptr);

    const Model& trained = trainer.model();
    auto evaluate = [&](const Dataset& split, double& mae, double& violation) {
      mae = 0.0;
      violation = 0.0;
      for (const auto& ex : split.examples) {
        PenaltySpec eq = PenaltySpec::equality(ex.eq_indices, ex.eq_values);
        InferOptions opts;
        opts.iterations = job.iterations;
        opts.output_penalty = &eq;
        const InferenceState state = infer(trained, ex.input, opts);
        const Tensor& pred = state.output();
        double abs_sum = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
          abs_sum += std::fabs(pred[i] - ex.target[i]);
        }
        mae += abs_sum / static_cast<double>(pred.size());
        for (std::size_t i = 0; i < ex.eq_indices.size(); ++i) {
          violation = std::max(violation, std::fabs(pred[ex.eq_indices[i]] - ex.eq_values[i]));
        }
      }
      mae /= static_cast<double>(split.size());
    };

    InpaintRow row;
    row.iterations = job.iterations;
    row.seed = job.seed;
    double train_violation = 0.0;
    evaluate(data.train, row.train_mae, train_violation);
    evaluate(data.test, row.test_mae, row.max_violation);
    row.max_violation = std::max(row.max_violation, train_violation);
    rows[idx] = row;

    if (dump_predictions && job.seed == seeds.front()) {
      const auto& ex = data.test.examples.front();
      PenaltySpec eq = PenaltySpec::equality(ex.eq_indices, ex.eq_values);
      InferOptions opts;
      opts.iterations = job.iterations;
      opts.output_penalty = &eq;
      const InferenceState state = infer(trained, ex.input, opts);
      write_dcat_file(dir.path() / ("prediction_T" + std::to_string(job.iterations) + ".dcat"),
                      state.output());
    }
  });

  if (dump_predictions) {
    for (const std::size_t t : t_list) {
      dir.file("prediction_T" + std::to_string(t) + ".dcat");
    }
  }

  InpaintResult result;
  result.rows = std::move(rows);
  std::ostringstream csv;
  csv << csv_header_comment(cfg);
  csv << "T,seed,train_mae,test_mae,max_violation\n";
  for (const auto& r : result.rows) {
    csv << r.iterations << ',' << r.seed << ',' << csv_num(r.train_mae) << ','
        << csv_num(r.test_mae) << ',' << csv_num(r.max_violation) << '\n';
  }
  dir.write_text("results.csv", csv.str());
  dir.write_manifest();
  return result;
}

void run_train(const json& cfg, const std::filesystem::path& out_dir) {
  config::validate(cfg);
  RunDir dir(out_dir);
  write_resolved_config(dir, cfg);

  config::GeneratedData data = config::build_data(cfg.at("data"));
  TrainConfig tc = config::build_train_config(cfg.at("train"));
  tc.threads = worker_cap(tc.threads);
  Model model = config::build_model(cfg.at("model"), data.input_shape, tc.seed + kInitSeedOffset);

  Trainer trainer(std::move(model), tc);
  const auto metrics =
      trainer.run(data.train, data.test.size() > 0 ? &data.test : nullptr);

  std::ostringstream csv;
  csv << csv_header_comment(cfg);
  csv << "epoch,split,loss";
  for (std::size_t j = 1; j <= trainer.model().layer_count(); ++j) {
    csv << ",avg_sparsity_layer" << j;
  }
  csv << '\n';
  for (const auto& m : metrics) {
    csv << m.epoch << ',' << m.split << ',' << csv_num(m.loss);
    for (const double s : m.sparsity) csv << ',' << csv_num(s);
    csv << '\n';
  }
  dir.write_text("metrics.csv", csv.str());
  trainer.save(dir.file("model.dcac"));
  dir.write_manifest();
}

void run_infer(const std::filesystem::path& checkpoint, const std::filesystem::path& input,
               std::size_t iterations, const std::filesystem::path& output,
               const std::filesystem::path& trace_path) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Model& model = ck.model;
  const Tensor in = read_dcat_file(input);
  if (iterations == 0) iterations = ck.config.iterations;

  const auto& shape = model.input_shape();
  std::size_t input_numel = 1;
  for (std::size_t d : shape) input_numel *= d;

  const bool single = in.dims() == shape || (in.rank() == 1 && in.size() == input_numel);
  const bool batched = !single && in.rank() == shape.size() + 1 &&
                       std::equal(shape.begin(), shape.end(), in.dims().begin() + 1);
  if (!single && !batched) {
    throw DimensionError("infer: input shape " + in.shape_string() +
                         " does not match the model input");
  }

  std::ofstream trace;
  InferOptions opts;
  opts.iterations = iterations;
  if (!trace_path.empty()) {
    if (batched) throw UsageError("infer: residual trace requires a single-example input");
    trace.open(trace_path);
    write_trace_header(trace);
    opts.trace = &trace;
  }

  if (single) {
    const InferenceState state = infer(model, in.reshaped(shape), opts);
    write_dcat_file(output, state.output());
    return;
  }

  const std::size_t n = in.dims()[0];
  std::vector<std::size_t> out_dims = {n};
  for (std::size_t d : model.output_shape()) out_dims.push_back(d);
  Tensor out(out_dims);
  const std::size_t out_stride = out.size() / n;
  Tensor example(shape);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(in.data() + i * input_numel, input_numel, example.data());
    const InferenceState state = infer(model, example, opts);
    std::copy_n(state.output().data(), out_stride, out.data() + i * out_stride);
  }
  write_dcat_file(output, out);
}

EvalSummary run_eval(const json& cfg, const std::filesystem::path& checkpoint,
                     const std::filesystem::path& out_dir) {
  config::validate(cfg);
  RunDir dir(out_dir);
  write_resolved_config(dir, cfg);

  const Checkpoint ck = load_checkpoint(checkpoint);
  const Model& model = ck.model;
  config::GeneratedData data = config::build_data(cfg.at("data"));
  const Dataset& split = data.test.size() > 0 ? data.test : data.train;
  const std::size_t iterations =
      cfg.contains("train") && cfg.at("train").contains("T")
          ? cfg.at("train").at("T").get<std::size_t>()
          : ck.config.iterations;

  EvalSummary summary;
  summary.sparsity.assign(model.layer_count(), 0.0);
  for (const auto& ex : split.examples) {
    PenaltySpec eq;
    InferOptions opts;
    opts.iterations = iterations;
    if (ex.has_equality()) {
      eq = PenaltySpec::equality(ex.eq_indices, ex.eq_values);
      opts.output_penalty = &eq;
    }
    const InferenceState state = infer(model, ex.input, opts);
    Tensor pred = state.output();
    if (ck.config.decode_output) {
      for (std::size_t j = model.layer_count(); j-- > 0;) {
        pred = model.layers[j].op.forward(pred);
      }
    }
    summary.loss += loss_value(ck.config.loss, pred, ex.target);
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < pred.size() && i < ex.target.size(); ++i) {
      abs_sum += std::fabs(pred[i] - ex.target[i]);
    }
    summary.mae += abs_sum / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < ex.eq_indices.size(); ++i) {
      summary.max_violation = std::max(summary.max_violation,
                                       std::fabs(pred[ex.eq_indices[i]] - ex.eq_values[i]));
    }
    for (std::size_t j = 0; j < model.layer_count(); ++j) {
      summary.sparsity[j] += static_cast<double>(count_nonzero(state.act[j], 1e-8)) /
                             static_cast<double>(model.layers[j].op.output_size());
    }
  }
  const double n = static_cast<double>(split.size());
  summary.loss /= n;
  summary.mae /= n;
  for (auto& s : summary.sparsity) s /= n;

  std::ostringstream csv;
  csv << csv_header_comment(cfg);
  csv << "split,loss,mae,max_violation";
  for (std::size_t j = 1; j <= model.layer_count(); ++j) csv << ",avg_sparsity_layer" << j;
  csv << '\n';
  csv << (data.test.size() > 0 ? "test" : "train") << ',' << csv_num(summary.loss) << ','
      << csv_num(summary.mae) << ',' << csv_num(summary.max_violation);
  for (const double s : summary.sparsity) csv << ',' << csv_num(s);
  csv << '\n';
  dir.write_text("metrics.csv", csv.str());
  dir.write_manifest();
  return summary;
}

}  // namespace deepca::experiments
