#include "autosep/cli.hpp"

#include <algorithm>
#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "autosep/checkpoint.hpp"
#include "autosep/errors.hpp"
#include "autosep/evaluation.hpp"
#include "autosep/optimizer.hpp"
#include "autosep/report.hpp"
#include "autosep/storage.hpp"

namespace autosep {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kDefaultMinibatch = 60;

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <typename T>
void read_opt(const json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

json effective_snapshot(const CliConfig& c) {
  json backend = {{"kind", c.backend.kind}};
  if (c.backend.world) backend["world"] = *c.backend.world;
  if (c.backend.kind == "http") backend["http"] = c.backend.http;
  return {{"task", c.task},
          {"optimize_manifest", c.optimize_manifest.generic_string()},
          {"eval_manifest", c.eval_manifest.generic_string()},
          {"backend", backend},
          {"run", c.run},
          {"m_vote", c.m_vote},
          {"m_context", c.m_context},
          {"eval_seeds", c.eval_seeds}};
}

struct Session {
  CliConfig config;
  std::unique_ptr<Backend> backend;
  std::unique_ptr<QueryLedger> ledger;
  std::unique_ptr<DescriptionCache> cache;
  std::unique_ptr<Client> client;
  PromptCandidate p0;
};

TemplateStore load_templates(const CliConfig& config) {
  TemplateStore templates;
  if (config.templates_dir) templates.load_overrides(*config.templates_dir);
  return templates;
}

void open_session(Session& s, const fs::path& ledger_file, std::uint64_t next_seq, const fs::path& cache_file) {
  s.backend = make_backend(s.config.backend);
  s.config.run.model_id = s.backend->model_id();
  s.ledger = std::make_unique<QueryLedger>(ledger_file, next_seq);
  s.cache = std::make_unique<DescriptionCache>(cache_file);
  auto templates = load_templates(s.config);
  s.p0 = PromptCandidate::make(s.config.initial_prompt ? *s.config.initial_prompt : templates.initial_prompt(s.config.task));
  s.client = std::make_unique<Client>(*s.backend, *s.ledger, *s.cache, std::move(templates), s.config.retry);
}

/// Fills n from the dataset and applies the minibatch default, then
/// validates everything at once.
void finalize_run_config(CliConfig& config, const Dataset& X) {
  config.run.dataset_size = static_cast<int>(X.size());
  if (!config.minibatch_explicit) config.run.minibatch_size = std::min<int>(kDefaultMinibatch, config.run.dataset_size);
  auto problems = config.violations();
  if (!problems.empty()) {
    std::string message = "invalid configuration:";
    for (const auto& p : problems) message += "\n  - " + p;
    throw ConfigError(message);
  }
}

bool dir_has_entries(const fs::path& dir) {
  return fs::is_directory(dir) && fs::directory_iterator(dir) != fs::directory_iterator();
}

struct OptimizeArgs {
  std::string config;
  std::string run_dir;
  bool resume = false;
  bool dry_run = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> stop_after;
};

int cmd_optimize(const OptimizeArgs& a, std::ostream& out, std::ostream& err) {
  Session s;
  s.config = load_cli_config(a.config);
  if (a.seed) s.config.run.seed = *a.seed;
  const Dataset X = load_dataset(s.config.optimize_manifest);
  finalize_run_config(s.config, X);

  if (a.dry_run) {
    const auto& c = s.config.run;
    const auto per_iter = c.query_budget_per_iteration();
    out << "n=" << c.dataset_size << " k=" << c.negatives_k << " b=" << c.beam_b << " l=" << c.reflections_l
        << " N=" << c.iterations << "\n";
    out << "per-iteration query budget (2+n+kn)*b*l = " << per_iter << "\n";
    out << "initial pass (n describe + k*n judge) = "
        << static_cast<std::int64_t>(c.dataset_size) * (1 + c.negatives_k) << "\n";
    out << "upper bound for the run = "
        << per_iter * c.iterations + static_cast<std::int64_t>(c.dataset_size) * (1 + c.negatives_k) << "\n";
    return kExitOk;
  }

  const RunDirectory dir(a.run_dir);
  const json snapshot = effective_snapshot(s.config);
  std::optional<RunState> resume;
  if (a.resume) {
    if (fs::exists(dir.config_snapshot())) {
      json previous = json::parse(read_text_file(dir.config_snapshot()));
      previous["run"]["model_id"] = s.config.run.model_id;
      json current = snapshot;
      if (previous.at("run") != current.at("run") || previous.at("task") != current.at("task")) {
        throw ConfigError("--resume: configuration differs from " + dir.config_snapshot().string());
      }
    }
    if (auto latest = dir.latest_checkpoint()) resume = read_checkpoint(*latest);
    if (resume && resume->pool.iteration >= s.config.run.iterations) {
      dir.write_outputs(*resume);
      out << "run already complete at iteration " << resume->pool.iteration << "; nothing to do\n";
      return kExitOk;
    }
  } else if (dir_has_entries(dir.root())) {
    throw ConfigError("run directory " + dir.root().string() + " is not empty (use --resume to continue it)");
  }

  fs::create_directories(dir.root());
  open_session(s, dir.queries(), resume ? resume->ledger_next_seq : 0, dir.descriptions());
  json stored = snapshot;
  stored["run"]["model_id"] = s.config.run.model_id;
  if (!a.resume || !fs::exists(dir.config_snapshot())) atomic_write(dir.config_snapshot(), stored.dump(2) + "\n");

  RunOptions options;
  options.resume = std::move(resume);
  options.stop_after = a.stop_after;
  options.on_iteration = [&](const RunState& state) {
    dir.save_iteration(state);
    out << "iteration " << state.pool.iteration << ": best " << format_value(state.record(state.pool.retained.front()).score())
        << " (" << state.pool.archive.size() << " candidates scored)\n";
  };
  const auto result = run_autosep(*s.client, s.config.task, s.config.run, X, s.p0, std::move(options));
  dir.write_outputs(result.state);
  if (result.state.pool.iteration < s.config.run.iterations) {
    out << "stopped after iteration " << result.state.pool.iteration << "; continue with --resume\n";
  }
  out << "best prompt (" << format_value(result.best_score) << "):\n" << result.best.text << "\n";
  (void)err;
  return kExitOk;
}

struct EvalArgs {
  std::string config;
  std::string run_dir;
  std::vector<std::string> methods = {"all"};
  std::string prompt_file;
  std::vector<std::uint64_t> seeds;
  bool trajectory = false;
};

std::vector<std::string> expand_methods(const std::vector<std::string>& requested) {
  const auto& valid = eval_method_names();
  std::set<std::string> chosen;
  for (const auto& m : requested) {
    if (m == "all") {
      chosen.insert(valid.begin(), valid.end());
    } else if (std::find(valid.begin(), valid.end(), m) != valid.end()) {
      chosen.insert(m);
    } else {
      std::string names;
      for (const auto& v : valid) names += (names.empty() ? "" : ", ") + v;
      throw ConfigError("unknown evaluation method '" + m + "' (valid: " + names + ", all)");
    }
  }
  std::vector<std::string> out;
  for (const auto& v : valid) {
    if (chosen.contains(v)) out.push_back(v);
  }
  return out;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  Session s;
  s.config = load_cli_config(a.config);
  const auto methods = expand_methods(a.methods);
  const Dataset X = load_dataset(s.config.optimize_manifest);
  const Dataset eval_set = load_dataset(s.config.eval_manifest);
  require_disjoint(X, eval_set);
  validate_labels(eval_set, s.config.task.num_classes());
  finalize_run_config(s.config, X);

  const RunDirectory dir(a.run_dir);
  fs::create_directories(dir.root());
  const fs::path ledger_file = dir.root() / "eval_queries.log";
  std::uint64_t next_seq = 0;
  if (fs::exists(ledger_file)) next_seq = QueryLedger::read_file(ledger_file).size();
  open_session(s, ledger_file, next_seq, dir.descriptions());

  PromptCandidate prompt = s.p0;
  if (!a.prompt_file.empty()) {
    prompt = PromptCandidate::make(read_text_file(a.prompt_file));
  } else if (fs::exists(dir.best_prompt())) {
    prompt = PromptCandidate::make(read_text_file(dir.best_prompt()));
  } else if (std::find(methods.begin(), methods.end(), "with-descriptions") != methods.end()) {
    err << "warning: no best_prompt.txt in " << dir.root().string() << "; evaluating the initial prompt\n";
  }

  const auto seeds = a.seeds.empty() ? s.config.eval_seeds : a.seeds;
  std::vector<EvalRow> rows;
  for (auto seed : seeds) {
    EvalOptions options{seed, s.config.run.parallelism, 0};
    for (const auto& method : methods) {
      EvalResult r;
      Fingerprint used;
      if (method == "zero-shot") {
        r = eval_zero_shot(*s.client, eval_set, s.config.task, options);
      } else if (method == "with-descriptions") {
        r = eval_with_descriptions(*s.client, eval_set, s.config.task, prompt, options);
        used = prompt.fingerprint;
      } else if (method == "majority-vote") {
        r = eval_majority_vote(*s.client, eval_set, s.config.task, s.config.m_vote, options);
      } else if (method == "fewshot-random") {
        r = eval_fewshot_random(*s.client, eval_set, s.config.task, s.config.m_context, X, options);
      } else {
        r = eval_multi_image(*s.client, eval_set, s.config.task, s.config.m_context, X, options);
      }
      out << method << " seed=" << seed << " accuracy=" << format_value(r.accuracy) << " (" << r.correct << "/"
          << r.total << ", " << r.abstained << " abstained)\n";
      rows.push_back(EvalRow::from(r, used));
    }
  }
  atomic_write(dir.root() / "eval_results.csv", format_eval_csv(rows));

  if (a.trajectory) {
    const auto latest = dir.latest_checkpoint();
    if (!latest) throw DataError("--trajectory needs a checkpoint in " + dir.checkpoints().string());
    const RunState state = read_checkpoint(*latest);
    EvalOptions options{seeds.front(), s.config.run.parallelism, 0};
    const auto rows_t = compute_trajectory(*s.client, eval_set, s.config.task, state, options);
    atomic_write(dir.root() / "trajectory.csv", format_trajectory_csv(rows_t));
    for (const auto& r : rows_t) {
      out << "trajectory t=" << r.iteration << " score=" << format_value(r.best_score)
          << " accuracy=" << format_value(r.accuracy) << "\n";
    }
  }
  return kExitOk;
}

struct MakeMockArgs {
  std::string out_dir;
  int dims = 8;
  int classes = 3;
  double noise = 0.05;
  std::uint64_t seed = 0;
  int train_per_class = 20;
  int eval_per_class = 30;
};

int cmd_make_mock(const MakeMockArgs& a, std::ostream& out) {
  const fs::path root(a.out_dir);
  fs::create_directories(root / "images");
  const MockWorld world = MockWorld::standard(a.dims, a.classes, a.noise, a.seed);
  const Dataset train = generate_mock_dataset(world, root / "images", "opt", a.train_per_class,
                                              derive_seed(a.seed, "opt-images"));
  const Dataset eval = generate_mock_dataset(world, root / "images", "eval", a.eval_per_class,
                                             derive_seed(a.seed, "eval-images"));
  write_manifest(root / "optimize.csv", train, false);
  write_manifest(root / "eval.csv", eval, true);
  atomic_write(root / "world.json", json(world).dump(2) + "\n");

  std::vector<std::string> names;
  for (int c = 0; c < a.classes; ++c) names.push_back("species " + std::string(1, static_cast<char>('A' + c)));
  const json config = {
      {"task", {{"category_noun", "bird"}, {"class_names", names}}},
      {"optimize_manifest", "optimize.csv"},
      {"eval_manifest", "eval.csv"},
      {"backend", {{"kind", "mock"}, {"world", "world.json"}}},
      {"run",
       {{"iterations", 6}, {"negatives_k", 2}, {"beam_b", 4}, {"reflections_l", 3}, {"seed", a.seed},
        {"parallelism", 4}}},
      {"eval", {{"m_vote", 5}, {"m_context", 3}, {"seeds", {0, 1, 2}}}},
  };
  atomic_write(root / "config.json", config.dump(2) + "\n");
  out << "wrote " << train.size() << " optimization and " << eval.size() << " evaluation mock images to "
      << root.string() << "\n";
  return kExitOk;
}

}  // namespace

std::vector<std::string> CliConfig::violations() const {
  std::vector<std::string> v = run.violations();
  if (task.class_names.size() < 2) v.push_back("task.class_names needs at least 2 classes");
  if (task.class_names.size() > 26) v.push_back("task.class_names supports at most 26 classes");
  if (task.category_noun.empty()) v.push_back("task.category_noun must not be empty");
  if (m_vote < 1) v.push_back("eval.m_vote must be >= 1 (got " + std::to_string(m_vote) + ")");
  if (m_context < 1) v.push_back("eval.m_context must be >= 1 (got " + std::to_string(m_context) + ")");
  if (eval_seeds.empty()) v.push_back("eval.seeds must not be empty");
  if (retry.max_retries < 1) v.push_back("retry.max_retries must be >= 1");
  if (backend.kind == "mock" && !backend.world) v.push_back("backend.world is required for the mock backend");
  if (backend.kind == "http" && (backend.http.base_url.empty() || backend.http.model.empty())) {
    v.push_back("backend.base_url and backend.model are required for the http backend");
  }
  if (backend.kind != "mock" && backend.kind != "http") v.push_back("backend.kind must be 'mock' or 'http'");
  return v;
}

CliConfig load_cli_config(const fs::path& file) {
  json j;
  try {
    j = json::parse(read_text_file(file));
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  const fs::path base = file.parent_path();
  CliConfig c;
  try {
    c.task = j.at("task").get<TaskSpec>();
    c.optimize_manifest = resolve(base, j.at("optimize_manifest").get<std::string>());
    if (j.contains("eval_manifest")) c.eval_manifest = resolve(base, j.at("eval_manifest").get<std::string>());

    const json& b = j.at("backend");
    c.backend.kind = b.value("kind", std::string("mock"));
    if (c.backend.kind == "mock" && b.contains("world")) {
      const json& w = b.at("world");
      c.backend.world = w.is_string() ? json::parse(read_text_file(resolve(base, w.get<std::string>()))).get<MockWorld>()
                                      : w.get<MockWorld>();
    } else if (c.backend.kind == "http") {
      c.backend.http = b.get<HttpBackendConfig>();
    }

    const json run = j.value("run", json::object());
    read_opt(run, "iterations", c.run.iterations);
    read_opt(run, "negatives_k", c.run.negatives_k);
    read_opt(run, "beam_b", c.run.beam_b);
    read_opt(run, "reflections_l", c.run.reflections_l);
    if (run.contains("minibatch_size")) {
      c.run.minibatch_size = run.at("minibatch_size").get<int>();
      c.minibatch_explicit = true;
    }
    read_opt(run, "error_pairs_per_reflection", c.run.error_pairs_per_reflection);
    read_opt(run, "seed", c.run.seed);
    read_opt(run, "negatives", c.run.negatives);
    read_opt(run, "parallelism", c.run.parallelism);
    read_opt(run, "skip_failed", c.run.skip_failed);

    const json eval = j.value("eval", json::object());
    read_opt(eval, "m_vote", c.m_vote);
    read_opt(eval, "m_context", c.m_context);
    read_opt(eval, "seeds", c.eval_seeds);

    const json retry = j.value("retry", json::object());
    read_opt(retry, "max_retries", c.retry.max_retries);
    if (retry.contains("initial_backoff_ms")) {
      c.retry.initial_backoff = std::chrono::milliseconds(retry.at("initial_backoff_ms").get<int>());
    }
    read_opt(retry, "multiplier", c.retry.multiplier);

    if (j.contains("templates_dir")) c.templates_dir = resolve(base, j.at("templates_dir").get<std::string>());
    if (j.contains("initial_prompt")) c.initial_prompt = j.at("initial_prompt").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  return c;
}

std::unique_ptr<Backend> make_backend(const BackendSettings& settings) {
  if (settings.kind == "mock") {
    if (!settings.world) throw ConfigError("mock backend needs a world");
    return std::make_unique<MockBackend>(*settings.world);
  }
  if (settings.kind == "http") return std::make_unique<HttpBackend>(settings.http);
  throw ConfigError("unknown backend kind '" + settings.kind + "'");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"AutoSEP: unsupervised description-prompt optimization for multimodal classifiers", "autosep"};
  app.require_subcommand(1);

  OptimizeArgs opt;
  std::uint64_t seed_value = 0;
  int stop_value = 0;
  auto* optimize = app.add_subcommand("optimize", "Run the prompt optimizer");
  optimize->add_option("--config", opt.config, "Run configuration (JSON)")->required();
  optimize->add_option("--run-dir", opt.run_dir, "Run directory")->required();
  optimize->add_flag("--resume", opt.resume, "Continue from the latest checkpoint");
  optimize->add_flag("--dry-run", opt.dry_run, "Print the query budget and exit");
  auto* seed_opt = optimize->add_option("--seed", seed_value, "Override run.seed");
  auto* stop_opt = optimize->add_option("--stop-after", stop_value, "Stop after this iteration")->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate class-wise accuracy");
  eval->add_option("--config", ev.config, "Run configuration (JSON)")->required();
  eval->add_option("--run-dir", ev.run_dir, "Run directory")->required();
  eval->add_option("--methods", ev.methods, "Methods (comma separated) or 'all'")->delimiter(',');
  eval->add_option("--prompt", ev.prompt_file, "Description prompt file (default: best_prompt.txt)");
  eval->add_option("--seeds", ev.seeds, "Seeds (comma separated)")->delimiter(',');
  eval->add_flag("--trajectory", ev.trajectory, "Also evaluate the best prompt of every iteration");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Write analysis tables for a run");
  report->add_option("--run-dir", report_dir, "Run directory")->required();

  MakeMockArgs mock;
  auto* make_mock = app.add_subcommand("make-mock", "Generate a mock world, images, manifests and config");
  make_mock->add_option("--out", mock.out_dir, "Output directory")->required();
  make_mock->add_option("--dims", mock.dims, "Latent attributes");
  make_mock->add_option("--classes", mock.classes, "Number of classes");
  make_mock->add_option("--noise", mock.noise, "Description flip probability");
  make_mock->add_option("--seed", mock.seed, "World and image seed");
  make_mock->add_option("--train-per-class", mock.train_per_class, "Optimization images per class");
  make_mock->add_option("--eval-per-class", mock.eval_per_class, "Evaluation images per class");

  std::vector<const char*> argv{"autosep"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? kExitOk : kExitConfig;
  }
  if (*seed_opt) opt.seed = seed_value;
  if (*stop_opt) opt.stop_after = stop_value;

  try {
    if (*optimize) return cmd_optimize(opt, out, err);
    if (*eval) return cmd_eval(ev, out, err);
    if (*report) {
      out << write_report(report_dir);
      return kExitOk;
    }
    if (*make_mock) return cmd_make_mock(mock, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const BackendError& e) {
    err << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace autosep
