#include "autosep/report.hpp"

#include <cmath>
#include <sstream>

#include "autosep/checkpoint.hpp"
#include "autosep/errors.hpp"
#include "autosep/storage.hpp"

namespace autosep {

namespace fs = std::filesystem;

namespace {

std::vector<std::vector<std::string>> csv_rows(std::string_view text, std::string_view header) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw DataError("unexpected CSV header '" + line + "' (expected '" + std::string(header) + "')");
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(split_csv_line(line));
  }
  return rows;
}

constexpr std::string_view kEvalHeader = "method,seed,prompt,accuracy,correct,total,abstained";
constexpr std::string_view kTrajectoryHeader = "iteration,prompt,best_score,accuracy";

double score_at(const RunState& state, const Fingerprint& fp, int t) {
  const ScoreRecord* found = nullptr;
  for (const auto& r : state.score_log) {
    if (r.iteration > t) break;
    if (r.fingerprint == fp) found = &r;
  }
  return found ? found->value() : state.record(fp).score();
}

}  // namespace

std::vector<IterationSummary> iteration_summaries(const RunState& state) {
  std::vector<IterationSummary> out;
  for (std::size_t t = 0; t < state.history.size(); ++t) {
    const auto& retained = state.history[t];
    if (retained.empty()) continue;
    IterationSummary s;
    s.iteration = static_cast<int>(t);
    s.best = retained.front();
    s.retained = static_cast<int>(retained.size());
    s.best_score = score_at(state, retained.front(), s.iteration);
    double sum = 0.0;
    for (const auto& fp : retained) sum += score_at(state, fp, s.iteration);
    s.mean_score = sum / static_cast<double>(retained.size());
    out.push_back(s);
  }
  return out;
}

EvalRow EvalRow::from(const EvalResult& r, const Fingerprint& prompt) {
  return {r.method, r.seed, prompt, r.accuracy, r.correct, r.total, r.abstained};
}

std::string format_eval_csv(const std::vector<EvalRow>& rows) {
  std::string out = std::string(kEvalHeader) + "\n";
  for (const auto& r : rows) {
    out += csv_field(r.method) + "," + std::to_string(r.seed) + "," + r.prompt + "," + format_value(r.accuracy) + "," +
           std::to_string(r.correct) + "," + std::to_string(r.total) + "," + std::to_string(r.abstained) + "\n";
  }
  return out;
}

std::vector<EvalRow> parse_eval_csv(std::string_view text) {
  std::vector<EvalRow> out;
  for (const auto& f : csv_rows(text, kEvalHeader)) {
    if (f.size() != 7) throw DataError("eval_results.csv row has " + std::to_string(f.size()) + " fields");
    out.push_back({f[0], std::stoull(f[1]), f[2], std::stod(f[3]), std::stoi(f[4]), std::stoi(f[5]), std::stoi(f[6])});
  }
  return out;
}

std::vector<TrajectoryRow> compute_trajectory(Client& client, const Dataset& eval_set, const TaskSpec& task,
                                              const RunState& state, const EvalOptions& options) {
  std::vector<TrajectoryRow> out;
  for (const auto& s : iteration_summaries(state)) {
    EvalOptions opts = options;
    opts.iteration = s.iteration;
    const auto result = eval_with_descriptions(client, eval_set, task, state.record(s.best).prompt, opts);
    out.push_back({s.iteration, s.best, s.best_score, result.accuracy});
  }
  return out;
}

std::string format_trajectory_csv(const std::vector<TrajectoryRow>& rows) {
  std::string out = std::string(kTrajectoryHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iteration) + "," + r.prompt + "," + format_value(r.best_score) + "," +
           format_value(r.accuracy) + "\n";
  }
  return out;
}

std::vector<TrajectoryRow> parse_trajectory_csv(std::string_view text) {
  std::vector<TrajectoryRow> out;
  for (const auto& f : csv_rows(text, kTrajectoryHeader)) {
    if (f.size() != 4) throw DataError("trajectory.csv row has " + std::to_string(f.size()) + " fields");
    out.push_back({std::stoi(f[0]), f[1], std::stod(f[2]), std::stod(f[3])});
  }
  return out;
}

std::vector<MethodAggregate> aggregate(const std::vector<EvalRow>& rows) {
  std::vector<MethodAggregate> out;
  std::vector<std::vector<double>> values;
  for (const auto& r : rows) {
    std::size_t i = 0;
    while (i < out.size() && out[i].method != r.method) ++i;
    if (i == out.size()) {
      out.push_back({r.method});
      values.emplace_back();
    }
    values[i].push_back(r.accuracy);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& v = values[i];
    out[i].seeds = static_cast<int>(v.size());
    double sum = 0.0;
    for (double x : v) sum += x;
    out[i].mean = sum / static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - out[i].mean) * (x - out[i].mean);
      out[i].sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
  }
  return out;
}

std::string write_report(const fs::path& run_dir) {
  const RunDirectory dir(run_dir);
  const auto latest = dir.latest_checkpoint();
  if (!latest) throw DataError("no checkpoint found under " + dir.checkpoints().string() + " (run optimize first)");
  if (!fs::exists(dir.scores())) throw DataError("missing " + dir.scores().string());
  const RunState state = read_checkpoint(*latest);

  std::ostringstream summary;
  summary << "run: " << run_dir.string() << "\n";
  summary << "iterations completed: " << state.pool.iteration << " of " << state.config.iterations << "\n\n";

  const auto iterations = iteration_summaries(state);
  const auto diversity = diversity_by_iteration(state);
  std::string iter_csv = "iteration,best_prompt,best_score,mean_score,retained,diversity_mean\n";
  summary << "per-iteration sampled score (best / mean over retained), diversity mean\n";
  for (std::size_t i = 0; i < iterations.size(); ++i) {
    const auto& s = iterations[i];
    const double div = i < diversity.size() ? diversity[i].mean : 0.0;
    iter_csv += std::to_string(s.iteration) + "," + s.best + "," + format_value(s.best_score) + "," +
                format_value(s.mean_score) + "," + std::to_string(s.retained) + "," + format_value(div) + "\n";
    summary << "  t=" << s.iteration << "  best=" << format_value(s.best_score)
            << "  mean=" << format_value(s.mean_score) << "  diversity=" << format_value(div) << "\n";
  }
  atomic_write(run_dir / "iterations.csv", iter_csv);

  std::string div_csv = "iteration,prompt,keyword_count,unique_word_count,score\n";
  for (const auto& row : diversity) {
    for (const auto& s : row.scores) {
      div_csv += std::to_string(row.iteration) + "," + s.prompt_fingerprint + "," + std::to_string(s.keyword_count) +
                 "," + std::to_string(s.unique_word_count) + "," + format_value(s.score) + "\n";
    }
  }
  atomic_write(run_dir / "diversity.csv", div_csv);
  summary << "\ndiversity score = (|K|+|U|) / (2 max|K|), a normalisation convention of this tool\n";

  std::string corr_csv = "series_x,series_y,points,pearson,status\n";
  summary << "\ncorrelation (best sampled score vs class accuracy): ";
  const fs::path trajectory_file = run_dir / "trajectory.csv";
  if (fs::exists(trajectory_file)) {
    const auto rows = parse_trajectory_csv(read_text_file(trajectory_file));
    std::vector<double> xs;
    std::vector<double> ys;
    for (const auto& r : rows) {
      xs.push_back(r.best_score);
      ys.push_back(r.accuracy);
    }
    try {
      const double r = pearson(xs, ys);
      corr_csv += "best_score,accuracy," + std::to_string(xs.size()) + "," + format_value(r) + ",ok\n";
      summary << format_value(r) << " over " << xs.size() << " iterations\n";
    } catch (const Error& e) {
      corr_csv += "best_score,accuracy," + std::to_string(xs.size()) + ",,undefined\n";
      summary << "undefined (" << e.what() << ")\n";
    }
  } else {
    corr_csv += "best_score,accuracy,0,,unavailable\n";
    summary << "unavailable (run `eval --trajectory` first)\n";
  }
  atomic_write(run_dir / "correlation.csv", corr_csv);

  const fs::path eval_file = run_dir / "eval_results.csv";
  summary << "\nevaluation accuracy (mean +- sd over seeds): ";
  std::string agg_csv = "method,seeds,mean,sd\n";
  if (fs::exists(eval_file)) {
    summary << "\n";
    for (const auto& a : aggregate(parse_eval_csv(read_text_file(eval_file)))) {
      agg_csv += csv_field(a.method) + "," + std::to_string(a.seeds) + "," + format_value(a.mean) + "," +
                 format_value(a.sd) + "\n";
      summary << "  " << a.method << ": " << format_value(a.mean) << " +- " << format_value(a.sd) << " (" << a.seeds
              << " seeds)\n";
    }
  } else {
    summary << "unavailable (run `eval` first)\n";
  }
  atomic_write(run_dir / "eval_summary.csv", agg_csv);

  if (!state.pool.retained.empty()) {
    const auto& best = state.record(state.pool.retained.front());
    summary << "\nbest prompt (" << format_value(best.score()) << "):\n" << best.prompt.text << "\n";
  }
  const std::string text = summary.str();
  atomic_write(run_dir / "summary.txt", text);
  return text;
}

}  // namespace autosep
