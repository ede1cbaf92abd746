#include <functional>
#include <sstream>

#include "autosep/checkpoint.hpp"
#include "autosep/cli.hpp"
#include "autosep/report.hpp"
#include "autosep/storage.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace autosep;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

/// A small mock project: 4 images per class to optimize on, 5 to evaluate.
struct Project {
  testing::TempDir dir;
  fs::path config;

  explicit Project(std::function<void(nlohmann::json&)> edit = {}) {
    const auto made = run({"make-mock", "--out", dir.path().string(), "--seed", "5", "--train-per-class", "4",
                           "--eval-per-class", "5"});
    REQUIRE(made.code == 0);
    config = dir / "config.json";
    auto j = nlohmann::json::parse(read_text_file(config));
    j["run"]["iterations"] = 3;
    j["run"]["beam_b"] = 2;
    j["run"]["reflections_l"] = 2;
    j["eval"]["seeds"] = {0};
    if (edit) edit(j);
    atomic_write(config, j.dump(2));
  }

  std::string run_dir(const std::string& name = "run") const { return (dir / name).string(); }

  Outcome optimize(const std::string& name = "run", std::vector<std::string> extra = {}) const {
    std::vector<std::string> args = {"optimize", "--config", config.string(), "--run-dir", run_dir(name)};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  }
};

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("make-mock writes a usable project") {
  Project p;
  for (const char* name : {"world.json", "optimize.csv", "eval.csv", "config.json"}) CHECK(fs::exists(p.dir / name));
  CHECK(read_text_file(p.dir / "optimize.csv").rfind("id,path\n", 0) == 0);
  CHECK(load_dataset(p.dir / "optimize.csv").size() == 12);
  CHECK(load_dataset(p.dir / "eval.csv").size() == 15);
  const auto c = load_cli_config(p.config);
  CHECK(c.backend.kind == "mock");
  REQUIRE(c.backend.world.has_value());
  CHECK(c.optimize_manifest == p.dir / "optimize.csv");
  // n is only known once the manifest is loaded.
  auto sized = c;
  sized.run.dataset_size = 12;
  sized.run.minibatch_size = 12;
  CHECK(sized.violations().empty());
}

TEST_CASE("optimize runs to completion and checkpoints every iteration") {
  Project p;
  const auto r = p.optimize();
  CHECK(r.code == 0);
  const RunDirectory dir(p.run_dir());
  for (int t = 1; t <= 3; ++t) CHECK(fs::exists(dir.checkpoint(t)));
  CHECK_FALSE(fs::exists(dir.checkpoint(0)));
  for (const auto& f : {dir.config_snapshot(), dir.candidates(), dir.scores(), dir.queries(), dir.descriptions(),
                        dir.best_prompt()}) {
    CHECK(fs::exists(f));
  }
  const auto state = read_checkpoint(dir.checkpoint(3));
  CHECK(QueryLedger::read_file(dir.queries()).size() == state.ledger_next_seq);
  CHECK(r.out.find("best prompt") != std::string::npos);
}

TEST_CASE("invalid k is a configuration error naming k and n") {
  Project p([](nlohmann::json& j) { j["run"]["negatives_k"] = 12; });
  const auto r = p.optimize();
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("k=12") != std::string::npos);
  CHECK(r.err.find("n=12") != std::string::npos);
  CHECK_FALSE(fs::exists(p.dir / "run" / "queries.log"));
}

TEST_CASE("dry run prints the budget without calling the backend") {
  Project p;
  const auto r = p.optimize("run", {"--dry-run"});
  CHECK(r.code == 0);
  // n=12, k=2, b=2, l=2: (2 + 12 + 24) * 4.
  CHECK(r.out.find("= 152") != std::string::npos);
  CHECK_FALSE(fs::exists(p.dir / "run" / "queries.log"));
}

TEST_CASE("a non-empty run directory needs --resume; a finished run resumes as a no-op") {
  Project p;
  REQUIRE(p.optimize().code == 0);
  const RunDirectory dir(p.run_dir());
  const auto ledger_before = read_text_file(dir.queries());

  CHECK(p.optimize().code == kExitConfig);
  const auto again = p.optimize("run", {"--resume"});
  CHECK(again.code == 0);
  CHECK(again.out.find("nothing to do") != std::string::npos);
  CHECK(read_text_file(dir.queries()) == ledger_before);
}

TEST_CASE("stop and resume matches an uninterrupted run byte for byte") {
  Project p;
  REQUIRE(p.optimize("full").code == 0);
  REQUIRE(p.optimize("split", {"--stop-after", "1"}).code == 0);
  CHECK_FALSE(fs::exists(RunDirectory(p.run_dir("split")).checkpoint(2)));
  REQUIRE(p.optimize("split", {"--resume"}).code == 0);
  const RunDirectory full(p.run_dir("full")), split(p.run_dir("split"));
  for (int t = 1; t <= 3; ++t) CHECK(read_text_file(full.checkpoint(t)) == read_text_file(split.checkpoint(t)));
  CHECK(read_text_file(full.scores()) == read_text_file(split.scores()));
  CHECK(read_text_file(full.candidates()) == read_text_file(split.candidates()));
  CHECK(read_text_file(full.best_prompt()) == read_text_file(split.best_prompt()));
}

TEST_CASE("resume refuses a changed configuration") {
  Project p;
  REQUIRE(p.optimize("run", {"--stop-after", "1"}).code == 0);
  CHECK(p.optimize("run", {"--resume", "--seed", "99"}).code == kExitConfig);
}

TEST_CASE("eval writes one row per method and seed") {
  Project p;
  REQUIRE(p.optimize().code == 0);
  const auto eval_csv = fs::path(p.run_dir()) / "eval_results.csv";

  auto r = run({"eval", "--config", p.config.string(), "--run-dir", p.run_dir(), "--methods", "zero-shot"});
  CHECK(r.code == 0);
  CHECK(parse_eval_csv(read_text_file(eval_csv)).size() == 1);

  r = run({"eval", "--config", p.config.string(), "--run-dir", p.run_dir()});
  CHECK(r.code == 0);
  const auto rows = parse_eval_csv(read_text_file(eval_csv));
  CHECK(rows.size() == 5);
  CHECK(rows.at(1).method == "with-descriptions");
  CHECK(rows.at(1).prompt == fingerprint(read_text_file(RunDirectory(p.run_dir()).best_prompt())));

  r = run({"eval", "--config", p.config.string(), "--run-dir", p.run_dir(), "--methods", "bogus"});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("bogus") != std::string::npos);
}

TEST_CASE("report shows mean and sd over seeds and is byte-stable") {
  Project p;
  REQUIRE(p.optimize().code == 0);
  auto r = run({"report", "--run-dir", p.run_dir()});
  CHECK(r.code == 0);
  CHECK(r.out.find("unavailable") != std::string::npos);

  REQUIRE(run({"eval", "--config", p.config.string(), "--run-dir", p.run_dir(), "--methods",
               "zero-shot,with-descriptions", "--seeds", "0,1", "--trajectory"})
              .code == 0);
  r = run({"report", "--run-dir", p.run_dir()});
  CHECK(r.code == 0);
  const auto summary = read_text_file(fs::path(p.run_dir()) / "eval_summary.csv");
  CHECK(count_lines(summary) == 3);
  const auto aggregates = aggregate(parse_eval_csv(read_text_file(fs::path(p.run_dir()) / "eval_results.csv")));
  REQUIRE(aggregates.size() == 2);
  CHECK(aggregates[0].seeds == 2);
  CHECK(summary.find(format_value(aggregates[0].mean)) != std::string::npos);
  CHECK(summary.find(format_value(aggregates[0].sd)) != std::string::npos);
  CHECK(read_text_file(fs::path(p.run_dir()) / "correlation.csv").find("unavailable") == std::string::npos);

  const auto first = read_text_file(fs::path(p.run_dir()) / "summary.txt");
  CHECK(run({"report", "--run-dir", p.run_dir()}).out == r.out);
  CHECK(read_text_file(fs::path(p.run_dir()) / "summary.txt") == first);
}

TEST_CASE("usage errors exit with the configuration code") {
  CHECK(run({"optimize"}).code == kExitConfig);
  CHECK(run({"frobnicate"}).code == kExitConfig);
  testing::TempDir dir;
  atomic_write(dir / "bad.json", "{ not json");
  CHECK(run({"optimize", "--config", (dir / "bad.json").string(), "--run-dir", (dir / "r").string()}).code ==
        kExitConfig);
}

TEST_CASE("a missing manifest is a data error") {
  Project p([](nlohmann::json& j) { j["optimize_manifest"] = "missing.csv"; });
  CHECK(p.optimize().code == kExitData);
}
