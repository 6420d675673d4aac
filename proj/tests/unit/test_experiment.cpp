#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ende/annotator.hpp"
#include "ende/error.hpp"
#include "ende/experiment.hpp"
#include "ende/serialize.hpp"
#include "fixtures.hpp"

using namespace ende;
namespace fs = std::filesystem;

namespace {

// Toy train/test files plus a config pointing at them.
struct Workspace {
  testing::TempDir dir;
  ExperimentConfig cfg;

  Workspace() {
    testing::write_dataset_file(dir / "train.jsonl", testing::make_toy_corpus());
    testing::write_dataset_file(dir / "test.jsonl", testing::make_toy_test_corpus());
    std::ofstream(dir / "exp.cfg") << "# toy experiment\n"
                                      "train = train.jsonl\n"
                                      "test = test.jsonl\n"
                                      "out = out\n"
                                      "k = 1\n"
                                      "m = 3\n"
                                      "seeds = 1, 2, 3\n"
                                      "epochs = 2\n"
                                      "dim = 8\n"
                                      "token_dim = 8\n"
                                      "pos_dim = 4\n"
                                      "hidden = 4\n"
                                      "node_dim = 4\n";
    cfg = ExperimentConfig::load(dir / "exp.cfg");
  }
};

int run_cli(const std::string& args, std::string* out = nullptr) {
  const std::string capture = (fs::temp_directory_path() / ("ende-cli-" + std::to_string(::getpid()) + ".txt")).string();
  const int status = std::system((std::string(ENDE_CLI_PATH) + " " + args + " > " + capture + " 2>&1").c_str());
  if (out != nullptr) *out = testing::read_file(capture);
  fs::remove(capture);
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = ExperimentConfig::parse("k = 10\n# comment\n\nseeds = 4,5\nweights = 1, 0, 0\n", "/base");
  CHECK(cfg.integer("k") == 10);
  CHECK(cfg.seeds() == std::vector<std::uint64_t>{4, 5});
  CHECK(cfg.weights().semantic == 1.0);
  CHECK(cfg.integer("m") == 5);
  CHECK(cfg.checkpoint_path() == fs::path("out/checkpoint.json"));

  const auto rel = ExperimentConfig::parse("train = data/train.jsonl\nout = runs\n", "/base");
  CHECK(rel.path("train") == fs::path("/base/data/train.jsonl"));
  CHECK(rel.out_dir() == fs::path("/base/runs"));

  CHECK_THROWS_AS(ExperimentConfig::parse("colour = red\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("k 5\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("k = five\n").integer("k"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("seeds = \n").seeds(), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("weights = 0.5, 0.5\n").weights(), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("include_pos = maybe\n").prompt_template(), ConfigError);

  ExperimentConfig c;
  c.set_assignment("m=2");
  CHECK(c.integer("m") == 2);
  CHECK_THROWS_AS(c.set_assignment("m"), ConfigError);
  CHECK(c.render().find("m = 2\n") != std::string::npos);
}

TEST_CASE("output lock") {
  testing::TempDir dir;
  {
    OutputLock lock(dir.path());
    CHECK(fs::exists(dir / ".ende.lock"));
    CHECK_THROWS_AS(OutputLock{dir.path()}, Error);
  }
  CHECK_FALSE(fs::exists(dir / ".ende.lock"));
}

TEST_CASE("train then run with the oracle backend") {
  Workspace ws;
  const auto trace = run_training(ws.cfg);
  CHECK(trace.size() == 2);
  CHECK(fs::exists(ws.dir / "out/checkpoint.json"));
  CHECK(testing::read_file(ws.dir / "out/loss_trace.jsonl").find("\"epoch\":1") != std::string::npos);

  const auto outcome = run_experiment(ws.cfg);
  REQUIRE(outcome.seeds.size() == 3);
  CHECK(outcome.summary.mean_f1 == 1.0);
  CHECK(outcome.summary.sd_f1 == 0.0);
  for (const auto& s : outcome.seeds) {
    CHECK(s.report.f1 == 1.0);
    CHECK(s.effective_m <= 3);
    CHECK(fs::exists(ws.dir / ("out/seed_" + std::to_string(s.seed)) / "predictions.jsonl"));
    CHECK(fs::exists(ws.dir / ("out/seed_" + std::to_string(s.seed)) / "transcript.jsonl"));
  }
  CHECK(fs::exists(ws.dir / "out/summary.json"));
  CHECK(testing::read_file(ws.dir / "out/table.txt").find("100.00") != std::string::npos);
  CHECK(testing::read_file(ws.dir / "out/effective_config.txt").find("k = 1\n") != std::string::npos);

  SUBCASE("garbage replies score zero with diagnostics") {
    std::ofstream transcript(ws.dir / "garbage.jsonl");
    for (int i = 0; i < 24; ++i) transcript << R"({"reply":"I cannot help with that ###"})" << "\n";
    transcript.close();
    auto cfg = ws.cfg;
    cfg.set("backend", "mock-scripted");
    cfg.set("transcript", (ws.dir / "garbage.jsonl").string());
    cfg.set("out", (ws.dir / "garbage-out").string());
    cfg.set("checkpoint", (ws.dir / "out/checkpoint.json").string());
    const auto bad = run_experiment(cfg);
    CHECK(bad.summary.mean_f1 == 0.0);
    std::istringstream lines(testing::read_file(ws.dir / "garbage-out/seed_1/predictions.jsonl"));
    int n = 0;
    for (std::string line; std::getline(lines, line); ++n) {
      const auto j = Json::parse(line);
      CHECK(j.at("entities").empty());
      CHECK(j.at("diagnostics").at(0) == "no grammar matched");
    }
    CHECK(n == 8);
  }
  SUBCASE("failed requests are scored as empty predictions") {
    auto cfg = ws.cfg;
    cfg.set("backend", "mock-scripted");
    cfg.set("out", (ws.dir / "empty-out").string());
    cfg.set("checkpoint", (ws.dir / "out/checkpoint.json").string());
    const auto outcome2 = run_experiment(cfg);
    CHECK(outcome2.summary.mean_f1 == 0.0);
    CHECK(outcome2.seeds[0].failed_requests == 8);
  }
  SUBCASE("sweeps") {
    auto cfg = ws.cfg;
    cfg.set("seeds", "1");
    cfg.set("checkpoint", (ws.dir / "out/checkpoint.json").string());
    cfg.set("out", (ws.dir / "sweep-k").string());
    const auto rows = run_sweep(cfg, "k", {"1", "2"});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].summary.has_value());
    CHECK(rows[1].summary.has_value());
    const auto table = format_sweep_table("k", rows);
    CHECK(table.find("k=1") != std::string::npos);
    CHECK(table.find("k=2") != std::string::npos);
    CHECK(fs::exists(ws.dir / "sweep-k/k_2/summary.json"));

    cfg.set("out", (ws.dir / "sweep-b").string());
    const auto backends = run_sweep(cfg, "backend", {"mock-oracle", "mock-scripted-empty"});
    CHECK(backends[0].summary->mean_f1 == 1.0);
    CHECK(backends[1].summary->mean_f1 == 0.0);

    CHECK_THROWS_AS(run_sweep(cfg, "k", {"1", "1"}), ConfigError);
    CHECK_THROWS_AS(run_sweep(cfg, "tau", {"1"}), ConfigError);

    const auto failing = run_sweep(cfg, "k", {"1", "50"});
    CHECK(failing[0].summary.has_value());
    CHECK_FALSE(failing[1].summary.has_value());
    CHECK(failing[1].error.find("< 50") != std::string::npos);
  }
}

TEST_CASE("run needs a checkpoint") {
  Workspace ws;
  CHECK_THROWS_WITH_AS(run_experiment(ws.cfg), doctest::Contains("checkpoint"), ConfigError);
}

TEST_CASE("predictions file") {
  testing::TempDir dir;
  std::ofstream(dir / "p.jsonl") << R"({"id":"a","entities":[{"start":0,"end":1,"label":"PER"}]})" << "\n";
  const auto p = load_predictions(dir / "p.jsonl");
  CHECK(p.at("a") == std::vector<EntitySpan>{{0, 1, "PER"}});
  std::ofstream(dir / "bad.jsonl") << "{\n";
  CHECK_THROWS_AS(load_predictions(dir / "bad.jsonl"), DataError);
}

TEST_CASE("external annotator") {
  ExternalAnnotator annotator(std::string("python3 ") + ENDE_TEST_DATA_DIR + "/fake_annotator.py");
  const auto b = annotator.annotate({"s", {"a", "(", "b"}});
  CHECK(b.pos == std::vector<std::string>{"X", "X", "X"});
  CHECK(b.tree.leaf_count() == 3);
  CHECK_THROWS_AS(annotator.annotate({"bad", {"a", "b"}}), DataError);

  std::vector<AnnotatedExample> examples(2);
  examples[0].sentence = {"x", {"p", "q"}};
  examples[1] = testing::make_toy_corpus().examples[0];
  CHECK(annotate_missing(examples, annotator) == 1);
  CHECK(examples[0].boundary.has_value());
}

TEST_CASE("command line") {
  Workspace ws;
  std::string out;
  CHECK(run_cli("validate " + (ws.dir / "train.jsonl").string(), &out) == 0);
  CHECK(out.find("20 sentences") != std::string::npos);
  CHECK(run_cli("validate " + (ws.dir / "nope.jsonl").string(), &out) == 2);
  CHECK(out.find("nope.jsonl") != std::string::npos);
  std::ofstream(ws.dir / "broken.jsonl") << R"({"id":"s1","tokens":["a","b"],"entities":[{"start":0,"end":3,"label":"P"}]})"
                                          << "\n";
  CHECK(run_cli("validate " + (ws.dir / "broken.jsonl").string(), &out) == 1);
  CHECK(out.find("span end 3 > sentence length 2") != std::string::npos);

  CHECK(run_cli("stats " + (ws.dir / "train.jsonl").string(), &out) == 0);
  const auto stats = Json::parse(out);
  CHECK(stats.at("sentences") == 20);
  CHECK(stats.at("nested_pairs").get<int>() > 0);

  CHECK(run_cli("frobnicate", &out) == 2);
  CHECK(run_cli("run --config " + (ws.dir / "missing.cfg").string(), &out) == 2);
  CHECK(run_cli("run --config " + (ws.dir / "exp.cfg").string() + " --set colour=red", &out) == 2);

  const std::string cfg = " --config " + (ws.dir / "exp.cfg").string();
  CHECK(run_cli("train" + cfg + " --set epochs=1", &out) == 0);
  CHECK(run_cli("run" + cfg + " --set seeds=1", &out) == 0);
  CHECK(out.find("100.00") != std::string::npos);
  CHECK(run_cli("score " + (ws.dir / "test.jsonl").string() + " " + (ws.dir / "out/seed_1/predictions.jsonl").string(),
                &out) == 0);
  CHECK(Json::parse(out).at("f1") == 1.0);
  const int sweep_rc = run_cli("sweep" + cfg + " --set seeds=1 --set checkpoint=" + (ws.dir / "out/checkpoint.json").string() + " --axis m --values 1,2 --out " + (ws.dir / "sw").string(), &out);
  CHECK_MESSAGE(sweep_rc == 0, out);
  CHECK(out.find("m=2") != std::string::npos);
  CHECK(run_cli("train" + cfg + " --set learning_rate=inf --set epochs=1", &out) == 1);
  CHECK(out.find("diverged") != std::string::npos);
}
