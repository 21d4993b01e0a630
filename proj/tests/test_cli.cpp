#include <gtest/gtest.h>

#include <cmath>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "metagrad/cli/commands.hpp"

using namespace metagrad;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "metagrad");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return nn::read_file(p.string()); }

// Small synthetic problem shared by every test in this file.
const std::vector<std::string> kData = {"--train-count", "3000", "--test-count", "300", "--eval-count", "150",
                                        "--data-seed", "3"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Seven fast flatten models; the full blueprint takes minutes to train.
std::vector<nn::ZooBlueprint> small_blueprint() {
  const std::vector<std::pair<std::string, std::string>> bodies = {
      {"w0", "conv(6,3) relu maxpool(4) flatten"},
      {"w1", "conv(8,5) relu maxpool(4) flatten"},
      {"w2", "conv(4,3) relu maxpool(2) conv(8,3) relu maxpool(2) flatten"},
      {"w3", "conv(4,5) relu maxpool(2) conv(6,3) relu maxpool(2) flatten"},
      {"w4", "conv(6,3) relu maxpool(4) flatten dense(16) relu"},
      {"b0", "conv(8,3) relu maxpool(4) flatten"},
      {"b1", "conv(6,5) relu maxpool(2) maxpool(2) flatten"},
  };
  std::vector<nn::ZooBlueprint> out;
  for (const auto& [name, body] : bodies) {
    out.push_back({nn::ArchitectureSpec::parse("name=" + name + ";input=3x16x16;classes=10;layers=normalize " + body +
                                               " dense(10)"),
                   name[0] == 'w' ? nn::ModelRole::WhiteBox : nn::ModelRole::BlackBox, false});
  }
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  static fs::path dir_;
  static fs::path zoo_;
  static std::size_t models_;

  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("metagrad_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    zoo_ = dir_ / "zoo";
    const auto data = eval::make_synthetic(3, {10, 16, 3000, 300, 150});
    eval::ZooTrainingOptions opt;
    opt.train.epochs = 12;
    opt.accuracy_floor = 0.8;
    opt.seed = 1;
    opt.data_seed = 3;
    const auto zoo = eval::train_zoo(small_blueprint(), data.train, data.test, opt, 2);
    models_ = zoo.size();
    nn::save_zoo(zoo, zoo_);
  }

  // Extra flags replace the defaults below rather than repeating them.
  static std::vector<std::string> attack_args(const std::string& out, const std::vector<std::string>& extra = {}) {
    auto a = with({"attack", "--zoo", zoo_.string(), "--out", (dir_ / out).string(), "--count", "4", "--tasks",
                   "4", "--inner-steps", "2", "--ensemble", "3"},
                  kData);
    for (std::size_t i = 0; i < extra.size(); ++i) {
      const bool has_value = i + 1 < extra.size() && extra[i + 1].rfind("--", 0) != 0;
      const auto at = std::find(a.begin(), a.end(), extra[i]);
      if (at != a.end() && has_value) {
        *(at + 1) = extra[++i];
        continue;
      }
      a.push_back(extra[i]);
      if (has_value) a.push_back(extra[++i]);
    }
    return a;
  }
};

fs::path CliTest::dir_;
fs::path CliTest::zoo_;
std::size_t CliTest::models_ = 0;

}  // namespace

TEST_F(CliTest, TrainZooWritesManifestReproducibly) {
  const std::vector<std::string> args = {"train-zoo", "--epochs", "1", "--accuracy-floor", "0", "--train-count",
                                         "300", "--test-count", "100", "--eval-count", "10", "--data-seed", "2"};
  const fs::path a = dir_ / "full_a", b = dir_ / "full_b";
  auto r = invoke(with({"--workers", "2"}, with(args, {"--zoo", a.string()})));
  ASSERT_EQ(r.code, 0) << r.err;
  r = invoke(with({"--workers", "1"}, with(args, {"--zoo", b.string()})));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));

  const auto j = nlohmann::json::parse(slurp(a / "manifest.json"));
  ASSERT_EQ(j["models"].size(), 13u);
  std::size_t white = 0;
  for (const auto& m : j["models"]) white += m["role"] == "white";
  EXPECT_EQ(white, 10u);
  EXPECT_TRUE(fs::exists(a / "manifest.json.config.ini"));
  EXPECT_TRUE(fs::exists(a / "manifest.json.config.json"));
  const auto zoo = nn::load_zoo(a);
  const auto data = eval::make_synthetic(2, {10, 16, 300, 100, 10});
  for (std::size_t i = 0; i < zoo.size(); ++i) {
    EXPECT_NEAR(nn::accuracy(zoo[i], data.test), j["models"][i]["accuracy"].get<double>(), 0.001);
  }
}

TEST_F(CliTest, AccuracyFloorFailureNamesTheModel) {
  const auto r = invoke(with({"train-zoo", "--zoo", (dir_ / "weak").string(), "--epochs", "1", "--accuracy-floor",
                           "0.999", "--train-count", "300"},
                          {"--test-count", "100", "--eval-count", "10"}));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("wb_"), std::string::npos);
}

TEST_F(CliTest, DivergenceIsNumericalFailure) {
  const auto r = invoke({"train-zoo", "--zoo", (dir_ / "nan").string(), "--epochs", "1", "--lr", "1e30",
                      "--train-count", "100", "--test-count", "20", "--eval-count", "10"});
  EXPECT_EQ(r.code, 4) << r.err;
}

TEST_F(CliTest, AttackEvaluateDispatch) {
  for (const std::string mode : {"on", "off", "w/o-meta-train"}) {
    const std::string name = "adv_" + std::to_string(mode.size()) + ".mgat";
    const auto r = invoke(attack_args(name, {"--mgaa", mode, "--method", "ti-dim"}));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto meta = nlohmann::json::parse(slurp(dir_ / (name + ".json")));
    EXPECT_EQ(meta["mgaa"], mode);
    EXPECT_EQ(meta["config"]["method"]["name"], "ti-dim");
    const auto f = eval::load_adversarial(dir_ / name);
    EXPECT_EQ(f.ids.size(), 4u);
    const auto e = invoke({"evaluate", "--zoo", zoo_.string(), "--input", (dir_ / name).string(), "--out",
                        (dir_ / (name + ".csv")).string()});
    ASSERT_EQ(e.code, 0) << e.err;
    const auto t = eval::parse_csv(slurp(dir_ / (name + ".csv")));
    ASSERT_EQ(t.rows.size(), models_);
    for (const auto& row : t.rows) {
      EXPECT_EQ(row.mgaa, mode);
      EXPECT_EQ(row.images, 4u);
    }
    EXPECT_TRUE(fs::exists(dir_ / (name + ".csv.json")));
  }
}

TEST_F(CliTest, EvaluateMatchesIndependentRecount) {
  ASSERT_EQ(invoke(attack_args("recount.mgat", {"--count", "10", "--method", "mim"})).code, 0);
  ASSERT_EQ(invoke({"evaluate", "--zoo", zoo_.string(), "--input", (dir_ / "recount.mgat").string(), "--out",
                 (dir_ / "recount.csv").string()})
                .code,
            0);
  const auto zoo = nn::load_zoo(zoo_);
  const auto f = eval::load_adversarial(dir_ / "recount.mgat");
  const auto t = eval::parse_csv(slurp(dir_ / "recount.csv"));
  for (std::size_t m = 0; m < zoo.size(); ++m) {
    std::size_t fooled = 0;
    for (std::size_t i = 0; i < f.ids.size(); ++i) {
      const Tensor x({1, 3, 16, 16}, std::vector<float>(f.images.sample(i).begin(), f.images.sample(i).end()));
      fooled += zoo[m].predict(x)[0] != f.labels[i];
    }
    EXPECT_NEAR(t.rows[m].success_rate, fooled / 10.0, 1e-6) << zoo[m].name();
  }
}

TEST_F(CliTest, BenignImagesScoreZero) {
  ASSERT_EQ(invoke(attack_args("benign.mgat", {"--epsilon", "0", "--mgaa", "off"})).code, 0);
  ASSERT_EQ(invoke({"evaluate", "--zoo", zoo_.string(), "--input", (dir_ / "benign.mgat").string(), "--out",
                 (dir_ / "benign.csv").string()})
                .code,
            0);
  for (const auto& r : eval::parse_csv(slurp(dir_ / "benign.csv")).rows) EXPECT_EQ(r.success_rate, 0.0);
}

TEST_F(CliTest, AttackOutputsStayInBudgetAndQuantize) {
  ASSERT_EQ(invoke(attack_args("q.mgat", {"--quantize", "--epsilon", "4"})).code, 0);
  const auto f = eval::load_adversarial(dir_ / "q.mgat");
  for (float v : f.images.values()) EXPECT_EQ(v, std::round(v));
  const auto data = eval::make_synthetic(3, {10, 16, 3000, 300, 150}).eval;
  for (std::size_t i = 0; i < f.ids.size(); ++i) {
    const auto x = data.images.sample(f.ids[i]);
    const auto a = f.images.sample(i);
    for (std::size_t k = 0; k < x.size(); ++k) EXPECT_LE(std::fabs(a[k] - x[k]), 4.0f);
  }
}

TEST_F(CliTest, TargetedRunsStoreTargets) {
  ASSERT_EQ(invoke(attack_args("t.mgat", {"--targeted", "--method", "dim"})).code, 0);
  const auto f = eval::load_adversarial(dir_ / "t.mgat");
  ASSERT_EQ(f.targets.size(), f.labels.size());
  for (std::size_t i = 0; i < f.labels.size(); ++i) EXPECT_NE(f.targets[i], f.labels[i]);
}

TEST_F(CliTest, ConfigPrecedenceAndResolvedSidecar) {
  const fs::path ini = dir_ / "run.ini";
  std::ofstream(ini) << "[attack]\nepsilon=4\ntasks=3\nmethod=dim\n";
  const auto r = invoke({"--config", ini.string(), "attack", "--zoo", zoo_.string(), "--out",
                      (dir_ / "prec.mgat").string(), "--count", "2", "--tasks", "2", "--inner-steps", "1",
                      "--ensemble", "2", "--train-count", "3000", "--test-count", "300", "--eval-count", "150",
                      "--data-seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(dir_ / "prec.mgat.config.json"));
  EXPECT_EQ(j["config"]["epsilon"].get<float>(), 4.0f);
  EXPECT_EQ(j["config"]["T"].get<std::size_t>(), 2u);
  EXPECT_EQ(j["config"]["K"].get<std::size_t>(), 1u);
  EXPECT_EQ(j["config"]["method"]["name"], "dim");
  EXPECT_EQ(j["config"]["alpha"].get<float>(), 1.0f);
  const std::string resolved = slurp(dir_ / "prec.mgat.config.ini");
  EXPECT_NE(resolved.find("tasks=2"), std::string::npos);
  EXPECT_NE(resolved.find("epsilon=4"), std::string::npos);
  EXPECT_NE(resolved.find("inner-steps=1"), std::string::npos);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"attack", "--bogus"}).code, 2);
  EXPECT_EQ(invoke(attack_args("bad.mgat", {"--ensemble", "5"})).code, 2);
  EXPECT_EQ(invoke(attack_args("bad.mgat", {"--method", "cw"})).code, 2);
  EXPECT_EQ(invoke(attack_args("bad.mgat", {"--tim-kernel", "4"})).code, 2);
  EXPECT_EQ(invoke(attack_args("bad.mgat", {"--count", "100000"})).code, 3);
  EXPECT_EQ(invoke({"attack", "--zoo", (dir_ / "missing").string(), "--out", (dir_ / "x.mgat").string()}).code, 3);
  EXPECT_EQ(invoke({"evaluate", "--zoo", zoo_.string(), "--input", (dir_ / "missing.mgat").string(), "--out",
                 (dir_ / "x.csv").string()})
                .code,
            3);
  EXPECT_EQ(invoke({"train-zoo", "--zoo", (dir_ / "c").string(), "--dataset", "cifar10", "--data-root",
                 (dir_ / "nowhere").string()})
                .code,
            3);
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST_F(CliTest, EvaluateRefusesForeignZoo) {
  ASSERT_EQ(invoke(attack_args("foreign.mgat")).code, 0);
  const fs::path other = dir_ / "zoo_copy";
  fs::remove_all(other);
  fs::copy(zoo_, other);
  auto bytes = slurp(other / "00_w0.mgm");
  bytes[bytes.size() - 1] ^= 1;
  std::ofstream(other / "00_w0.mgm", std::ios::binary) << bytes;
  EXPECT_EQ(invoke({"evaluate", "--zoo", other.string(), "--input", (dir_ / "foreign.mgat").string(), "--out",
                 (dir_ / "f.csv").string()})
                .code,
            3);
}

TEST_F(CliTest, AnalyzeDispatch) {
  for (const std::string kind : {"cosine", "min-noise", "ablation"}) {
    const fs::path out = dir_ / ("an_" + kind + ".csv");
    const auto r = invoke(with({"analyze", "--zoo", zoo_.string(), "--out", out.string(), "--analysis", kind,
                             "--count", "3", "--tasks", "3", "--inner-steps", "1", "--ensemble", "2",
                             "--iterations", "2"},
                            kData));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = eval::parse_csv(slurp(out));
    ASSERT_FALSE(t.rows.empty()) << kind;
    const std::size_t want = kind == "cosine" ? 2 * 2 : kind == "min-noise" ? 2 : 3 * models_;
    EXPECT_EQ(t.rows.size(), want) << kind;
  }
}

TEST_F(CliTest, SweepRowCountsAndDegenerateGrid) {
  const fs::path out = dir_ / "sweep_k.csv";
  ASSERT_EQ(invoke(with({"sweep", "--zoo", zoo_.string(), "--out", out.string(), "--kind", "K", "--values", "1,2",
                      "--count", "3", "--tasks", "3", "--ensemble", "2"},
                     kData))
                .code,
            0);
  EXPECT_EQ(eval::parse_csv(slurp(out)).rows.size(), 2 * models_);

  const fs::path budget = dir_ / "sweep_eps.csv";
  ASSERT_EQ(invoke(with({"sweep", "--zoo", zoo_.string(), "--out", budget.string(), "--kind", "budget", "--values",
                      "2,4", "--methods", "mim,dim", "--count", "3", "--tasks", "3", "--inner-steps", "1",
                      "--ensemble", "2"},
                     kData))
                .code,
            0);
  EXPECT_EQ(eval::parse_csv(slurp(budget)).rows.size(), 2 * 2 * models_);

  const fs::path one = dir_ / "sweep_one.csv";
  ASSERT_EQ(invoke(with({"sweep", "--zoo", zoo_.string(), "--out", one.string(), "--kind", "K", "--values", "2",
                      "--count", "3", "--tasks", "3", "--ensemble", "2", "--seed", "4"},
                     kData))
                .code,
            0);
  ASSERT_EQ(invoke(attack_args("one.mgat", {"--count", "3", "--tasks", "3", "--inner-steps", "2", "--ensemble", "2",
                                         "--seed", "4"}))
                .code,
            0);
  ASSERT_EQ(invoke({"evaluate", "--zoo", zoo_.string(), "--input", (dir_ / "one.mgat").string(), "--out",
                 (dir_ / "one.csv").string()})
                .code,
            0);
  const auto a = eval::parse_csv(slurp(one)), b = eval::parse_csv(slurp(dir_ / "one.csv"));
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].success_rate, b.rows[i].success_rate);
    EXPECT_EQ(a.rows[i].mean_linf, b.rows[i].mean_linf);
  }
}

TEST_F(CliTest, RepeatedAttackIsByteIdentical) {
  ASSERT_EQ(invoke(with({"--workers", "3"}, attack_args("rep1.mgat", {"--method", "ti-dim"}))).code, 0);
  ASSERT_EQ(invoke(with({"--workers", "1"}, attack_args("rep2.mgat", {"--method", "ti-dim"}))).code, 0);
  EXPECT_EQ(slurp(dir_ / "rep1.mgat"), slurp(dir_ / "rep2.mgat"));
}
