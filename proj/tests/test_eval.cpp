#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "metagrad/eval/advfile.hpp"
#include "metagrad/eval/dataset.hpp"
#include "metagrad/eval/experiments.hpp"
#include "metagrad/eval/metrics.hpp"
#include "metagrad/eval/results.hpp"
#include "support/fixtures.hpp"

using namespace metagrad;
using namespace metagrad::eval;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("metagrad_eval_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Random 3x8x8 images labelled by the first model's prediction.
EvalDataset labelled_by(const nn::Classifier& m, std::size_t count, std::uint64_t seed) {
  EvalDataset d;
  d.images = fixtures::random_image(seed, count);
  d.labels = m.predict(d.images);
  d.ids.resize(count);
  std::iota(d.ids.begin(), d.ids.end(), 0);
  d.source = "test";
  return d;
}

std::string cifar_record(unsigned char label, std::uint64_t seed) {
  Rng rng(seed);
  std::string r(1, static_cast<char>(label));
  for (int i = 0; i < 3072; ++i) r += static_cast<char>(rng.uniform_int(0, 255));
  return r;
}

}  // namespace

TEST(Synthetic, DeterministicUnderSeed) {
  SyntheticOptions o;
  o.train = 200;
  o.test = 50;
  o.eval = 30;
  const auto a = make_synthetic(4, o), b = make_synthetic(4, o), c = make_synthetic(5, o);
  EXPECT_TRUE(bitwise_equal(a.train.images, b.train.images));
  EXPECT_EQ(a.train.labels, b.train.labels);
  EXPECT_TRUE(bitwise_equal(a.eval.images, b.eval.images));
  EXPECT_FALSE(bitwise_equal(a.train.images, c.train.images));
  EXPECT_EQ(a.train.images.shape(), (Shape{200, 3, 16, 16}));
  for (float v : a.train.images.values()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 255.0f);
    ASSERT_EQ(v, std::round(v));
  }
}

TEST(Synthetic, SplitsDiffer) {
  SyntheticOptions o;
  o.train = 50;
  o.test = 50;
  o.eval = 50;
  const auto a = make_synthetic(4, o);
  EXPECT_FALSE(bitwise_equal(a.train.images, a.test.images));
  EXPECT_FALSE(bitwise_equal(a.test.images, a.eval.images));
}

TEST(Synthetic, ClassBalanceWithinOne) {
  for (std::size_t n : {97u, 100u, 603u}) {
    const auto d = make_synthetic(1, n, 10);
    std::vector<std::size_t> count(10);
    for (auto y : d.eval.labels) ++count[y];
    const auto [lo, hi] = std::minmax_element(count.begin(), count.end());
    EXPECT_LE(*hi - *lo, 1u);
    EXPECT_EQ(d.eval.size(), n);
  }
}

TEST(Synthetic, ZooMemberLearnsTheTask) {
  SyntheticOptions o;
  o.train = 8000;
  o.test = 1000;
  o.eval = 0;
  const auto d = make_synthetic(1, o);
  const auto spec = nn::default_blueprint()[6].spec;
  const nn::TrainOptions opt{12, 0.03f, 0.9f, 0.05f, 32, 3, 1};
  const auto m = nn::train(nn::build(spec, 3), d.train, opt, &d.test);
  EXPECT_GE(m.record().accuracy, 0.95) << spec.name;
  EXPECT_NEAR(nn::accuracy(m, d.test), m.record().accuracy, 0.001);
}

TEST(Cifar, RecordParsingRoundTrip) {
  const auto dir = temp_dir("cifar");
  std::string bytes;
  for (int i = 0; i < 5; ++i) bytes += cifar_record(static_cast<unsigned char>(i * 2), 10 + i);
  std::ofstream(dir / "test_batch.bin", std::ios::binary) << bytes;
  const auto all = load_cifar10_subset(dir, 10000, 1);
  ASSERT_EQ(all.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(all.labels[i], 2 * i);
    EXPECT_EQ(all.ids[i], i);
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data() + i * 3073);
    // R plane, then G, then B, each row-major 32x32.
    EXPECT_EQ(all.images[i * 3072 + 0], rec[1]);
    EXPECT_EQ(all.images[i * 3072 + 1024 + 33], rec[1 + 1024 + 33]);
    EXPECT_EQ(all.images[i * 3072 + 2048 + 1023], rec[1 + 2048 + 1023]);
  }
  const auto a = load_cifar10_subset(dir, 3, 9), b = load_cifar10_subset(dir, 3, 9);
  EXPECT_EQ(a.ids, b.ids);
  EXPECT_EQ(a.size(), 3u);
  EXPECT_TRUE(std::is_sorted(a.ids.begin(), a.ids.end()));
}

TEST(Cifar, MissingAndCorruptAreDistinct) {
  const auto dir = temp_dir("cifar_bad");
  EXPECT_THROW(load_cifar10_subset(dir, 10, 1), DatasetMissingError);
  std::ofstream(dir / "test_batch.bin", std::ios::binary) << std::string(100, 'x');
  EXPECT_THROW(load_cifar10_subset(dir, 10, 1), DatasetCorruptError);
  std::ofstream(dir / "test_batch.bin", std::ios::binary) << cifar_record(12, 1);
  EXPECT_THROW(load_cifar10_subset(dir, 10, 1), DatasetCorruptError);
}

TEST(Dataset, FilteringAndTargets) {
  const auto zoo = fixtures::random_zoo(3, 1);
  EvalDataset d = labelled_by(zoo[0], 60, 3);
  const auto rep = filter_correct(d, zoo.pointers(zoo.white_box()));
  EXPECT_EQ(rep.kept + rep.dropped, 60u);
  for (std::size_t w : zoo.white_box()) EXPECT_EQ(success_rate(d.images, d.labels, zoo[w], false), 0.0);
  EXPECT_EQ(d.ids.size(), d.size());

  assign_targets(d, 4, 7);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_NE(d.targets[i], d.labels[i]);
    EXPECT_LT(d.targets[i], 4u);
  }
  EvalDataset e = d.head(d.size());
  assign_targets(e, 4, 7);
  EXPECT_EQ(e.targets, d.targets);
}

TEST(Metrics, SuccessRateExamples) {
  const auto zoo = fixtures::random_zoo(1, 1);
  const EvalDataset d = labelled_by(zoo[0], 10, 5);
  EXPECT_EQ(success_rate(d.images, d.labels, zoo[0], false), 0.0);
  std::vector<std::size_t> wrong = d.labels;
  for (auto& y : wrong) y = (y + 1) % 4;
  EXPECT_EQ(success_rate(d.images, wrong, zoo[0], false), 1.0);
  EXPECT_EQ(success_rate(d.images, wrong, zoo[0], true, &d.labels), 1.0);
  EXPECT_THROW(success_rate(d.images, wrong, zoo[0], true), ConfigError);

  const auto pred = zoo[1].predict(d.images);
  std::size_t hand = 0;
  for (std::size_t i = 0; i < 10; ++i) hand += pred[i] != d.labels[i];
  EXPECT_DOUBLE_EQ(success_rate(d.images, d.labels, zoo[1], false), hand / 10.0);
}

TEST(Metrics, NormsAndCosine) {
  const Tensor a({1, 1, 1, 4}, {1, 2, 3, 4}), b({1, 1, 1, 4}, {1, 0, 3, 7});
  const auto n = perturbation_norms(a.values(), b.values());
  EXPECT_DOUBLE_EQ(n.linf, 3.0);
  EXPECT_DOUBLE_EQ(n.l1_raw, 5.0);
  EXPECT_DOUBLE_EQ(n.l1, 5.0 / 4);
  EXPECT_DOUBLE_EQ(n.l2_raw, std::sqrt(13.0));
  EXPECT_DOUBLE_EQ(n.l2, std::sqrt(13.0) / 4);
  EXPECT_TRUE(std::isnan(cosine(a.values(), Tensor({4}).values())));
}

TEST(Metrics, CosineAnalysisExamples) {
  const auto zoo = fixtures::random_zoo(1, 2);
  const EvalDataset d = labelled_by(zoo[0], 4, 6);
  const auto black = zoo.pointers(zoo.black_box());
  Tensor g = black[0]->input_gradient(d.images, d.labels);
  float peak = 0;
  for (float v : g.values()) peak = std::max(peak, std::fabs(v));
  for (float& v : g.values()) v *= 8.0f / peak;
  const CosineResult pos = cosine_analysis(add(d.images, g), d.images, d.labels, {black[0]});
  const CosineResult neg = cosine_analysis(subtract(d.images, g), d.images, d.labels, {black[0]});
  EXPECT_NEAR(pos.mean[0], 1.0, 1e-4);
  EXPECT_NEAR(neg.mean[0], -1.0, 1e-4);
  EXPECT_EQ(pos.used, 4u);
  Tensor adv = add(d.images, g);
  for (float& v : adv.sample(2)) v = 0;
  auto sample = d.images.sample(2);
  std::copy(sample.begin(), sample.end(), adv.sample(2).begin());
  const CosineResult skip = cosine_analysis(adv, d.images, d.labels, black);
  EXPECT_EQ(skip.skipped, 1u);
  EXPECT_EQ(skip.used, 3u);
  for (double m : skip.mean) {
    EXPECT_GE(m, -1.0);
    EXPECT_LE(m, 1.0);
  }
}

TEST(Metrics, BisectionAgainstMonotoneOracle) {
  std::size_t calls = 0;
  const auto b = bisect_min_epsilon([&](float e) { ++calls; return e >= 5.0f; }, 32.0f, 6);
  EXPECT_FALSE(b.censored);
  EXPECT_NEAR(b.epsilon, 5.0f, 0.5f);
  EXPECT_GE(b.epsilon, 5.0f);
  EXPECT_EQ(calls, 7u);
  for (float t : {0.3f, 1.7f, 12.2f, 31.9f}) {
    const auto r = bisect_min_epsilon([&](float e) { return e >= t; }, 32.0f, 10);
    EXPECT_GE(r.epsilon, t);
    EXPECT_LE(r.epsilon - t, 32.0f / 1024.0f);
  }
  EXPECT_TRUE(bisect_min_epsilon([](float) { return false; }, 32.0f, 6).censored);
  EXPECT_THROW(bisect_min_epsilon([](float) { return true; }, 0.0f, 6), ConfigError);
}

TEST(Metrics, MinNoiseSearch) {
  const Tensor x({1, 1, 1, 3}, {10, 20, 30});
  auto attack = [&](float eps) {
    Tensor a = x;
    for (float& v : a.values()) v += eps;
    return a;
  };
  const auto already = min_noise_search(x, attack, [](const Tensor&) { return true; }, 32.0f, 6);
  EXPECT_FALSE(already.censored);
  EXPECT_EQ(already.epsilon, 0.0f);
  EXPECT_EQ(already.norms.linf, 0.0);
  EXPECT_EQ(already.norms.l1, 0.0);
  EXPECT_EQ(already.norms.l2, 0.0);
  const auto found = min_noise_search(x, attack, [&](const Tensor& a) { return a[0] - x[0] >= 5.0f; }, 32.0f, 6);
  EXPECT_NEAR(found.epsilon, 5.0f, 0.5f);
  EXPECT_DOUBLE_EQ(found.norms.linf, found.epsilon);
  const auto never = min_noise_search(x, attack, [](const Tensor&) { return false; }, 32.0f, 6);
  EXPECT_TRUE(never.censored);
}

TEST(Results, CsvRoundTrip) {
  ResultTable t;
  EXPECT_EQ(parse_csv(to_csv(t)).rows.size(), 0u);
  const std::string empty = to_csv(t);
  EXPECT_EQ(std::count(empty.begin(), empty.end(), '\n'), 2);
  for (int i = 0; i < 4; ++i) {
    ResultRow r;
    r.run_id = "r/" + std::to_string(i);
    r.method = "ti-dim";
    r.mgaa = "on";
    r.model = "m" + std::to_string(i);
    r.model_role = i % 2 ? "black" : "white";
    r.epsilon = 0.1 * (i + 1);
    r.T = 40;
    r.K = 5;
    r.n = 5;
    r.success_rate = i / 7.0;
    r.mean_linf = 8;
    r.mean_l1 = 1.0 / 3;
    r.mean_l2 = 0.25;
    r.wall_ms = 12.5;
    r.seed = 3;
    r.images = 200;
    if (i == 2) {
      r.censored = 4;
      r.cosine = -0.125;
      r.mean_l1_raw = 12.75;
    }
    t.rows.push_back(r);
  }
  const std::string csv = to_csv(t);
  const auto back = parse_csv(csv);
  ASSERT_EQ(back.rows.size(), 4u);
  EXPECT_EQ(to_csv(back), csv);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back.rows[i].epsilon, t.rows[i].epsilon);
    EXPECT_NEAR(back.rows[i].success_rate, t.rows[i].success_rate, 5e-7);
  }
  EXPECT_EQ(back.rows[2].censored, 4u);
  EXPECT_EQ(*back.rows[2].cosine, -0.125);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line[0], '#');
  while (std::getline(lines, line)) EXPECT_EQ(std::count(line.begin(), line.end(), ','), 19);
  EXPECT_THROW(parse_csv("a,b\n1,2\n"), DataError);
  t.rows[0].model = "a,b";
  EXPECT_THROW(to_csv(t), ConfigError);
}

TEST(Results, AveragesByRole) {
  ResultTable t;
  for (int i = 0; i < 4; ++i) {
    ResultRow r;
    r.model_role = i < 2 ? "white" : "black";
    r.success_rate = i;
    r.mgaa = i % 2 ? "on" : "off";
    t.rows.push_back(r);
  }
  EXPECT_DOUBLE_EQ(t.average("black", [](const ResultRow&) { return true; }), 2.5);
  EXPECT_DOUBLE_EQ(t.average("white", [](const ResultRow& r) { return r.mgaa == "on"; }), 1.0);
}

TEST(AdversarialFile, RoundTripAndErrors) {
  AdversarialFile f{fixtures::random_tensor(1, {3, 3, 8, 8}, 50), {4, 9, 11}, {1, 2, 3}, {0, 0, 1}};
  const auto back = adversarial_from_bytes(to_bytes(f));
  EXPECT_TRUE(bitwise_equal(back.images, f.images));
  EXPECT_EQ(back.ids, f.ids);
  EXPECT_EQ(back.labels, f.labels);
  EXPECT_EQ(back.targets, f.targets);
  f.targets.clear();
  EXPECT_TRUE(adversarial_from_bytes(to_bytes(f)).targets.empty());
  const std::string bytes = to_bytes(f);
  EXPECT_THROW(adversarial_from_bytes("XXXX" + bytes.substr(4)), DataError);
  EXPECT_THROW(adversarial_from_bytes(bytes.substr(0, bytes.size() - 1)), DataError);
}

TEST(Experiments, EvaluateRowsAndBudgetSweep) {
  const auto zoo = fixtures::random_zoo(4, 2);
  const EvalDataset d = labelled_by(zoo[0], 6, 8);
  Harness h{d, zoo, 2, "t"};
  auto cfg = mgaa::MgaaConfig::defaults(8.0f, attack::mim());
  cfg.tasks = 4;
  cfg.inner_steps = 2;
  cfg.ensemble = 3;
  const std::vector<AttackPlan> plans = {AttackPlan::baseline(cfg), AttackPlan::full(cfg)};
  const auto t = budget_sweep(h, plans, {0.0f, 4.0f, 8.0f});
  ASSERT_EQ(t.rows.size(), 3 * 2 * zoo.size());
  for (std::size_t m = 0; m < zoo.size(); ++m) {
    double clean = success_rate(d.images, d.labels, zoo[m], false);
    EXPECT_EQ(t.rows[m].success_rate, clean);
    EXPECT_EQ(t.rows[m].mean_linf, 0.0);
  }
  for (const auto& r : t.rows) {
    EXPECT_LE(r.mean_linf, r.epsilon + 1e-6);
    EXPECT_GE(r.success_rate, 0.0);
    EXPECT_LE(r.success_rate, 1.0);
    EXPECT_EQ(r.images, d.size());
    EXPECT_EQ(r.K, r.mgaa == "on" ? 2u : 0u);
  }
  EXPECT_THROW(budget_sweep(h, plans, {8.0f, 4.0f}), ConfigError);
}

TEST(Experiments, SweepsAblationCosineMinNoise) {
  const auto zoo = fixtures::random_zoo(6, 2);
  const EvalDataset d = labelled_by(zoo[0], 4, 9);
  Harness h{d, zoo, 1, "t"};
  auto cfg = mgaa::MgaaConfig::defaults(8.0f, attack::mim());
  cfg.tasks = 3;
  cfg.inner_steps = 2;
  cfg.ensemble = 3;
  EXPECT_EQ(hyperparam_sweep(h, AttackPlan::full(cfg), 'K', {1, 2}).rows.size(), 2 * zoo.size());
  const auto tsweep = hyperparam_sweep(h, AttackPlan::full(cfg), 'T', {2, 4});
  EXPECT_EQ(tsweep.rows.front().T, 2u);
  EXPECT_EQ(hyperparam_sweep(h, AttackPlan::full(cfg), 'n', {2, 5}).rows.size(), 2 * zoo.size());
  EXPECT_THROW(hyperparam_sweep(h, AttackPlan::full(cfg), 'n', {6}), ConfigError);
  EXPECT_THROW(hyperparam_sweep(h, AttackPlan::full(cfg), 'q', {1}), ConfigError);

  const auto ab = ablation(h, cfg);
  ASSERT_EQ(ab.rows.size(), 3 * zoo.size());
  EXPECT_EQ(ab.rows[0].mgaa, "on");
  EXPECT_EQ(ab.rows[zoo.size()].mgaa, "w/o-meta-test");
  EXPECT_EQ(ab.rows[2 * zoo.size()].mgaa, "w/o-meta-train");

  const auto cos = cosine_table(h, {AttackPlan::baseline(cfg), AttackPlan::full(cfg)});
  ASSERT_EQ(cos.rows.size(), 2 * zoo.black_box().size());
  for (const auto& r : cos.rows) {
    ASSERT_TRUE(r.cosine.has_value());
    EXPECT_EQ(r.model_role, "black");
  }

  const auto mn = min_noise_table(h, {AttackPlan::full(cfg)}, 16.0f, 3);
  ASSERT_EQ(mn.rows.size(), 1u);
  EXPECT_TRUE(mn.rows[0].censored.has_value());
  EXPECT_TRUE(mn.rows[0].mean_l1_raw.has_value());
}

TEST(Experiments, GenerationIsDeterministicAcrossWorkerCounts) {
  const auto zoo = fixtures::random_zoo(6, 2);
  const EvalDataset d = labelled_by(zoo[0], 5, 10);
  auto cfg = mgaa::MgaaConfig::defaults(8.0f, attack::ti_dim());
  cfg.tasks = 3;
  cfg.inner_steps = 2;
  cfg.ensemble = 3;
  const auto a = generate(d, zoo, AttackPlan::full(cfg), 1);
  const auto b = generate(d, zoo, AttackPlan::full(cfg), 3);
  EXPECT_TRUE(bitwise_equal(a.adversarial, b.adversarial));
  const auto sub = d.subset({2, 4});
  const auto c = generate(sub, zoo, AttackPlan::full(cfg), 1);
  EXPECT_TRUE(std::equal(c.adversarial.sample(1).begin(), c.adversarial.sample(1).end(), a.adversarial.sample(4).begin()));
}
