#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "metagrad/eval/advfile.hpp"
#include "metagrad/eval/experiments.hpp"

namespace metagrad::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kIntegrity = 3, kNumerical = 4 };

struct DataSettings {
  std::string dataset = "synthetic";  // synthetic | cifar10
  std::string root;                   // defaults to $METAGRAD_DATA
  std::uint64_t data_seed = 1;
  std::size_t train_count = 8000;
  std::size_t test_count = 1000;
  std::size_t eval_count = 600;

  void add(CLI::App& app) {
    app.add_option("--dataset", dataset, "synthetic or cifar10")->check(CLI::IsMember({"synthetic", "cifar10"}));
    app.add_option("--data-root", root, "CIFAR-10 binary directory (default: $METAGRAD_DATA)");
    app.add_option("--data-seed", data_seed, "dataset generation / subsampling seed");
    app.add_option("--train-count", train_count, "synthetic training images");
    app.add_option("--test-count", test_count, "held-out images used for recorded accuracy");
    app.add_option("--eval-count", eval_count, "attack pool size before filtering");
  }

  std::string resolved_root() const {
    if (!root.empty()) return root;
    if (const char* env = std::getenv("METAGRAD_DATA")) return env;
    throw ConfigError("cifar10 needs --data-root or METAGRAD_DATA");
  }

  std::size_t side() const { return dataset == "cifar10" ? 32 : 16; }

  eval::SyntheticOptions synthetic() const {
    eval::SyntheticOptions o;
    o.train = train_count;
    o.test = test_count;
    o.eval = eval_count;
    return o;
  }

  /// Training and accuracy splits.
  std::pair<nn::LabeledSet, nn::LabeledSet> training() const {
    if (dataset == "synthetic") {
      auto d = eval::make_synthetic(data_seed, synthetic());
      return {std::move(d.train), std::move(d.test)};
    }
    const auto test = eval::load_cifar10_subset(resolved_root(), test_count, data_seed + 1);
    return {eval::load_cifar10_train(resolved_root()), nn::LabeledSet{test.images, test.labels}};
  }

  eval::EvalDataset evaluation() const {
    if (dataset == "synthetic") return eval::make_synthetic(data_seed, synthetic()).eval;
    return eval::load_cifar10_subset(resolved_root(), eval_count, data_seed);
  }

  nlohmann::json json() const {
    return {{"dataset", dataset},
            {"root", dataset == "cifar10" ? resolved_root() : ""},
            {"data_seed", data_seed},
            {"train_count", train_count},
            {"test_count", test_count},
            {"eval_count", eval_count}};
  }
};

struct AttackSettings {
  std::string method = "mim";
  std::string mgaa = "on";  // on | off | w/o-meta-train
  float epsilon = 8.0f;
  std::size_t tasks = 40;
  std::size_t inner_steps = 5;
  std::size_t ensemble = 5;
  float alpha = 1.0f;
  std::optional<float> beta;
  std::optional<float> mu;
  std::optional<float> dim_prob;
  std::optional<std::size_t> tim_kernel;
  std::optional<std::size_t> sim_copies;
  bool targeted = false;
  bool strict_meta_train = false;
  std::uint64_t seed = 0;
  std::size_t count = 200;  // images after filtering, 0 = all

  void add(CLI::App& app, bool with_mode = true) {
    app.add_option("--method", method, "fgsm, bim, mim, ni, dim, tim, ti-dim, si-ni");
    if (with_mode) {
      app.add_option("--mgaa", mgaa, "on, off (ensemble baseline) or w/o-meta-train")
          ->check(CLI::IsMember({"on", "off", "w/o-meta-train"}));
    }
    app.add_option("--epsilon", epsilon, "L-infinity budget in 0-255 units");
    app.add_option("--tasks", tasks, "T: tasks (baseline: iterations)");
    app.add_option("--inner-steps", inner_steps, "K: meta-train steps per task");
    app.add_option("--ensemble", ensemble, "n: meta-train ensemble size");
    app.add_option("--alpha", alpha, "meta-train step size");
    app.add_option("--beta", beta, "meta-test step size (default eps/T)");
    app.add_option("--mu", mu, "momentum decay (default from the method)");
    app.add_option("--dim-prob", dim_prob, "DIM transform probability");
    app.add_option("--tim-kernel", tim_kernel, "TIM kernel size (sigma = k/3)");
    app.add_option("--sim-copies", sim_copies, "SIM scale copies");
    app.add_flag("--targeted", targeted, "targeted attack toward random non-true classes");
    app.add_flag("--strict-meta-train", strict_meta_train, "plain sign-gradient meta-train (no host momentum)");
    app.add_option("--seed", seed, "attack seed");
    app.add_option("--count", count, "images to attack after filtering (0 = all)");
  }

  attack::MethodConfig method_config() const {
    attack::MethodConfig m = attack::parse_method(method);
    if (mu) m.momentum = *mu;
    if (dim_prob) {
      if (!m.dim) m.dim = attack::DimTransform{};
      m.dim->probability = *dim_prob;
    }
    if (tim_kernel) m.tim = attack::TimSmoothing{*tim_kernel, static_cast<float>(*tim_kernel) / 3.0f};
    if (sim_copies) m.sim_copies = *sim_copies;
    m.validate();
    return m;
  }

  mgaa::MgaaConfig mgaa_config() const {
    mgaa::MgaaConfig c;
    c.tasks = tasks;
    c.inner_steps = inner_steps;
    c.ensemble = ensemble;
    c.alpha = alpha;
    c.budget.epsilon = epsilon;
    c.beta = beta ? *beta : epsilon / static_cast<float>(tasks);
    c.method = method_config();
    c.targeted = targeted;
    c.seed = seed;
    c.strict_meta_train = strict_meta_train;
    return c;
  }

  eval::AttackPlan plan() const {
    const auto c = mgaa_config();
    if (mgaa == "off") return eval::AttackPlan::baseline(c);
    if (mgaa == "w/o-meta-train") return eval::AttackPlan::without_meta_train(c);
    return eval::AttackPlan::full(c);
  }
};

/// Zoo loading, filtering and target assignment shared by attack-type commands.
struct Prepared {
  nn::ModelZoo zoo;
  eval::EvalDataset data;
  eval::FilterReport filter;
};

inline Prepared prepare(const std::string& zoo_dir, const DataSettings& ds, const AttackSettings& as) {
  Prepared p{nn::load_zoo(zoo_dir), ds.evaluation(), {}};
  std::vector<std::size_t> all(p.zoo.size());
  std::iota(all.begin(), all.end(), 0);
  p.filter = eval::filter_correct(p.data, p.zoo.pointers(all));
  if (as.count > 0) {
    if (p.data.size() < as.count) {
      throw DataError("only " + std::to_string(p.data.size()) + " images survive filtering, " +
                      std::to_string(as.count) + " requested");
    }
    p.data = p.data.head(as.count);
  }
  if (as.targeted) eval::assign_targets(p.data, p.zoo[0].classes(), as.seed);
  return p;
}

inline nlohmann::json run_metadata(const Prepared& p, const DataSettings& ds, const mgaa::MgaaConfig& cfg,
                                   const std::string& mode, const std::string& zoo_dir) {
  return {{"zoo", zoo_dir},
          {"zoo_fingerprint", p.zoo.fingerprint()},
          {"data", ds.json()},
          {"source", p.data.source},
          {"filtered_out", p.filter.dropped},
          {"images", p.data.size()},
          {"mgaa", mode},
          {"config", mgaa::to_json(cfg)},
          {"targets", cfg.targeted ? "uniform over non-true classes, keyed by (seed, image id)" : "none"},
          {"norms", eval::kNormComment}};
}

inline std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& f : eval::detail::split(s, ',')) {
    if (!f.empty()) out.push_back(eval::detail::parse_number<std::size_t>(f, "list"));
  }
  return out;
}

inline std::vector<float> parse_float_list(const std::string& s) {
  std::vector<float> out;
  for (const auto& f : eval::detail::split(s, ',')) {
    if (f.empty()) continue;
    try {
      out.push_back(std::stof(f));
    } catch (const std::exception&) {
      throw ConfigError("cannot parse number '" + f + "'");
    }
  }
  return out;
}

class Cli {
 public:
  Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) { build(); }

  int run(int argc, const char* const* argv) {
    try {
      app_.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      std::ostringstream o, eo;
      const int code = app_.exit(e, o, eo);
      out_ << o.str();
      err_ << eo.str();
      return code == 0 ? kOk : kConfig;
    }
    try {
      dispatch();
      return kOk;
    } catch (const ConfigError& e) {
      err_ << "config error: " << e.what() << "\n";
      return kConfig;
    } catch (const DataError& e) {
      err_ << "data/zoo error: " << e.what() << "\n";
      return kIntegrity;
    } catch (const NumericalError& e) {
      err_ << "numerical error: " << e.what() << "\n";
      return kNumerical;
    } catch (const ShapeError& e) {
      err_ << "data/zoo error: " << e.what() << "\n";
      return kIntegrity;
    } catch (const std::exception& e) {
      err_ << "error: " << e.what() << "\n";
      return kFailure;
    }
  }

 private:
  void build() {
    app_.require_subcommand(1);
    app_.set_config("--config", "", "key-value config file (flags override it)");
    app_.add_option("--workers", workers_, "worker threads")->capture_default_str();

    train_ = app_.add_subcommand("train-zoo", "train the model zoo and write models + manifest");
    data_.add(*train_);
    train_->add_option("--zoo", zoo_dir_, "output directory")->required();
    train_->add_option("--epochs", train_opt_.train.epochs, "training epochs");
    train_->add_option("--lr", train_opt_.train.learning_rate, "initial learning rate");
    train_->add_option("--final-lr-fraction", train_opt_.train.final_lr_fraction, "final / initial learning rate");
    train_->add_option("--batch", train_opt_.train.batch_size, "minibatch size");
    train_->add_option("--train-momentum", train_opt_.train.momentum, "SGD momentum");
    train_->add_option("--adv-epsilon", train_opt_.adv_epsilon, "FGSM budget for adversarial training");
    train_->add_option("--accuracy-floor", accuracy_floor_, "minimum held-out accuracy (default 0.95 synthetic, 0.6 cifar10)");
    train_->add_option("--train-seed", train_opt_.seed, "training seed");

    attack_ = app_.add_subcommand("attack", "generate adversarial examples");
    data_.add(*attack_);
    attack_opt_.add(*attack_);
    attack_->add_option("--zoo", zoo_dir_, "zoo directory")->required();
    attack_->add_option("--out", out_path_, "adversarial tensor file")->required();
    attack_->add_flag("--quantize", quantize_, "round adversarial pixels to integers before saving");

    evaluate_ = app_.add_subcommand("evaluate", "success rates of an adversarial file against every zoo model");
    evaluate_->add_option("--zoo", zoo_dir_, "zoo directory")->required();
    evaluate_->add_option("--input", in_path_, "adversarial tensor file")->required();
    evaluate_->add_option("--out", out_path_, "CSV path")->required();

    analyze_ = app_.add_subcommand("analyze", "cosine, min-noise or ablation analysis");
    data_.add(*analyze_);
    attack_opt_.add(*analyze_, false);
    analyze_->add_option("--zoo", zoo_dir_, "zoo directory")->required();
    analyze_->add_option("--out", out_path_, "CSV path")->required();
    analyze_->add_option("--analysis", analysis_, "cosine, min-noise or ablation")
        ->required()
        ->check(CLI::IsMember({"cosine", "min-noise", "ablation"}));
    analyze_->add_option("--eps-max", eps_max_, "min-noise: largest budget searched");
    analyze_->add_option("--iterations", iterations_, "min-noise: bisection halvings");

    sweep_ = app_.add_subcommand("sweep", "hyperparameter or budget grid");
    data_.add(*sweep_);
    attack_opt_.add(*sweep_);
    sweep_->add_option("--zoo", zoo_dir_, "zoo directory")->required();
    sweep_->add_option("--out", out_path_, "CSV path")->required();
    sweep_->add_option("--kind", sweep_kind_, "budget, K, T or n")
        ->required()
        ->check(CLI::IsMember({"budget", "K", "T", "n"}));
    sweep_->add_option("--values", sweep_values_, "comma-separated grid values")->required();
    sweep_->add_option("--methods", sweep_methods_, "budget sweep: comma-separated methods (default --method)");
  }

  void log(const std::string& s) const { err_ << s << "\n"; }

  void write_resolved(const fs::path& path, CLI::App* sub, const nlohmann::json& extra) const {
    std::string text = "# resolved configuration\n" + app_.config_to_str(true, false);
    eval::write_text(path.string() + ".config.ini", text);
    nlohmann::json j = extra;
    j["subcommand"] = sub->get_name();
    eval::write_text(path.string() + ".config.json", j.dump(2) + "\n");
  }

  void dispatch() {
    if (*train_) return cmd_train_zoo();
    if (*attack_) return cmd_attack();
    if (*evaluate_) return cmd_evaluate();
    if (*analyze_) return cmd_analyze();
    if (*sweep_) return cmd_sweep();
  }

  void cmd_train_zoo() {
    train_opt_.accuracy_floor = accuracy_floor_ ? *accuracy_floor_ : (data_.dataset == "cifar10" ? 0.6 : 0.95);
    train_opt_.data_seed = data_.data_seed;
    const auto [train, test] = data_.training();
    const auto blueprint = nn::default_blueprint(3, data_.side(), 10);
    const auto zoo = eval::train_zoo(blueprint, train, test, train_opt_, workers_, [&](const nn::Classifier& m) {
      log("trained " + m.name() + ": held-out accuracy " + std::to_string(m.record().accuracy));
    });
    nn::save_zoo(zoo, zoo_dir_);
    const auto& t = train_opt_.train;
    write_resolved(fs::path(zoo_dir_) / "manifest.json", train_,
                   {{"data", data_.json()},
                    {"epochs", t.epochs},
                    {"learning_rate", t.learning_rate},
                    {"final_lr_fraction", t.final_lr_fraction},
                    {"momentum", t.momentum},
                    {"batch_size", t.batch_size},
                    {"adv_epsilon", train_opt_.adv_epsilon},
                    {"accuracy_floor", train_opt_.accuracy_floor},
                    {"train_seed", train_opt_.seed},
                    {"fingerprint", zoo.fingerprint()}});
    out_ << "zoo " << zoo.fingerprint() << " written to " << zoo_dir_ << "\n";
  }

  void cmd_attack() {
    const Prepared p = prepare(zoo_dir_, data_, attack_opt_);
    const eval::AttackPlan plan = attack_opt_.plan();
    const eval::Generated g = eval::generate(p.data, p.zoo, plan, workers_);
    eval::AdversarialFile f{g.adversarial, p.data.ids, p.data.labels, p.data.targets};
    if (quantize_) {
      for (float& v : f.images.values()) v = std::round(v);
    }
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      auto adv = f.images.sample(i);
      const Tensor x = p.data.image(i);
      const Tensor a(x.shape(), std::vector<float>(adv.begin(), adv.end()));
      if (plan.cfg.budget.epsilon > 0 && !attack::within_ball(a, x, plan.cfg.budget)) {
        throw NumericalError("adversarial image " + std::to_string(p.data.ids[i]) + " violates the eps-ball");
      }
    }
    eval::save_adversarial(f, out_path_);
    nlohmann::json meta = run_metadata(p, data_, plan.cfg, plan.label(), zoo_dir_);
    meta["quantized"] = quantize_;
    meta["wall_ms"] = g.wall_ms;
    eval::write_text(out_path_ + ".json", meta.dump(2) + "\n");
    write_resolved(out_path_, attack_, meta);
    out_ << "attacked " << p.data.size() << " images (" << p.filter.dropped << " filtered out) -> " << out_path_ << "\n";
  }

  void cmd_evaluate() {
    const nn::ModelZoo zoo = nn::load_zoo(zoo_dir_);
    const eval::AdversarialFile f = eval::load_adversarial(in_path_);
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(nn::read_file(in_path_ + ".json"));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("metadata for " + in_path_ + " is not valid JSON: " + e.what());
    }
    if (meta.at("zoo_fingerprint").get<std::string>() != zoo.fingerprint()) {
      throw DataError("zoo fingerprint differs from the one the adversarial file was generated against");
    }
    DataSettings ds;
    const auto& d = meta.at("data");
    ds.dataset = d.at("dataset").get<std::string>();
    ds.root = d.at("root").get<std::string>();
    ds.data_seed = d.at("data_seed").get<std::uint64_t>();
    ds.train_count = d.at("train_count").get<std::size_t>();
    ds.test_count = d.at("test_count").get<std::size_t>();
    ds.eval_count = d.at("eval_count").get<std::size_t>();
    const eval::EvalDataset pool = ds.evaluation();
    std::vector<std::size_t> idx;
    for (std::size_t id : f.ids) {
      const auto it = std::find(pool.ids.begin(), pool.ids.end(), id);
      if (it == pool.ids.end()) throw DataError("image id " + std::to_string(id) + " is not in the dataset");
      idx.push_back(static_cast<std::size_t>(it - pool.ids.begin()));
    }
    eval::EvalDataset data = pool.subset(idx);
    if (data.labels != f.labels) throw DataError("labels in the adversarial file disagree with the dataset");
    if (data.images.shape() != f.images.shape()) throw DataError("adversarial tensor shape disagrees with the dataset");
    data.targets = f.targets;
    const auto& c = meta.at("config");
    eval::AttackPlan plan;
    plan.cfg.tasks = c.at("T").get<std::size_t>();
    plan.cfg.inner_steps = c.at("K").get<std::size_t>();
    plan.cfg.ensemble = c.at("n").get<std::size_t>();
    plan.cfg.budget.epsilon = c.at("epsilon").get<float>();
    plan.cfg.seed = c.at("seed").get<std::uint64_t>();
    plan.cfg.targeted = c.at("targeted").get<bool>();
    if (plan.cfg.targeted && data.targets.empty()) throw DataError("targeted metadata but no target labels stored");
    plan.cfg.method = mgaa::method_from_json(c.at("method"));
    const std::string mode = meta.at("mgaa").get<std::string>();
    plan.mode = mode == "off" ? eval::Mode::Baseline : mode == "on" ? eval::Mode::Mgaa : eval::Mode::NoMetaTrain;
    const eval::ResultTable t = eval::evaluate_rows(data, f.images, zoo, plan, fs::path(in_path_).filename().string(),
                                                    meta.value("wall_ms", 0.0));
    eval::emit_csv(t, out_path_);
    nlohmann::json side = meta;
    side["evaluated"] = in_path_;
    eval::emit_sidecar(side, out_path_);
    write_resolved(out_path_, evaluate_, side);
    out_ << "wrote " << t.rows.size() << " rows to " << out_path_ << "\n";
  }

  eval::Harness harness(const Prepared& p, const std::string& prefix) const {
    return eval::Harness{p.data, p.zoo, workers_, prefix, [this](const std::string& s) { log(s); }};
  }

  void cmd_analyze() {
    const Prepared p = prepare(zoo_dir_, data_, attack_opt_);
    const auto cfg = attack_opt_.mgaa_config();
    const auto h = harness(p, analysis_);
    eval::ResultTable t;
    if (analysis_ == "ablation") {
      t = eval::ablation(h, cfg);
    } else {
      const std::vector<eval::AttackPlan> plans = {eval::AttackPlan::baseline(cfg), eval::AttackPlan::full(cfg)};
      t = analysis_ == "cosine" ? eval::cosine_table(h, plans) : eval::min_noise_table(h, plans, eps_max_, iterations_);
    }
    nlohmann::json meta = run_metadata(p, data_, cfg, "analysis:" + analysis_, zoo_dir_);
    if (analysis_ == "min-noise") meta["min_noise"] = {{"eps_max", eps_max_}, {"iterations", iterations_}, {"judges", "all black-box models"}};
    eval::emit_csv(t, out_path_);
    eval::emit_sidecar(meta, out_path_);
    write_resolved(out_path_, analyze_, meta);
    out_ << "wrote " << t.rows.size() << " rows to " << out_path_ << "\n";
  }

  void cmd_sweep() {
    const Prepared p = prepare(zoo_dir_, data_, attack_opt_);
    const auto h = harness(p, "sweep-" + sweep_kind_);
    eval::ResultTable t;
    if (sweep_kind_ == "budget") {
      std::vector<eval::AttackPlan> plans;
      const std::string methods = sweep_methods_.empty() ? attack_opt_.method : sweep_methods_;
      for (const auto& m : eval::detail::split(methods, ',')) {
        AttackSettings s = attack_opt_;
        s.method = m;
        plans.push_back(s.plan());
      }
      t = eval::budget_sweep(h, plans, parse_float_list(sweep_values_));
    } else {
      t = eval::hyperparam_sweep(h, attack_opt_.plan(), sweep_kind_[0], parse_list(sweep_values_));
    }
    nlohmann::json meta = run_metadata(p, data_, attack_opt_.mgaa_config(), attack_opt_.mgaa, zoo_dir_);
    meta["sweep"] = {{"kind", sweep_kind_}, {"values", sweep_values_}, {"methods", sweep_methods_}};
    eval::emit_csv(t, out_path_);
    eval::emit_sidecar(meta, out_path_);
    write_resolved(out_path_, sweep_, meta);
    out_ << "wrote " << t.rows.size() << " rows to " << out_path_ << "\n";
  }

  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_{"metagrad: gradient-based transfer attacks with meta gradient aggregation"};
  CLI::App* train_ = nullptr;
  CLI::App* attack_ = nullptr;
  CLI::App* evaluate_ = nullptr;
  CLI::App* analyze_ = nullptr;
  CLI::App* sweep_ = nullptr;

  std::size_t workers_ = eval::default_workers();
  DataSettings data_;
  AttackSettings attack_opt_;
  eval::ZooTrainingOptions train_opt_;
  std::optional<double> accuracy_floor_;
  std::string zoo_dir_, out_path_, in_path_;
  bool quantize_ = false;
  std::string analysis_;
  float eps_max_ = 32.0f;
  std::size_t iterations_ = 6;
  std::string sweep_kind_, sweep_values_, sweep_methods_;
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Cli cli(out, err);
  return cli.run(argc, argv);
}

}  // namespace metagrad::cli
