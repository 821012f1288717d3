// Acceptance checks, one per criterion. Each prints a single PASS/FAIL line
// with the measured numbers; the process exits nonzero if any check fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>

#include "CLI11.hpp"

#include "extractlab/experiment.hpp"
#include "test_support.hpp"

using namespace extractlab;
using namespace extractlab::testing;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and sizes.
constexpr double kFdStep = 1e-4;
constexpr double kFdRelTol = 1e-4;
constexpr std::size_t kGradProbes = 100;
constexpr std::size_t kMaxParams = 10000;
constexpr std::size_t kSelectionInstances = 60;
constexpr std::size_t kBudgetConfigs = 100;
constexpr std::size_t kDeepFoolPoints = 200;
constexpr double kDeepFoolFlipRate = 0.95;
constexpr double kCurveGain = 0.05;
constexpr double kMonotoneSteps = 8.0;
constexpr double kThiefGap = 0.20;
constexpr double kSoftmaxSlack = 0.01;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("extractlab_acc_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// ---------------------------------------------------------------------------

Outcome gradient_check() {
  Rng rng(20240601);
  std::size_t probes = 0, failures = 0;
  double worst = 0.0;
  while (probes < kGradProbes) {
    const std::size_t input_dim = 2 + rng.below(9);
    std::vector<std::size_t> widths(1 + rng.below(3));
    for (auto& w : widths) w = 3 + rng.below(40);
    const std::size_t classes = 2 + rng.below(5);
    const double l2 = rng.uniform() < 0.5 ? 0.0 : 1e-3;
    const Network net = random_network(rng, input_dim, widths, classes, l2);
    if (net.parameter_count() > kMaxParams) continue;
    ++probes;

    const auto rows = static_cast<Eigen::Index>(1 + rng.below(5));
    const Matrix x = kink_free_batch(rng, net, rows);
    const Matrix t = rng.uniform() < 0.5 ? random_probs(rng, rows, static_cast<Eigen::Index>(classes))
                                         : Matrix(one_hot(argmax_rows(random_probs(rng, rows, static_cast<Eigen::Index>(classes))), classes));
    const std::vector<double> grads = backward(forward_trace(net, x, false), t);
    const std::vector<double> theta(net.parameters().begin(), net.parameters().end());
    for (int c = 0; c < 10; ++c) {
      const std::size_t i = rng.below(theta.size());
      const double e = rel_error(grads[i], central_difference_param(net.spec(), theta, i, x, t, kFdStep));
      worst = std::max(worst, e);
      failures += e > kFdRelTol ? 1 : 0;
    }
    const Vector x0 = x.row(0).transpose();
    const std::size_t cls = rng.below(classes);
    const Vector g = input_gradient(net, x0, cls);
    for (std::size_t j = 0; j < input_dim; ++j) {
      const double e = rel_error(g(static_cast<Eigen::Index>(j)), central_difference_input(net, x0, j, cls, kFdStep));
      worst = std::max(worst, e);
      failures += e > kFdRelTol ? 1 : 0;
    }
  }
  return {failures == 0, std::to_string(probes) + " probes, worst relative error " + fmt("%.2e", worst) +
                             ", failures " + std::to_string(failures)};
}

// ---------------------------------------------------------------------------

Outcome selection_oracles() {
  Rng rng(77);
  std::size_t mismatches = 0;
  for (std::size_t inst = 0; inst < kSelectionInstances; ++inst) {
    const std::size_t pool = 10 + rng.below(91);
    const std::size_t k = 1 + rng.below(10);
    const std::size_t classes = 2 + rng.below(5);
    const std::size_t dim = 2 + rng.below(4);
    const Network net = random_network(rng, dim, {6 + rng.below(10)}, classes);
    const Matrix samples = random_matrix(rng, static_cast<Eigen::Index>(pool), static_cast<Eigen::Index>(dim), -2.0, 2.0);

    SelectionContext ctx;
    ctx.substitute = &net;
    for (std::size_t i = 0; i < pool; ++i) ctx.pool_indices.push_back(2 * i + 5);
    ctx.pool_probs = forward(net, samples);
    // Every other instance uses exact entropy ties to exercise the tie rule.
    if (inst % 2 == 1) {
      for (Eigen::Index i = 0; i < ctx.pool_probs.rows(); i += 3) ctx.pool_probs.row(i) = ctx.pool_probs.row(0);
    }
    ctx.center_probs = random_probs(rng, static_cast<Eigen::Index>(1 + rng.below(8)), static_cast<Eigen::Index>(classes));
    ctx.k = k;
    auto to_idx = [&](const std::vector<std::size_t>& pos) {
      std::vector<std::size_t> out;
      for (std::size_t p : pos) out.push_back(ctx.pool_indices[p]);
      return out;
    };

    std::vector<double> h;
    for (Eigen::Index i = 0; i < ctx.pool_probs.rows(); ++i) {
      h.push_back(ref_entropy({ctx.pool_probs.row(i).begin(), ctx.pool_probs.row(i).end()}));
    }
    mismatches += select_uncertainty(ctx) == to_idx(sort_take(h, k, true)) ? 0 : 1;

    std::vector<double> alpha;
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
      const DeepFoolResult r = deepfool(net, samples.row(i).transpose());
      alpha.push_back(r.flipped ? (r.x_hat - samples.row(i).transpose()).squaredNorm()
                                : std::numeric_limits<double>::infinity());
    }
    mismatches += select_dfal(ctx, samples) == to_idx(sort_take(alpha, k, false)) ? 0 : 1;

    mismatches += select_kcenter(ctx) == to_idx(quadratic_kcenter(ctx.pool_probs, ctx.center_probs, k)) ? 0 : 1;
  }
  return {mismatches == 0, std::to_string(kSelectionInstances) + " instances x 3 strategies, mismatches " +
                               std::to_string(mismatches)};
}

// ---------------------------------------------------------------------------

Outcome budget_conservation() {
  Rng rng(31337);
  const UnlabeledPool thief = gen_thief_pool(task_bounds(TaskKind::Rings), 1000, 400, ThiefMode::Natural, 5);
  SyntheticTaskSpec task;
  task.n_train = 400;
  task.n_valid = 100;
  task.n_test = 300;
  const SyntheticFolds folds = gen_synthetic(task);
  TrainConfig quick = TrainConfig::desk(1);
  quick.max_epochs = 30;
  quick.patience = 5;
  const Network secret = train_network(folds.train, folds.valid, NetworkSpec::from_preset(Preset::LC, 2, 2), quick).network;
  const LabeledDataset reference{folds.test.samples, predict_top1(secret, folds.test.samples), Fold::Test};

  const StrategyKind kinds[] = {StrategyKind::Random, StrategyKind::Uncertainty, StrategyKind::KCenter,
                                StrategyKind::Adversarial, StrategyKind::Ensemble};
  std::size_t runs = 0, plan_errors = 0, spend_errors = 0, exhausted = 0;
  while (runs < kBudgetConfigs) {
    ExtractionConfig c;
    c.budget = 20 + rng.below(481);
    c.iterations = 1 + rng.below(6);
    c.validation_fraction = rng.uniform(0.05, 0.4);
    c.seed_fraction = rng.uniform(0.02, 0.9 - c.validation_fraction);
    c.strategy = kinds[runs % 5];
    c.substitute_spec = NetworkSpec::from_preset(Preset::LC, 2, 2);
    c.train_config = TrainConfig::desk(runs);
    c.train_config.max_epochs = 2;
    c.train_config.patience = 1;
    c.master_seed = rng.next();
    BudgetPlan plan;
    try {
      plan = plan_budget(c.budget, c.iterations, c.seed_fraction, c.validation_fraction);
      c.validate();
    } catch (const InvalidArgument&) {
      continue;  // infeasible draw, not one of the 100
    }
    ++runs;
    if (plan.n_valid + plan.k0 + c.iterations * plan.k + plan.leftover != c.budget) ++plan_errors;
    SecretOracle oracle(secret, OracleMode::Top1, c.budget);
    try {
      const ExtractionReport r = run_extraction(c, oracle, thief, reference);
      if (r.queries_consumed != plan.spent(c.iterations) || oracle.consumed() != plan.spent(c.iterations)) {
        ++spend_errors;
      }
    } catch (const BudgetExhausted&) {
      ++exhausted;
    }
  }
  return {plan_errors == 0 && spend_errors == 0 && exhausted == 0,
          std::to_string(runs) + " configs, plan errors " + std::to_string(plan_errors) + ", spend errors " +
              std::to_string(spend_errors) + ", budget exhausted " + std::to_string(exhausted)};
}

// ---------------------------------------------------------------------------

Outcome deepfool_efficacy() {
  SyntheticTaskSpec task;
  task.n_train = 4000;
  task.n_valid = 1000;
  task.n_test = 10;
  task.seed = 3;
  const SyntheticFolds folds = gen_synthetic(task);
  const Network substitute =
      train_network(folds.train, folds.valid, NetworkSpec::from_preset(Preset::BC, 2, 2), TrainConfig::desk(2)).network;
  const UnlabeledPool pool =
      gen_thief_pool(task_bounds(TaskKind::Rings), kDeepFoolPoints, 1, ThiefMode::Natural, 9);
  std::size_t flipped = 0, violations = 0;
  for (Eigen::Index i = 0; i < pool.train.rows(); ++i) {
    const Vector x = pool.train.row(i).transpose();
    const DeepFoolResult r = deepfool(substitute, x, {50, 1.02});
    if (!r.flipped) continue;
    ++flipped;
    const int before = predict_labels(substitute, Matrix(x.transpose()))[0];
    const int after = predict_labels(substitute, Matrix(r.x_hat.transpose()))[0];
    if (before == after || r.alpha != (r.x_hat - x).squaredNorm()) ++violations;
  }
  const double rate = static_cast<double>(flipped) / static_cast<double>(kDeepFoolPoints);
  return {rate >= kDeepFoolFlipRate && violations == 0,
          "flipped " + std::to_string(flipped) + "/" + std::to_string(kDeepFoolPoints) + " (" + fmt("%.3f", rate) +
              "), postcondition violations " + std::to_string(violations)};
}

// ---------------------------------------------------------------------------

struct Prepared {
  Network secret;
  LabeledDataset reference;
  UnlabeledPool thief;
};

Prepared prepare(const ExperimentConfig& c) {
  Network secret = train_secret(c).model;
  const SyntheticFolds folds = load_secret_task(c);
  LabeledDataset reference{folds.test.samples, predict_top1(secret, folds.test.samples), Fold::Test};
  UnlabeledPool thief = load_thief_pool(c, secret.spec().input_dim);
  return {std::move(secret), std::move(reference), std::move(thief)};
}

ExtractionReport extract_once(const ExperimentConfig& c, const Prepared& p, StrategyKind strategy, Seed seed) {
  const ExtractionConfig ec = make_extraction_config(c, c.budget, strategy, seed, p.secret.spec().input_dim,
                                                     p.secret.spec().num_classes);
  SecretOracle oracle(p.secret, c.mode, c.budget);
  return run_extraction(ec, oracle, p.thief, p.reference);
}

const std::vector<Seed> kFiveSeeds = {1, 2, 3, 4, 5};
const std::vector<Seed> kThreeSeeds = {1, 2, 3};

Outcome curve_gain() {
  ExperimentConfig c;  // rings, B = 2000, N = 10, natural thief
  const Prepared p = prepare(c);
  bool pass = true;
  std::string detail;
  for (StrategyKind s : {StrategyKind::Uncertainty, StrategyKind::KCenter, StrategyKind::Ensemble}) {
    double first = 0.0, last = 0.0, monotone = 0.0;
    for (Seed seed : kFiveSeeds) {
      const ExtractionReport r = extract_once(c, p, s, seed);
      first += r.records.front().agreement;
      last += r.final_agreement;
      for (std::size_t i = 1; i < r.records.size(); ++i) {
        monotone += r.records[i].agreement >= r.records[i - 1].agreement ? 1.0 : 0.0;
      }
    }
    const double n = static_cast<double>(kFiveSeeds.size());
    first /= n;
    last /= n;
    monotone /= n;
    const bool ok = last - first >= kCurveGain && monotone >= kMonotoneSteps;
    pass = pass && ok;
    detail += std::string(to_string(s)) + ": iter0 " + fmt("%.4f", first) + " -> final " + fmt("%.4f", last) +
              ", non-decreasing steps " + fmt("%.1f", monotone) + "/10; ";
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------

ExperimentConfig mnist_config() {
  const fs::path dir = EXTRACTLAB_DATA_DIR;
  ExperimentConfig c;
  c.task = "idx";
  c.idx_images = dir / "mnist-images-idx3-ubyte.gz";
  c.idx_labels = dir / "mnist-labels-idx1-ubyte.gz";
  c.thief_images = dir / "fashion-images-idx3-ubyte.gz";
  c.secret_arch = Preset::BC;
  c.substitute_arch = Preset::BC;
  c.budget = 5000;
  c.iterations = 5;
  c.strategy = StrategyKind::Random;
  return c;
}

Outcome thief_vs_noise() {
  ExperimentConfig natural = mnist_config();
  ExperimentConfig noise = natural;
  noise.thief = ThiefSource::Noise;
  noise.thief_train = 9600;
  noise.thief_valid = 2400;
  const Prepared pn = prepare(natural);
  Prepared pz = pn;
  pz.thief = load_thief_pool(noise, 784);
  double a_nat = 0.0, a_noise = 0.0;
  for (Seed seed : kThreeSeeds) {
    a_nat += extract_once(natural, pn, StrategyKind::Random, seed).final_agreement;
    a_noise += extract_once(noise, pz, StrategyKind::Random, seed).final_agreement;
  }
  a_nat /= static_cast<double>(kThreeSeeds.size());
  a_noise /= static_cast<double>(kThreeSeeds.size());
  return {a_nat - a_noise >= kThiefGap, "natural thief " + fmt("%.4f", a_nat) + ", uniform noise " +
                                            fmt("%.4f", a_noise) + ", gap " + fmt("%.4f", a_nat - a_noise)};
}

// ---------------------------------------------------------------------------

Outcome noise_skew() {
  const ExperimentConfig c = mnist_config();
  const Network secret = train_secret(c).model;
  const Matrix fashion = load_idx_images(c.thief_images);
  constexpr std::size_t kQueries = 5000;
  bool pass = true;
  std::string detail;
  for (Seed seed : kThreeSeeds) {
    std::vector<std::size_t> all(static_cast<std::size_t>(fashion.rows()));
    std::iota(all.begin(), all.end(), 0);
    const Matrix natural = select_rows(fashion, random_order(all, seed, kQueries));
    const Matrix noise = gen_thief_pool(Bounds::cube(784, 0.0, 1.0), kQueries, 1, ThiefMode::Noise, seed).train;
    SecretOracle oracle(secret, OracleMode::Top1, 2 * kQueries);
    const double h_nat = label_histogram_entropy(argmax_rows(oracle.query(natural)), 10);
    const std::vector<int> noise_labels = argmax_rows(oracle.query(noise));
    const double h_noise = label_histogram_entropy(noise_labels, 10);
    std::vector<int> counts(10, 0);
    for (int l : noise_labels) ++counts[static_cast<std::size_t>(l)];
    const auto top = std::max_element(counts.begin(), counts.end()) - counts.begin();
    pass = pass && h_noise < h_nat;
    detail += "seed " + std::to_string(seed) + ": H(noise) " + fmt("%.3f", h_noise) + " < H(thief) " +
              fmt("%.3f", h_nat) + " (noise mode label " + std::to_string(top) + "); ";
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------

ExperimentConfig mode_config() {
  ExperimentConfig c;  // rings, natural thief
  c.budget = 800;
  c.iterations = 5;
  c.secret_test = 20000;  // fine-grained agreement so near-perfect substitutes are distinguishable
  return c;
}

Outcome softmax_vs_top1() {
  ExperimentConfig top1 = mode_config();
  ExperimentConfig soft = top1;
  soft.mode = OracleMode::Softmax;
  const Prepared p = prepare(top1);
  double mean_top1 = 0.0, mean_soft = 0.0;
  std::size_t wins = 0;
  std::string per_seed;
  for (Seed seed : kFiveSeeds) {
    const double a = extract_once(top1, p, StrategyKind::Random, seed).final_agreement;
    const double b = extract_once(soft, p, StrategyKind::Random, seed).final_agreement;
    mean_top1 += a;
    mean_soft += b;
    wins += b > a ? 1 : 0;
    per_seed += fmt("%.4f", a) + "/" + fmt("%.4f", b) + " ";
  }
  const double n = static_cast<double>(kFiveSeeds.size());
  mean_top1 /= n;
  mean_soft /= n;
  return {mean_soft >= mean_top1 - kSoftmaxSlack && 2 * wins > kFiveSeeds.size(),
          "top1 mean " + fmt("%.4f", mean_top1) + ", softmax mean " + fmt("%.4f", mean_soft) + ", softmax wins " +
              std::to_string(wins) + "/5 (per seed top1/softmax: " + per_seed + ")"};
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    files[e.path().filename().string()] = read_file(e.path());
  }
  return files;
}

std::map<std::string, std::string> acceptance_outputs(const fs::path& dir) {
  // Rings: secret, a multi-strategy sweep, and extractions in both oracle modes.
  ExperimentConfig rings = mode_config();
  rings.out_dir = dir / "rings";
  cmd_train_secret(rings);
  rings.seeds = {1, 2};
  cmd_extract(rings);
  ExperimentConfig soft = rings;
  soft.mode = OracleMode::Softmax;
  soft.strategy = StrategyKind::Ensemble;
  cmd_extract(soft);
  ExperimentConfig sweep = rings;
  sweep.budget = 2000;
  sweep.iterations = 10;
  sweep.secret_test = 2000;
  sweep.budgets = {1000, 2000};
  sweep.strategies = {StrategyKind::Uncertainty, StrategyKind::KCenter};
  sweep.seeds = {1};
  cmd_sweep(sweep);

  // MNIST secret with the image thief.
  ExperimentConfig mnist = mnist_config();
  mnist.out_dir = dir / "mnist";
  cmd_train_secret(mnist);
  cmd_extract(mnist);

  std::map<std::string, std::string> out;
  for (const auto& sub : {"rings", "mnist"}) {
    for (auto& [name, bytes] : snapshot(dir / sub)) out[std::string(sub) + "/" + name] = std::move(bytes);
  }
  return out;
}

Outcome determinism() {
  // Same configuration, same output directory, run twice.
  TempDir dir("det");
  const auto first = acceptance_outputs(dir.path);
  fs::remove_all(dir.path / "rings");
  fs::remove_all(dir.path / "mnist");
  const auto second = acceptance_outputs(dir.path);
  std::size_t differing = 0;
  for (const auto& [name, bytes] : first) {
    const auto it = second.find(name);
    if (it == second.end() || it->second != bytes) ++differing;
  }
  return {differing == 0 && first.size() == second.size() && !first.empty(),
          std::to_string(first.size()) + " JSON/CSV files compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion (1-9); default all")->check(CLI::Range(0, 9));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_check},
      {"selection oracles", selection_oracles},
      {"budget conservation", budget_conservation},
      {"DeepFool efficacy", deepfool_efficacy},
      {"agreement gain over iterations (rings)", curve_gain},
      {"natural thief vs uniform noise (MNIST)", thief_vs_noise},
      {"noise label skew (MNIST)", noise_skew},
      {"softmax vs Top-1 (rings)", softmax_vs_top1},
      {"determinism", determinism},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<std::size_t>(only) != i + 1) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %zu %s: %s | %s | %.1fs\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
