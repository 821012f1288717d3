#include <set>

#include "doctest.h"

#include "extractlab/extraction.hpp"
#include "test_support.hpp"

using namespace extractlab;
using namespace extractlab::testing;

namespace {

// Wraps an oracle and keeps a copy of every batch it answers.
class RecordingOracle final : public LabelOracle {
 public:
  explicit RecordingOracle(LabelOracle& inner) : inner_(inner) {}
  Matrix query(const Matrix& batch) override {
    batches.push_back(batch);
    return inner_.query(batch);
  }
  std::size_t remaining() const override { return inner_.remaining(); }
  std::size_t consumed() const override { return inner_.consumed(); }
  OracleMode mode() const override { return inner_.mode(); }
  std::size_t num_classes() const override { return inner_.num_classes(); }
  std::size_t input_dim() const override { return inner_.input_dim(); }

  std::vector<Matrix> batches;

 private:
  LabelOracle& inner_;
};

struct Fixture {
  Network secret;
  UnlabeledPool thief;
  LabeledDataset reference;

  explicit Fixture(Seed seed = 1) : secret(make_secret(seed)) {
    thief = gen_thief_pool(task_bounds(TaskKind::Rings), 400, 100, ThiefMode::Natural, seed);
    Rng rng(seed);
    reference.samples = random_matrix(rng, 300, 2, -3.0, 3.0);
    reference.targets = predict_top1(secret, reference.samples);
    reference.fold = Fold::Test;
  }

  static Network make_secret(Seed seed) {
    Rng rng(seed + 1000);
    return random_network(rng, 2, {16, 16}, 3);
  }
};

ExtractionConfig small_config(StrategyKind strategy, Seed seed = 3) {
  ExtractionConfig c;
  c.budget = 200;
  c.iterations = 3;
  c.strategy = strategy;
  c.substitute_spec = NetworkSpec::from_preset(Preset::LC, 2, 3);
  c.train_config = TrainConfig::desk(seed);
  c.train_config.max_epochs = 15;
  c.train_config.patience = 5;
  c.master_seed = seed;
  return c;
}

bool row_in(const Matrix& rows, const Matrix& haystack) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    bool found = false;
    for (Eigen::Index j = 0; j < haystack.rows() && !found; ++j) found = rows.row(i) == haystack.row(j);
    if (!found) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("plan_budget examples") {
  CHECK(plan_budget(20000, 10, 0.1, 0.2) == BudgetPlan{4000, 2000, 1400, 0});
  CHECK(plan_budget(100, 3, 0.1, 0.2) == BudgetPlan{20, 10, 23, 1});
  // B = 20, N = 10: 4 validation, 2 seed, 14 left, so k = 1 per round.
  CHECK(plan_budget(20, 10, 0.1, 0.2) == BudgetPlan{4, 2, 1, 4});
  CHECK_THROWS_AS(plan_budget(10, 10, 0.1, 0.2), InfeasiblePlan);
  CHECK_THROWS_AS(plan_budget(100, 0, 0.1, 0.2), InfeasiblePlan);
  CHECK_THROWS_AS(plan_budget(100, 3, 0.1, 0.0), InfeasiblePlan);
  CHECK_THROWS_AS(plan_budget(100, 3, 0.85, 0.2), InfeasiblePlan);
  CHECK_THROWS_AS(plan_budget(5, 1, 0.1, 0.2), InfeasiblePlan);  // k0 would be 0
}

TEST_CASE("plan_budget conserves the budget") {
  Rng rng(1);
  int feasible = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t b = 10 + rng.below(50000);
    const std::size_t n = 1 + rng.below(20);
    const double eta = rng.uniform(0.05, 0.5);
    const double sf = rng.uniform(0.01, 0.95 - eta);
    try {
      const BudgetPlan p = plan_budget(b, n, sf, eta);
      ++feasible;
      CHECK(p.n_valid + p.k0 + n * p.k + p.leftover == b);
      CHECK(p.leftover < n + 2);
      CHECK(p.k >= 1);
      CHECK(p.spent(n) <= b);
    } catch (const InfeasiblePlan&) {
    }
  }
  CHECK(feasible > 400);
}

TEST_CASE("agreement examples") {
  const std::vector<int> a = {0, 1, 2, 3};
  CHECK(agreement(a, a) == 1.0);
  CHECK(agreement(a, std::vector<int>{1, 2, 3, 0}) == 0.0);
  CHECK(agreement(a, std::vector<int>{0, 1, 2, 0}) == 0.75);
  CHECK_THROWS_AS(agreement(a, std::vector<int>{0}), InvalidArgument);
  CHECK_THROWS_AS(agreement(std::vector<int>{}, std::vector<int>{}), InvalidArgument);
}

TEST_CASE("a run spends exactly the planned budget and keeps its records straight") {
  const Fixture f;
  for (auto kind : {StrategyKind::Random, StrategyKind::Uncertainty, StrategyKind::KCenter,
                    StrategyKind::Adversarial, StrategyKind::Ensemble}) {
    CAPTURE(to_string(kind));
    const ExtractionConfig c = small_config(kind);
    SecretOracle secret_oracle(f.secret, OracleMode::Top1, 200);
    RecordingOracle oracle(secret_oracle);
    const ExtractionReport r = run_extraction(c, oracle, f.thief, f.reference);
    const BudgetPlan p = plan_budget(200, 3, 0.1, 0.2);
    CHECK(r.plan == p);
    CHECK(r.queries_consumed == p.spent(3));
    CHECK(secret_oracle.consumed() == p.spent(3));
    REQUIRE(r.records.size() == 4);
    for (std::size_t i = 0; i < r.records.size(); ++i) {
      CHECK(r.records[i].iteration == i);
      CHECK(r.records[i].labeled_count == p.k0 + i * p.k);
      CHECK(r.records[i].agreement >= 0.0);
      CHECK(r.records[i].agreement <= 1.0);
    }
    CHECK(r.final_agreement == r.records.back().agreement);
    CHECK(r.labeled_indices.size() == p.k0 + 3 * p.k);
    CHECK(std::set<std::size_t>(r.labeled_indices.begin(), r.labeled_indices.end()).size() ==
          r.labeled_indices.size());
    CHECK(r.valid_indices.size() == p.n_valid);
    for (std::size_t i : r.labeled_indices) CHECK(i < 400);
    for (std::size_t i : r.valid_indices) CHECK(i < 100);

    // Validation batch first, then the seed batch, then one batch of k per round.
    REQUIRE(oracle.batches.size() == 2 + 3);
    CHECK(oracle.batches[0].rows() == static_cast<Eigen::Index>(p.n_valid));
    CHECK(row_in(oracle.batches[0], f.thief.valid));
    CHECK(oracle.batches[1].rows() == static_cast<Eigen::Index>(p.k0));
    for (std::size_t b = 1; b < oracle.batches.size(); ++b) CHECK(row_in(oracle.batches[b], f.thief.train));
    for (std::size_t b = 2; b < oracle.batches.size(); ++b) {
      CHECK(oracle.batches[b].rows() == static_cast<Eigen::Index>(p.k));
    }
  }
}

TEST_CASE("strategies share the seed batch and differ afterwards") {
  const Fixture f;
  ExtractionConfig rc = small_config(StrategyKind::Random);
  rc.iterations = 1;
  ExtractionConfig uc = rc;
  uc.strategy = StrategyKind::Uncertainty;
  SecretOracle o1(f.secret, OracleMode::Top1, 200), o2(f.secret, OracleMode::Top1, 200);
  const ExtractionReport a = run_extraction(rc, o1, f.thief, f.reference);
  const ExtractionReport b = run_extraction(uc, o2, f.thief, f.reference);
  const std::size_t k0 = a.plan.k0;
  CHECK(std::equal(a.labeled_indices.begin(), a.labeled_indices.begin() + static_cast<std::ptrdiff_t>(k0),
                   b.labeled_indices.begin()));
  CHECK(a.valid_indices == b.valid_indices);
  CHECK_FALSE(a.labeled_indices == b.labeled_indices);
  CHECK(a.records[0].agreement == b.records[0].agreement);
  CHECK(a.queries_consumed == b.queries_consumed);
}

TEST_CASE("random strategy labels the same set as a single random batch") {
  const Fixture f(2);
  const ExtractionConfig c = small_config(StrategyKind::Random, 9);
  SecretOracle oracle(f.secret, OracleMode::Top1, 200);
  const ExtractionReport r = run_extraction(c, oracle, f.thief, f.reference);
  CHECK(r.labeled_indices == random_batch_indices(c, f.thief));
}

TEST_CASE("runs are byte-for-byte reproducible") {
  const Fixture f;
  for (auto kind : {StrategyKind::Random, StrategyKind::Ensemble}) {
    const ExtractionConfig c = small_config(kind, 5);
    SecretOracle o1(f.secret, OracleMode::Softmax, 500), o2(f.secret, OracleMode::Softmax, 500);
    ExtractionConfig cs = c;
    cs.oracle_mode = OracleMode::Softmax;
    const ExtractionReport a = run_extraction(cs, o1, f.thief, f.reference);
    const ExtractionReport b = run_extraction(cs, o2, f.thief, f.reference);
    CHECK(to_json(a).dump() == to_json(b).dump());
    CHECK(to_csv(a) == to_csv(b));
  }
}

TEST_CASE("preconditions are checked before any query") {
  const Fixture f;
  ExtractionConfig c = small_config(StrategyKind::Random);
  {
    SecretOracle oracle(f.secret, OracleMode::Top1, 199);
    CHECK_THROWS_AS(run_extraction(c, oracle, f.thief, f.reference), InvalidArgument);
    CHECK(oracle.consumed() == 0);
  }
  {
    SecretOracle oracle(f.secret, OracleMode::Softmax, 200);
    CHECK_THROWS_AS(run_extraction(c, oracle, f.thief, f.reference), InvalidArgument);
  }
  {
    UnlabeledPool tiny = f.thief;
    tiny.train = f.thief.train.topRows(100);
    SecretOracle oracle(f.secret, OracleMode::Top1, 200);
    CHECK_THROWS_AS(run_extraction(c, oracle, tiny, f.reference), InvalidArgument);
    tiny = f.thief;
    tiny.valid = f.thief.valid.topRows(10);
    CHECK_THROWS_AS(run_extraction(c, oracle, tiny, f.reference), InvalidArgument);
    CHECK(oracle.consumed() == 0);
  }
  {
    SecretOracle oracle(f.secret, OracleMode::Top1, 200);
    c.budget = 10;
    c.iterations = 10;
    CHECK_THROWS_AS(run_extraction(c, oracle, f.thief, f.reference), InfeasiblePlan);
  }
}

TEST_CASE("config validation and JSON round trip") {
  ExtractionConfig c = small_config(StrategyKind::Ensemble);
  CHECK(c.effective_rho() == 200);
  c.rho = 46;  // k = 46
  CHECK_NOTHROW(c.validate());
  c.rho = 45;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c.rho = 50;
  const ExtractionConfig back = extraction_config_from_json(to_json(c));
  CHECK(to_json(back).dump() == to_json(c).dump());
  CHECK(back.rho == 50);
  CHECK(back.train_config == c.train_config);
}

TEST_CASE("format_double is shortest round trip") {
  CHECK(format_double(0.75) == "0.75");
  CHECK(format_double(1.0) == "1");
  CHECK(std::stod(format_double(0.1 + 0.2)) == 0.1 + 0.2);
}
