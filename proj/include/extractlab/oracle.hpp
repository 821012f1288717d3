#pragma once

#include <cstddef>
#include <istream>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "extractlab/nn.hpp"

namespace extractlab {

enum class OracleMode { Top1, Softmax };

std::string_view to_string(OracleMode mode);
OracleMode parse_oracle_mode(std::string_view name);

// Raised when a query would push consumption past the budget. The rejected
// call is not charged.
class BudgetExhausted : public std::runtime_error {
 public:
  BudgetExhausted(std::size_t requested, std::size_t remaining);
  std::size_t requested() const { return requested_; }
  std::size_t remaining() const { return remaining_; }

 private:
  std::size_t requested_;
  std::size_t remaining_;
};

struct QueryLedger {
  struct Call {
    std::size_t index = 0;
    std::size_t batch_size = 0;
  };
  std::size_t budget = 0;
  std::size_t consumed = 0;
  std::vector<Call> calls;
};

// Label source seen by the extraction loop.
class LabelOracle {
 public:
  virtual ~LabelOracle() = default;
  // One label row per sample row: one-hot in Top-1 mode, probabilities in
  // softmax mode.
  virtual Matrix query(const Matrix& batch) = 0;
  virtual std::size_t remaining() const = 0;
  virtual std::size_t consumed() const = 0;
  virtual OracleMode mode() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual std::size_t input_dim() const = 0;
};

// Budget-metered black box around a secret network. Safe to share between
// threads: the check-and-charge step is serialized.
class SecretOracle final : public LabelOracle {
 public:
  SecretOracle(Network model, OracleMode mode, std::size_t budget);

  Matrix query(const Matrix& batch) override;
  std::size_t remaining() const override;
  std::size_t consumed() const override;
  OracleMode mode() const override { return mode_; }
  std::size_t num_classes() const override { return model_.spec().num_classes; }
  std::size_t input_dim() const override { return model_.spec().input_dim; }

  QueryLedger ledger() const;

 private:
  const Network model_;
  const OracleMode mode_;
  mutable std::mutex mutex_;
  QueryLedger ledger_;
};

// Line-delimited JSON protocol: {"id":n,"x":[[...]]} answered by
// {"id":n,"y":[[...]]} or {"id":n,"error":"budget_exhausted"}.
std::string handle_oracle_request(LabelOracle& oracle, std::string_view line);
// Answers one request per input line until EOF. Returns the number of lines handled.
std::size_t serve_oracle(LabelOracle& oracle, std::istream& in, std::ostream& out);

}  // namespace extractlab
