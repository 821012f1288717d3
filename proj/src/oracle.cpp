#include "extractlab/oracle.hpp"

#include "json.hpp"

namespace extractlab {

std::string_view to_string(OracleMode mode) { return mode == OracleMode::Top1 ? "top1" : "softmax"; }

OracleMode parse_oracle_mode(std::string_view name) {
  if (name == "top1") return OracleMode::Top1;
  if (name == "softmax") return OracleMode::Softmax;
  throw InvalidArgument("unknown oracle mode '" + std::string(name) + "'");
}

BudgetExhausted::BudgetExhausted(std::size_t requested, std::size_t remaining)
    : std::runtime_error("query budget exhausted: requested " + std::to_string(requested) + ", remaining " +
                         std::to_string(remaining)),
      requested_(requested),
      remaining_(remaining) {}

SecretOracle::SecretOracle(Network model, OracleMode mode, std::size_t budget)
    : model_(std::move(model)), mode_(mode) {
  ledger_.budget = budget;
}

Matrix SecretOracle::query(const Matrix& batch) {
  const auto m = static_cast<std::size_t>(batch.rows());
  if (m == 0) throw InvalidArgument("query: empty batch");
  if (static_cast<std::size_t>(batch.cols()) != model_.spec().input_dim) {
    throw InvalidArgument("query: sample dimension mismatch");
  }
  {
    std::lock_guard lock(mutex_);
    const std::size_t left = ledger_.budget - ledger_.consumed;
    if (m > left) throw BudgetExhausted(m, left);
    ledger_.consumed += m;
    ledger_.calls.push_back({ledger_.calls.size(), m});
  }
  if (mode_ == OracleMode::Top1) return predict_top1(model_, batch);
  return forward(model_, batch);
}

std::size_t SecretOracle::remaining() const {
  std::lock_guard lock(mutex_);
  return ledger_.budget - ledger_.consumed;
}

std::size_t SecretOracle::consumed() const {
  std::lock_guard lock(mutex_);
  return ledger_.consumed;
}

QueryLedger SecretOracle::ledger() const {
  std::lock_guard lock(mutex_);
  return ledger_;
}

std::string handle_oracle_request(LabelOracle& oracle, std::string_view line) {
  nlohmann::json request;
  try {
    request = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error&) {
    return nlohmann::json{{"id", nullptr}, {"error", "malformed_request"}}.dump();
  }
  const nlohmann::json id = request.contains("id") ? request["id"] : nlohmann::json(nullptr);
  try {
    const auto& rows = request.at("x");
    if (!rows.is_array() || rows.empty()) return nlohmann::json{{"id", id}, {"error", "malformed_request"}}.dump();
    Matrix batch(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(oracle.input_dim()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!rows[i].is_array() || rows[i].size() != oracle.input_dim()) {
        return nlohmann::json{{"id", id}, {"error", "dimension_mismatch"}}.dump();
      }
      for (std::size_t j = 0; j < rows[i].size(); ++j) {
        batch(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j].get<double>();
      }
    }
    const Matrix labels = oracle.query(batch);
    nlohmann::json y = nlohmann::json::array();
    for (Eigen::Index i = 0; i < labels.rows(); ++i) {
      y.push_back(std::vector<double>(labels.row(i).begin(), labels.row(i).end()));
    }
    return nlohmann::json{{"id", id}, {"y", std::move(y)}}.dump();
  } catch (const BudgetExhausted&) {
    return nlohmann::json{{"id", id}, {"error", "budget_exhausted"}}.dump();
  } catch (const nlohmann::json::exception&) {
    return nlohmann::json{{"id", id}, {"error", "malformed_request"}}.dump();
  } catch (const InvalidArgument&) {
    return nlohmann::json{{"id", id}, {"error", "dimension_mismatch"}}.dump();
  }
}

std::size_t serve_oracle(LabelOracle& oracle, std::istream& in, std::ostream& out) {
  std::size_t handled = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out << handle_oracle_request(oracle, line) << '\n';
    out.flush();
    ++handled;
  }
  return handled;
}

}  // namespace extractlab
