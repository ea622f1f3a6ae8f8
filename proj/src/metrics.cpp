#include "knnssd/metrics.hpp"

#include <cmath>
#include <map>

#include <Eigen/Dense>

namespace knnssd {

double cost_coefficient_simple(double skip_ratio) {
  if (!(skip_ratio >= 0.0 && skip_ratio < 1.0)) {
    throw ValidationError("skip ratio must be in [0, 1)");
  }
  return 1.0 - skip_ratio;
}

double cost_coefficient_weighted(double mlp_skip_ratio, double attention_skip_ratio, double beta) {
  if (!(beta > 0.0)) throw ValidationError("beta must be > 0");
  if (!(mlp_skip_ratio >= 0.0 && mlp_skip_ratio <= 1.0) ||
      !(attention_skip_ratio >= 0.0 && attention_skip_ratio <= 1.0)) {
    throw ValidationError("skip ratios must be in [0, 1]");
  }
  return ((1.0 - mlp_skip_ratio) + (1.0 - attention_skip_ratio) * beta) / (1.0 + beta);
}

double cost_coefficient(const SkipMask& mask, double beta) {
  return cost_coefficient_weighted(mask.mlp_skip_ratio(), mask.attention_skip_ratio(), beta);
}

double expected_speedup(double mean_accepted_len, double acceptance_rate, double c) {
  if (!(mean_accepted_len >= 1.0)) throw ValidationError("M must be >= 1");
  if (!(acceptance_rate > 0.0 && acceptance_rate <= 1.0)) {
    throw ValidationError("alpha must be in (0, 1]");
  }
  if (!(c > 0.0 && c <= 1.0)) throw ValidationError("cost coefficient must be in (0, 1]");
  const double denom = (mean_accepted_len - 1.0) * c + acceptance_rate;
  return mean_accepted_len * acceptance_rate / denom;
}

namespace {

SpeedupRow summarize(std::string label, const std::vector<const RunRecord*>& rs) {
  SpeedupRow row;
  row.label = std::move(label);
  row.records = static_cast<int>(rs.size());
  double weighted_c = 0.0;
  double c_sum = 0.0;
  double method_cost = 0.0;
  double vanilla_cost = 0.0;
  for (const RunRecord* r : rs) {
    row.drafted += r->stats.drafted_tokens;
    row.accepted += r->stats.accepted_tokens;
    row.passes += r->stats.target_forward_passes;
    row.emitted += r->stats.emitted_tokens;
    row.draft_ms += r->stats.draft_ms;
    row.verify_ms += r->stats.verify_ms;
    row.vanilla_ms += r->vanilla_ms;
    weighted_c += r->cost_coefficient * static_cast<double>(r->stats.drafted_tokens);
    c_sum += r->cost_coefficient;
    method_cost += r->analytic_cost * static_cast<double>(r->stats.emitted_tokens);
    vanilla_cost += r->vanilla_cost * static_cast<double>(r->stats.emitted_tokens);
  }
  row.mean_accepted_len =
      row.passes > 0 ? static_cast<double>(row.emitted) / static_cast<double>(row.passes) : 0.0;
  row.acceptance_rate =
      row.drafted > 0 ? static_cast<double>(row.accepted) / static_cast<double>(row.drafted) : 0.0;
  row.cost_coefficient = row.drafted > 0 ? weighted_c / static_cast<double>(row.drafted)
                                         : c_sum / static_cast<double>(rs.size());

  if (row.passes > 0) {
    const double c = std::clamp(row.cost_coefficient, 1e-12, 1.0);
    if (row.accepted > 0) {
      row.expected_speedup = expected_speedup(row.mean_accepted_len, row.acceptance_rate, c);
    } else {
      const double drafts_per_pass =
          static_cast<double>(row.drafted) / static_cast<double>(row.passes);
      row.expected_speedup = row.mean_accepted_len / (1.0 + c * drafts_per_pass);
    }
  }
  const double method_ms = row.draft_ms + row.verify_ms;
  row.tokens_per_sec = method_ms > 0.0 ? 1000.0 * static_cast<double>(row.emitted) / method_ms : 0.0;
  row.vanilla_tokens_per_sec =
      row.vanilla_ms > 0.0 ? 1000.0 * static_cast<double>(row.emitted) / row.vanilla_ms : 0.0;
  row.measured_speedup = method_ms > 0.0 ? row.vanilla_ms / method_ms : 0.0;
  row.analytic_speedup = method_cost > 0.0 ? vanilla_cost / method_cost : 0.0;
  return row;
}

}  // namespace

SpeedupReport aggregate(std::span<const RunRecord> records) {
  if (records.empty()) throw ValidationError("aggregate needs at least one record");
  std::vector<const RunRecord*> all;
  std::map<DomainId, std::vector<const RunRecord*>> by_domain;
  for (const RunRecord& r : records) {
    all.push_back(&r);
    by_domain[r.domain].push_back(&r);
  }
  SpeedupReport report;
  report.overall = summarize("overall", all);
  for (const auto& [domain, rs] : by_domain) {
    report.per_domain.push_back(summarize("domain-" + std::to_string(domain), rs));
  }
  return report;
}

std::vector<std::array<double, 2>> project_2d(const std::vector<std::vector<double>>& vectors) {
  if (vectors.size() < 2) throw ValidationError("project_2d needs at least two vectors");
  const auto n = static_cast<Eigen::Index>(vectors.size());
  const auto d = static_cast<Eigen::Index>(vectors.front().size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& v = vectors[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(v.size()) != d) throw ValidationError("project_2d: ragged input");
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = v[static_cast<std::size_t>(j)];
  }
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd& values = eig.eigenvalues();  // ascending
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());

  std::vector<std::array<double, 2>> out(vectors.size(), {0.0, 0.0});
  for (int comp = 0; comp < 2 && comp < d; ++comp) {
    const Eigen::Index idx = d - 1 - comp;
    if (values(idx) <= 1e-12 * scale) continue;
    Eigen::VectorXd proj = x * eig.eigenvectors().col(idx);
    Eigen::Index arg = 0;
    proj.cwiseAbs().maxCoeff(&arg);
    if (proj(arg) < 0.0) proj = -proj;
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(comp)] = proj(i);
  }
  return out;
}

}  // namespace knnssd
