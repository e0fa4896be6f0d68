#include "enf/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "enf/error.hpp"

namespace enf {
namespace {

double evaluate(const LossBuilder& f, std::span<const Tensor> params, DType dtype) {
  Tape tape(dtype);
  Tape::NoGradGuard guard(tape);
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.constant(p));
  return f(tape, vars).value().item();
}

}  // namespace

GradCheckReport finite_difference_check(const LossBuilder& f, std::span<const Tensor> params,
                                        double h, double tol) {
  if (!(h > 0.0)) throw ContractError("finite_difference_check: step h must be positive");
  if (params.empty()) throw ContractError("finite_difference_check: no parameters");
  const DType dtype = params[0].dtype();

  Tape tape(dtype);
  std::vector<Var> vars;
  for (const auto& p : params) vars.push_back(tape.param(p));
  const Var loss = f(tape, vars);
  const double base = loss.value().item();
  const std::vector<Tensor> analytic = tape.gradients(loss, vars);

  if (evaluate(f, params, dtype) != base || evaluate(f, params, dtype) != base) {
    throw OracleInvalidError("finite_difference_check: f is not deterministic at the base point");
  }

  GradCheckReport report;
  std::vector<Tensor> work(params.begin(), params.end());
  for (std::size_t k = 0; k < work.size(); ++k) {
    double worst = 0.0;
    for (std::size_t i = 0; i < work[k].numel(); ++i) {
      const double x0 = params[k][i];
      work[k].mutable_data()[i] = x0 + h;
      const double up = evaluate(f, work, dtype);
      work[k].mutable_data()[i] = x0 - h;
      const double down = evaluate(f, work, dtype);
      work[k].mutable_data()[i] = x0;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    report.max_rel_error.push_back(worst);
    report.max_error = std::max(report.max_error, worst);
  }
  report.passed = report.max_error < tol;
  return report;
}

}  // namespace enf
