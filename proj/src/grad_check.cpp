#include "sasr/grad_check.hpp"

#include "sasr/rng.hpp"

#include <cmath>

namespace sasr {

GradCheckReport grad_check(const std::function<Tensor(Tape&)>& f,
                           std::span<const GradCheckParam> params,
                           Scalar step, int samples, uint64_t seed, Scalar min_ad) {
  if (step <= 0) throw ContractError("grad_check: step must be positive");
  if (min_ad < 0) throw ContractError("grad_check: min_ad must be non-negative");
  if (params.empty()) throw ContractError("grad_check: no parameters");

  Index total = 0;
  for (const auto& p : params) {
    if (!p.tensor.requires_grad()) throw ContractError("grad_check: parameter " + p.name + " does not require grad");
    total += p.tensor.size();
  }

  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  Tape tape;
  Tensor loss = f(tape);
  tape.backward(loss);

  GradCheckReport report;
  report.samples = samples;
  Rng rng(seed);
  const int64_t max_draws = std::max<int64_t>(static_cast<int64_t>(samples) * 50, 1000);
  for (int64_t draw = 0; draw < max_draws && report.compared < samples; ++draw) {
    Index flat = static_cast<Index>(rng.below(static_cast<uint64_t>(total)));
    size_t pi = 0;
    while (flat >= params[pi].tensor.size()) {
      flat -= params[pi].tensor.size();
      ++pi;
    }
    Tensor param = params[pi].tensor;
    Scalar g_ad = param.has_grad() ? param.grad()(flat) : 0.0;
    if (min_ad > 0 && std::abs(g_ad) < min_ad) continue;
    ++report.compared;

    Scalar orig = param.values()(flat);
    param.values()(flat) = orig + step;
    Tape up_tape;
    up_tape.grad_enabled = false;
    Scalar up = f(up_tape).value();
    param.values()(flat) = orig - step;
    Tape dn_tape;
    dn_tape.grad_enabled = false;
    Scalar dn = f(dn_tape).value();
    param.values()(flat) = orig;

    Scalar g_fd = (up - dn) / (2.0 * step);
    Scalar rel = std::abs(g_ad - g_fd) / std::max(1e-8, std::abs(g_ad) + std::abs(g_fd));
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_param = params[pi].name;
      report.worst_coord = flat;
      report.ad = g_ad;
      report.fd = g_fd;
    }
  }
  return report;
}

}  // namespace sasr
