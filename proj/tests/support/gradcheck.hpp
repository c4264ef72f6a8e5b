#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lmaug/neural/model.hpp"
#include "lmaug/neural/transformer.hpp"

namespace lmaug::testing {

struct GradCheckResult {
  double worst_rel = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
  std::size_t failures = 0;
};

// Compares every analytic gradient entry with a central finite difference
// (step h) of the double-precision mean NLL. An entry passes when
// |a - n| <= rel_tol * max(|a|, |n|) + abs_floor; the floor absorbs
// round-off on entries whose true gradient is ~0.
inline GradCheckResult gradient_check(const nn::TransformerConfig& cfg,
                                      const std::vector<double>& params,
                                      const std::vector<std::vector<TokenId>>& batch,
                                      bool train_mode, std::uint64_t seed, double h = 1e-5,
                                      double rel_tol = 1e-4, double abs_floor = 1e-8) {
  std::vector<double> work = params;
  nn::AlignedVector<double> grad;
  nn::Transformer<double>(cfg, work).loss_and_grad(batch, grad, train_mode, seed);
  const nn::ParamLayout layout(cfg);
  GradCheckResult r;
  for (const auto& t : layout.tensors()) {
    for (std::size_t i = 0; i < t.size; ++i) {
      const std::size_t idx = t.offset + i;
      const double orig = work[idx];
      work[idx] = orig + h;
      const double up = nn::Transformer<double>(cfg, work).loss(batch, train_mode, seed).mean();
      work[idx] = orig - h;
      const double down = nn::Transformer<double>(cfg, work).loss(batch, train_mode, seed).mean();
      work[idx] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grad[idx];
      const double diff = std::abs(numeric - analytic);
      const double mag = std::max(std::abs(numeric), std::abs(analytic));
      ++r.checked;
      if (diff > rel_tol * mag + abs_floor) ++r.failures;
      const double rel = mag > abs_floor / rel_tol ? diff / mag : 0.0;
      if (rel > r.worst_rel) {
        r.worst_rel = rel;
        r.worst_tensor = t.name;
      }
    }
  }
  return r;
}

}  // namespace lmaug::testing
