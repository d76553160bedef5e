#pragma once

// Central-difference gradient checker. Compares analytic gradients from the
// tape against (f(x+eps) - f(x-eps)) / (2 eps) per sampled element.

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "monorig/rng.hpp"
#include "monorig/tensor.hpp"

namespace monorig::diff {

struct GradEntry {
  std::string name;
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradReport {
  std::vector<GradEntry> params;
  double max_rel_err = 0.0;

  const GradEntry& worst() const {
    size_t w = 0;
    for (size_t i = 1; i < params.size(); ++i)
      if (params[i].max_rel_err > params[w].max_rel_err) w = i;
    return params[w];
  }
};

inline double rel_err(double a, double n) {
  const double denom = std::max({std::abs(a), std::abs(n), 1e-12});
  return std::abs(a - n) / denom;
}

// f must be a deterministic scalar function of the given parameter leaves.
// Large tensors are subsampled (max_samples elements, seeded choice).
template <typename T>
GradReport grad_check(const std::function<Tensor<T>(void)>& f, std::vector<Tensor<T>> params,
                      T eps = T(1e-5), int64_t max_samples = 64, uint64_t seed = 0,
                      const std::vector<std::string>& names = {}) {
  require(eps > T(0), "grad_check: eps must be positive");
  for (auto& p : params) p.zero_grad();
  Tensor<T> loss = f();
  require(loss.numel() == 1, "grad_check: f must be scalar-valued");
  require(std::isfinite(static_cast<double>(loss.value())), "grad_check: non-finite objective");
  backward(loss);

  GradReport report;
  Rng rng(seed * 0x9e3779b9ull + 17);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& p = params[pi];
    GradEntry entry;
    entry.name = pi < names.size() ? names[pi] : ("param" + std::to_string(pi));
    std::vector<int64_t> idx;
    if (p.numel() <= max_samples) {
      idx.resize(static_cast<size_t>(p.numel()));
      for (int64_t i = 0; i < p.numel(); ++i) idx[static_cast<size_t>(i)] = i;
    } else {
      for (int64_t i = 0; i < max_samples; ++i)
        idx.push_back(static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(p.numel()))));
    }
    for (int64_t i : idx) {
      const T saved = p.data()[i];
      p.data()[i] = saved + eps;
      const double fp = static_cast<double>(f().value());
      p.data()[i] = saved - eps;
      const double fm = static_cast<double>(f().value());
      p.data()[i] = saved;
      require(std::isfinite(fp) && std::isfinite(fm), "grad_check: non-finite objective at probe");
      const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
      const double analytic = static_cast<double>(p.grad()[static_cast<size_t>(i)]);
      const double e = rel_err(analytic, numeric);
      if (e > entry.max_rel_err) {
        entry.max_rel_err = e;
        entry.worst_index = i;
        entry.analytic = analytic;
        entry.numeric = numeric;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.params.push_back(std::move(entry));
  }
  return report;
}

}  // namespace monorig::diff
