#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tract/autodiff.hpp"
#include "tract/errors.hpp"

namespace tract::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. Moment buffers are allocated to match
// the parameter set at construction; the step counter increases by exactly 1
// per update.
class Adam {
 public:
  Adam(AdamConfig cfg, const ParamSet& params) : cfg_(cfg) {
    m_.reserve(params.all().size());
    v_.reserve(params.all().size());
    for (const Value& p : params.all()) {
      m_.emplace_back(p.data().rows(), p.data().cols());
      v_.emplace_back(p.data().rows(), p.data().cols());
    }
  }

  void step(ParamSet& params) {
    if (params.all().size() != m_.size())
      throw ContractError("Adam::step: parameter set does not match optimizer state");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t p = 0; p < m_.size(); ++p) {
      Value param = params.all()[p];
      const Array& g = param.grad();
      Array& th = param.data();
      Array& m = m_[p];
      Array& v = v_[p];
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i]))
          throw TrainError("non-finite gradient in parameter '" + param.name() + "' at index " +
                           std::to_string(i));
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        th[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  long step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Array> m_;
  std::vector<Array> v_;
  long step_ = 0;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient verification

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_component = -1;
  double tol = 0.0;
  bool pass = false;
};

// Compares reverse-mode gradients against central finite differences over
// every component of every parameter. `build` must rebuild the expression
// from the current parameter values on each call.
inline GradCheckReport grad_check(const std::function<Value()>& build, ParamSet& params,
                                  double h = 1e-4, double tol = 1e-4) {
  if (!(h > 0.0 && h <= 1e-2)) throw ContractError("grad_check: h must be in (0, 1e-2]");
  params.zero_grad();
  backward(build());
  std::vector<Array> analytic;
  analytic.reserve(params.all().size());
  for (const Value& p : params.all()) analytic.push_back(p.grad());

  GradCheckReport report;
  report.tol = tol;
  for (std::size_t p = 0; p < params.all().size(); ++p) {
    Value param = params.all()[p];
    Array& th = param.data();
    for (std::size_t i = 0; i < th.size(); ++i) {
      const double orig = th[i];
      th[i] = orig + h;
      const double fp = build().scalar();
      th[i] = orig - h;
      const double fm = build().scalar();
      th[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double g = analytic[p][i];
      const double denom = std::max({1e-6, std::abs(g), std::abs(fd)});
      const double rel = std::abs(g - fd) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = param.name();
        report.worst_component = static_cast<int>(i);
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace tract::nn
