#pragma once

// Central finite-difference gradient verification. The numeric side never
// touches the tape: it re-runs the forward function at theta +/- h per
// coordinate, so it stays an independent check on backward().

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fincast/autograd.hpp"
#include "fincast/tensor.hpp"

namespace fincast {

struct GradCheckCoord {
  size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
  bool finite = true;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t checked = 0;
  size_t nonfinite = 0;  // coordinates where f(theta +/- h) was not finite
  GradCheckCoord worst;

  bool pass(double tol) const { return nonfinite == 0 && max_rel_err < tol; }
};

// relative error with an absolute floor of 1, so near-zero gradients are
// compared on an absolute scale
inline double grad_rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// f builds a scalar objective on the given tape from the parameter value.
// Coordinates to probe may be subsampled; rng == nullptr checks all of them.
inline GradCheckReport grad_check(const std::function<ag::Value(ag::Tape&, ag::Value)>& f, const Tensor& theta,
                                  double h, int max_coords = -1, Rng* rng = nullptr) {
  if (h <= 0.0) throw std::invalid_argument("grad_check: step h must be positive");

  Tensor analytic;
  {
    ag::Tape tape;
    ag::Value th = tape.leaf(theta);
    ag::Value loss = f(tape, th);
    tape.backward(loss);
    analytic = tape.grad(th);
  }

  std::vector<size_t> coords;
  const size_t n = theta.numel();
  if (max_coords < 0 || static_cast<size_t>(max_coords) >= n) {
    coords.resize(n);
    for (size_t i = 0; i < n; ++i) coords[i] = i;
  } else {
    if (!rng) throw std::invalid_argument("grad_check: sampling coordinates requires an rng");
    for (int i = 0; i < max_coords; ++i) coords.push_back(static_cast<size_t>(rng->uniform_int(static_cast<int>(n))));
  }

  auto eval = [&](const Tensor& p) {
    ag::Tape tape;
    ag::Value th = tape.leaf(p);
    return tape.val(f(tape, th)).scalar();
  };

  GradCheckReport rep;
  Tensor probe = theta;
  for (size_t c : coords) {
    const double orig = probe.data[c];
    probe.data[c] = orig + h;
    const double fp = eval(probe);
    probe.data[c] = orig - h;
    const double fm = eval(probe);
    probe.data[c] = orig;

    GradCheckCoord cc;
    cc.index = c;
    cc.analytic = analytic.data[c];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      cc.finite = false;
      rep.nonfinite++;
    } else {
      cc.numeric = (fp - fm) / (2.0 * h);
      cc.rel_err = grad_rel_err(cc.analytic, cc.numeric);
    }
    if (cc.rel_err >= rep.max_rel_err || rep.checked == 0) {
      rep.max_rel_err = cc.rel_err;
      rep.worst = cc;
    }
    rep.checked++;
  }
  return rep;
}

}  // namespace fincast
