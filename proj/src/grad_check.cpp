#include "tafnet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "tafnet/errors.hpp"

namespace tafnet {

namespace {

double eval_scalar(const std::function<Var(Tape*)>& f, const std::string& probing) {
  Var v = f(nullptr);
  if (v.shape().numel() != 1) {
    throw std::invalid_argument("grad_check: f must return a scalar, got " +
                                v.shape().str());
  }
  const double loss = v.value->data[0];
  if (!std::isfinite(loss)) {
    throw NumericError("grad_check: non-finite loss while probing parameter '" +
                       probing + "'");
  }
  return loss;
}

}  // namespace

GradCheckResult grad_check(const std::function<Var(Tape*)>& f,
                           std::span<Parameter* const> params,
                           const GradCheckOptions& opts) {
  for (Parameter* p : params) {
    auto& g = p->var.grad->data;
    std::fill(g.begin(), g.end(), 0.0);
  }

  Tape tape;
  Var loss = f(&tape);
  if (loss.shape().numel() != 1) {
    throw std::invalid_argument("grad_check: f must return a scalar, got " +
                                loss.shape().str());
  }
  if (!std::isfinite(loss.value->data[0])) {
    throw NumericError("grad_check: non-finite loss at the probe point");
  }
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->var.grad->data);

  Rng rng(opts.sample_seed);
  const double base =
      opts.validate_step ? eval_scalar(f, "(unperturbed)") : 0.0;
  GradCheckResult result;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    const size_t count = p.value().size();

    std::vector<size_t> coords;
    if (opts.coords_per_param <= 0 || size_t(opts.coords_per_param) >= count) {
      coords.resize(count);
      for (size_t i = 0; i < count; ++i) coords[i] = i;
    } else if (opts.min_grad_mag <= 0.0) {
      for (int i = 0; i < opts.coords_per_param; ++i) {
        coords.push_back(size_t(rng.uniform_int(0, int(count) - 1)));
      }
    } else {
      std::vector<size_t> eligible;
      for (size_t i = 0; i < count; ++i) {
        if (std::abs(analytic[pi][i]) >= opts.min_grad_mag) eligible.push_back(i);
      }
      if (eligible.size() <= size_t(opts.coords_per_param)) {
        // check every measurable coordinate; the rest sit below the
        // difference-quotient resolution
        coords = eligible;
      } else {
        for (int i = 0; i < opts.coords_per_param; ++i) {
          coords.push_back(eligible[size_t(rng.uniform_int(0, int(eligible.size()) - 1))]);
        }
      }
    }

    for (size_t ci : coords) {
      double& slot = p.value().data[ci];
      const double saved = slot;
      auto at = [&](double offset) {
        slot = saved + offset;
        const double v = eval_scalar(f, p.name);
        slot = saved;
        return v;
      };

      double numeric;
      if (!opts.validate_step) {
        numeric = (at(opts.eps) - at(-opts.eps)) / (2.0 * opts.eps);
      } else {
        // A relu/maxpool kink inside the probed interval makes difference
        // quotients meaningless. Forward/backward agreement rules out a
        // kink at the point itself; agreement of the two central steps
        // rules out a kink elsewhere in the interval.
        const double f_plus = at(opts.eps), f_minus = at(-opts.eps);
        const double fwd = (f_plus - base) / opts.eps;
        const double bwd = (base - f_minus) / opts.eps;
        const double whole = (f_plus - f_minus) / (2.0 * opts.eps);
        const double half =
            (at(opts.eps / 2.0) - at(-opts.eps / 2.0)) / opts.eps;
        const double band =
            1e-3 * std::max({std::abs(fwd), std::abs(bwd), std::abs(half)}) + 1e-6;
        if (std::abs(fwd - bwd) > band || std::abs(whole - half) > band) {
          continue;
        }
        numeric = half;
      }
      const double a = analytic[pi][ci];
      const double rel =
          std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = p.name + "[" + std::to_string(ci) + "]";
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace tafnet
