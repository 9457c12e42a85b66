// SPDX-License-Identifier: Apache-2.0
//
// Closed-form SFT and DPO objectives for numerical cross-checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>

#include "blindspot/errors.hpp"

namespace blindspot::dpo {

/// log(1 + e^x) without overflow for large |x|.
inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Policy-vs-reference log ratios for one preference pair.
struct LossInputs {
  double beta = 0.1;
  double logratio_plus = 0.0;   // log pi(y+|x) - log pi_ref(y+|x)
  double logratio_minus = 0.0;  // log pi(y-|x) - log pi_ref(y-|x)

  double margin() const { return logratio_plus - logratio_minus; }
};

/// Summed negative log-likelihood of the chosen tokens.
inline double sft_nll(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) throw Error(ErrorCode::kInvalidArgument, "sft_nll: empty sequence");
  double sum = 0.0;
  for (double lp : token_logprobs) {
    if (!(lp <= 0.0)) throw Error(ErrorCode::kInvalidArgument, "sft_nll: logprob > 0");
    sum += lp;
  }
  return -sum;
}

/// -log sigmoid(beta * m) = softplus(-beta * m).
inline double dpo_loss_margin(double beta, double margin) {
  if (!(beta > 0.0)) throw Error(ErrorCode::kInvalidArgument, "dpo_loss: beta must be > 0");
  return softplus(-beta * margin);
}

inline double dpo_loss(const LossInputs& in) {
  if (!std::isfinite(in.logratio_plus) || !std::isfinite(in.logratio_minus)) {
    throw Error(ErrorCode::kInvalidArgument, "dpo_loss: non-finite log ratio");
  }
  return dpo_loss_margin(in.beta, in.margin());
}

/// d/dm of dpo_loss_margin: -beta * sigmoid(-beta * m). Always negative.
inline double dpo_loss_grad_margin(double beta, double margin) {
  if (!(beta > 0.0)) throw Error(ErrorCode::kInvalidArgument, "dpo_loss_grad: beta must be > 0");
  return -beta * sigmoid(-beta * margin);
}

/// Relative error between a central difference of `f` at `x` and `analytic`,
/// normalized by max(1, |analytic|).
template <typename F>
  requires std::invocable<F&, double>
double finite_difference_check(F&& f, double x, double h, double analytic) {
  if (!(h > 0.0)) throw Error(ErrorCode::kInvalidArgument, "finite_difference_check: h must be > 0");
  const double hi = f(x + h);
  const double lo = f(x - h);
  if (!std::isfinite(hi) || !std::isfinite(lo) || !std::isfinite(analytic)) {
    throw Error(ErrorCode::kInvalidArgument, "finite_difference_check: non-finite evaluation");
  }
  const double numeric = (hi - lo) / (2.0 * h);
  return std::abs(numeric - analytic) / std::max(1.0, std::abs(analytic));
}

}  // namespace blindspot::dpo
