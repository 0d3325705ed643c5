#pragma once
// Diagonal Gaussians parameterized by mean and log-variance.
//
// Two parallel forms: a plain value type for analysis and Monte-Carlo
// verification, and tensor-graph helpers (built purely from differentiable
// tensor ops) used inside training objectives.  log-variance is clamped to
// [-20, 20]; strict construction raises instead of clamping.

#include <cstdint>
#include <vector>

#include "xlat/tensor.hpp"

namespace xlat::gauss {

inline constexpr double kLogVarMin = -20.0;
inline constexpr double kLogVarMax = 20.0;

struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_var;
};

// Validates finiteness and equal lengths; clamps log_var unless strict.
DiagGaussian make_gaussian(std::vector<double> mean, std::vector<double> log_var,
                           bool strict = false);
DiagGaussian standard_normal(size_t dim);

// mean + exp(log_var / 2) * noise, elementwise.
std::vector<double> reparameterize(const DiagGaussian& g,
                                   const std::vector<double>& noise);
// KL(g || N(0, I)); routed through kl_between so both share one formula path.
double kl_to_standard(const DiagGaussian& g);
// KL(q || r) in closed form.
double kl_between(const DiagGaussian& q, const DiagGaussian& r);
double log_prob(const DiagGaussian& g, const std::vector<double>& x);
// Monte-Carlo estimate of KL(q || r) from n reparameterized samples of q.
double mc_kl(const DiagGaussian& q, const DiagGaussian& r, size_t n,
             uint64_t seed);

// -- tensor-graph form -----------------------------------------------------

struct GaussianT {
  nd::Tensor mean;
  nd::Tensor log_var;
};

nd::Tensor reparameterize_t(const GaussianT& g, const nd::Tensor& noise);
nd::Tensor kl_to_standard_t(const GaussianT& g);
nd::Tensor kl_between_t(const GaussianT& q, const GaussianT& r);

// Value-type view of a graph Gaussian (clamped like make_gaussian).
DiagGaussian to_value(const GaussianT& g);

}  // namespace xlat::gauss
