#include "xlat/gaussian.hpp"

#include <cmath>

#include "xlat/errors.hpp"
#include "xlat/rng.hpp"

namespace xlat::gauss {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
}

DiagGaussian make_gaussian(std::vector<double> mean, std::vector<double> log_var,
                           bool strict) {
  if (mean.size() != log_var.size())
    throw DimMismatch("mean and log_var lengths differ");
  for (double m : mean)
    if (!std::isfinite(m)) throw NonFiniteInput("gaussian mean not finite");
  for (double& lv : log_var) {
    if (!std::isfinite(lv)) throw NonFiniteInput("gaussian log_var not finite");
    if (lv < kLogVarMin || lv > kLogVarMax) {
      if (strict) throw DomainError("log_var outside [-20, 20] in strict mode");
      lv = std::min(kLogVarMax, std::max(kLogVarMin, lv));
    }
  }
  return DiagGaussian{std::move(mean), std::move(log_var)};
}

DiagGaussian standard_normal(size_t dim) {
  return DiagGaussian{std::vector<double>(dim, 0.0),
                      std::vector<double>(dim, 0.0)};
}

std::vector<double> reparameterize(const DiagGaussian& g,
                                   const std::vector<double>& noise) {
  if (noise.size() != g.mean.size())
    throw DimMismatch("noise length differs from gaussian dimension");
  std::vector<double> out(g.mean.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = g.mean[i] + std::exp(0.5 * g.log_var[i]) * noise[i];
  return out;
}

double kl_between(const DiagGaussian& q, const DiagGaussian& r) {
  if (q.mean.size() != r.mean.size())
    throw DimMismatch("gaussian dimensions differ");
  double acc = 0.0;
  for (size_t i = 0; i < q.mean.size(); ++i) {
    const double var_q = std::exp(q.log_var[i]);
    const double var_r = std::exp(r.log_var[i]);
    const double dm = q.mean[i] - r.mean[i];
    acc += r.log_var[i] - q.log_var[i] + (var_q + dm * dm) / var_r - 1.0;
  }
  return 0.5 * acc;
}

double kl_to_standard(const DiagGaussian& g) {
  return kl_between(g, standard_normal(g.mean.size()));
}

double log_prob(const DiagGaussian& g, const std::vector<double>& x) {
  if (x.size() != g.mean.size())
    throw DimMismatch("point dimension differs from gaussian");
  double acc = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - g.mean[i];
    acc += -0.5 * (kLog2Pi + g.log_var[i] + d * d / std::exp(g.log_var[i]));
  }
  return acc;
}

double mc_kl(const DiagGaussian& q, const DiagGaussian& r, size_t n,
             uint64_t seed) {
  if (q.mean.size() != r.mean.size())
    throw DimMismatch("gaussian dimensions differ");
  if (n == 0) throw DomainError("mc_kl needs at least one sample");
  Rng rng(seed);
  double acc = 0.0;
  std::vector<double> noise(q.mean.size());
  for (size_t s = 0; s < n; ++s) {
    for (auto& z : noise) z = rng.normal();
    const std::vector<double> x = reparameterize(q, noise);
    acc += log_prob(q, x) - log_prob(r, x);
  }
  return acc / static_cast<double>(n);
}

// -- tensor-graph form -----------------------------------------------------

nd::Tensor reparameterize_t(const GaussianT& g, const nd::Tensor& noise) {
  using namespace nd;
  Tensor std_dev = exp(mul(g.log_var, Tensor::scalar(0.5)));
  return add(g.mean, mul(std_dev, noise));
}

nd::Tensor kl_between_t(const GaussianT& q, const GaussianT& r) {
  using namespace nd;
  if (q.mean.shape() != r.mean.shape())
    throw DimMismatch("gaussian dimensions differ");
  Tensor diff_lv = sub(r.log_var, q.log_var);
  Tensor var_ratio = exp(sub(q.log_var, r.log_var));
  Tensor dm = sub(q.mean, r.mean);
  Tensor mean_term = mul(mul(dm, dm), exp(mul(r.log_var, Tensor::scalar(-1.0))));
  Tensor per_dim =
      sub(add(diff_lv, add(var_ratio, mean_term)), Tensor::scalar(1.0));
  return mul(sum(per_dim), Tensor::scalar(0.5));
}

nd::Tensor kl_to_standard_t(const GaussianT& g) {
  GaussianT std_g{nd::Tensor::zeros(g.mean.shape()),
                  nd::Tensor::zeros(g.log_var.shape())};
  return kl_between_t(g, std_g);
}

DiagGaussian to_value(const GaussianT& g) {
  return make_gaussian(g.mean.values(), g.log_var.values());
}

}  // namespace xlat::gauss
