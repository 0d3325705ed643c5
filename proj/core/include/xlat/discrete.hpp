// Exact information-theoretic computations over finite discrete
// distributions, used to brute-force-check the identities and bound
// directions that the training objective is built from.
//
// Conventions:
//   - natural-log units everywhere; to_bits() converts for display
//   - outcomes enumerate in lexicographic variable order, last variable
//     fastest (row-major)
//   - zero-probability outcomes contribute zero to entropy sums
//   - joints with more than 10^6 outcomes are refused
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xlat/errors.hpp"

namespace xlat::info {

struct Variable {
  std::string name;
  int64_t size = 0;
};

class DiscreteJoint {
 public:
  // Validates: sizes >= 1, unique names, entries >= 0, total mass 1 within
  // 1e-12, outcome count <= 10^6.
  DiscreteJoint(std::vector<Variable> vars, std::vector<double> probs);

  const std::vector<Variable>& variables() const { return vars_; }
  const std::vector<double>& probs() const { return probs_; }
  int64_t outcome_count() const { return static_cast<int64_t>(probs_.size()); }

  // Marginal over the named variables, preserving this joint's variable
  // order. Names outside the joint raise UnknownVariable.
  DiscreteJoint marginal(const std::vector<std::string>& keep) const;

  // Shannon entropy of the named subset (all variables if the full set is
  // passed). Empty subset has entropy zero.
  double entropy(const std::vector<std::string>& vars) const;

  // Set mutual information I(A;B) = H(A) + H(B) - H(A,B). A and B must be
  // disjoint.
  double mutual_information(const std::vector<std::string>& a,
                            const std::vector<std::string>& b) const;

  // I(A;B|C) = H(A,C) + H(B,C) - H(A,B,C) - H(C); pairwise disjoint sets.
  double conditional_mi(const std::vector<std::string>& a,
                        const std::vector<std::string>& b,
                        const std::vector<std::string>& c) const;

  // Three-way interaction information I(A;B;C) = I(A;C) - I(A;C|B).
  // Symmetric in its arguments; may be negative.
  double interaction_information(const std::vector<std::string>& a,
                                 const std::vector<std::string>& b,
                                 const std::vector<std::string>& c) const;

 private:
  std::vector<int> positions_of(const std::vector<std::string>& names) const;

  std::vector<Variable> vars_;
  std::vector<double> probs_;
};

double to_bits(double nats);

// Fully enumerable surrogate of the generative + inference model: a data
// distribution over N observed variables, per-language specific posteriors,
// one shared posterior over all observations, per-language single-input
// families approximating the shared posterior, and the generative tables.
struct FactoredModel {
  std::vector<int64_t> x_sizes;  // observed alphabet per language
  std::vector<int64_t> z_sizes;  // specific latent alphabet per language
  int64_t zs_size = 0;           // shared latent alphabet

  // p_D(x^1..x^N), row-major with x^N fastest.
  std::vector<double> data_probs;
  // q(z^i|x^i): per language, x_sizes[i] rows of length z_sizes[i].
  std::vector<std::vector<double>> q_specific;
  // q(z^s|x^1..x^N): one row of length zs_size per joint observation.
  std::vector<double> q_shared;
  // r^i(z^s|x^i): per language, x_sizes[i] rows of length zs_size.
  std::vector<std::vector<double>> shift_family;
  // p(z^i): per language.
  std::vector<std::vector<double>> prior_specific;
  // p(z^s).
  std::vector<double> prior_shared;
  // p(x^i|z^i,z^s): per language, rows indexed by z_i * zs_size + z_s, each
  // of length x_sizes[i].
  std::vector<std::vector<double>> likelihood;

  int n_langs() const { return static_cast<int>(x_sizes.size()); }
};

// Throws InvalidModel when sizes are inconsistent or any row is not a
// distribution within 1e-12.
void validate_model(const FactoredModel& m);

// Seeded fuzz model: every table row drawn Dirichlet(1).
FactoredModel random_factored_model(uint64_t seed, int n_langs,
                                    int64_t x_size, int64_t z_size,
                                    int64_t zs_size);

enum class LogSpace { Auto, Force, Never };

// Joint over (x^1..x^N, z^1..z^N, z^s) induced by the inference-side
// factorization p_D(x) * prod_i q(z^i|x^i) * q(z^s|x). Entry products run in
// log space when the factor count exceeds 30 (or always under Force).
DiscreteJoint induced_joint(const FactoredModel& m,
                            LogSpace mode = LogSpace::Auto);

// |I(Z^i;Z^s) - (-I(X^i;Z^i,Z^s) + I(X^i;Z^i) + I(X^i;Z^s))| on the induced
// joint. Language index is zero-based.
double verify_redundancy_identity(const FactoredModel& m, int lang);

struct ConditionalIndependenceReport {
  // I(Z^i;Z^s|X^i): zero under the inference factorization.
  double cmi_specific_shared_given_observed = 0.0;
  // Residual of the chain identity
  // I(Z^i;Z^s) = I(Z^i;X^i) - I(Z^i;X^i|Z^s) + I(Z^i;Z^s|X^i).
  double chain_residual = 0.0;
};
ConditionalIndependenceReport verify_conditional_independence(
    const FactoredModel& m, int lang);

struct InteractionReport {
  // Agreement of the two expansions of I(X^i; others; Z^s).
  double symmetry_residual = 0.0;
  // Residual of
  // I(X^i;others;Z^s) - I(Z^i;Z^s)
  //   = -I(X^i;Z^s|others) + I(X^i;Z^i,Z^s) - I(X^i;Z^i).
  double decomposition_residual = 0.0;
};
InteractionReport verify_interaction_identities(const FactoredModel& m,
                                                int lang);

struct BoundCheck {
  double exact = 0.0;
  double bound = 0.0;
  double gap = 0.0;  // exact - bound; >= 0 when the bound direction holds
};

struct BoundsReport {
  double lambda = 1.0;

  // Data log-likelihood vs the evidence lower bound.
  BoundCheck elbo;
  // Sum over languages of -I(X^i;Z^s|others) vs -E KL[q(z^s|x)||r^i(z^s|x^i)].
  BoundCheck shift;
  // Sum over languages of I(X^i;Z^i,Z^s) vs H(X^i) + E log p(x^i|z^i,z^s).
  BoundCheck reconstruction;
  // Sum over languages of -I(X^i;Z^i) vs -E KL[q(z^i|x^i)||p(z^i)].
  BoundCheck bottleneck;
  // Lambda-weighted overall objective: ELBO + lambda * disentanglement terms
  // vs the trainable right-hand side.
  BoundCheck combined;

  // E_x KL[q(z|x) || posterior(z|x)]; equals elbo.gap analytically.
  double elbo_kl_to_posterior = 0.0;
  // Sum_i E_{p(x^i)} KL[q(z^s|x^i) || r^i(z^s|x^i)] with q's single-language
  // pool marginal; vanishes when r^i is set to that marginal family.
  double shift_kl_pool_family = 0.0;
  // Sum_i E_{p(x)} KL[q(z^s|others) || r^i(z^s|x^i)]: the other reading of
  // the dropped remainder term.
  double shift_kl_complement = 0.0;
  // |shift.gap - sum_i (H(Z^s|X^i) - H(Z^s|others_i) + pool KL_i)|.
  double shift_gap_identity_residual = 0.0;
  // Sum_i E_{q(z^i,z^s)} KL[q(x^i|z^i,z^s)||p(x^i|z^i,z^s)]; equals
  // reconstruction.gap analytically.
  double reconstruction_kl = 0.0;
  // Sum_i KL[q(z^i)||p(z^i)]; equals bottleneck.gap analytically.
  double bottleneck_kl = 0.0;
  // |combined.gap - lambda * sum_i (shift gap_i + reconstruction gap_i +
  //  bottleneck gap_i + H(X^i))|.
  double combined_identity_residual = 0.0;
};

// Exact vs bound value for every variational inequality in the objective,
// all by enumeration. Raises TooLargeToEnumerate past 10^6 outcomes.
BoundsReport verify_bounds(const FactoredModel& m, double lambda = 1.0);

}  // namespace xlat::info
