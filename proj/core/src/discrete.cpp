#include "xlat/discrete.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <unordered_set>

#include "xlat/rng.hpp"

namespace xlat::info {

namespace {

constexpr int64_t kMaxOutcomes = 1000000;
constexpr double kMassTolerance = 1e-12;
constexpr int kLogSpaceFactorThreshold = 30;

int64_t checked_outcome_count(const std::vector<Variable>& vars) {
  int64_t count = 1;
  for (const auto& v : vars) {
    if (v.size < 1) throw InvalidModel("variable '" + v.name + "' has size < 1");
    if (count > kMaxOutcomes / v.size)
      throw TooLargeToEnumerate("joint outcome count exceeds 10^6");
    count *= v.size;
  }
  return count;
}

// -sum p ln p with the p ln p -> 0 convention at p = 0.
double entropy_of_table(const std::vector<double>& probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

void check_distribution_row(const std::vector<double>& row, int64_t expected,
                            const char* what) {
  if (static_cast<int64_t>(row.size()) != expected)
    throw InvalidModel(std::string(what) + ": wrong row length");
  double mass = 0.0;
  for (double p : row) {
    if (!(p >= 0.0))
      throw InvalidModel(std::string(what) + ": negative or NaN entry");
    mass += p;
  }
  if (std::abs(mass - 1.0) > kMassTolerance)
    throw InvalidModel(std::string(what) + ": row mass not 1");
}

}  // namespace

DiscreteJoint::DiscreteJoint(std::vector<Variable> vars,
                             std::vector<double> probs)
    : vars_(std::move(vars)), probs_(std::move(probs)) {
  const int64_t count = checked_outcome_count(vars_);
  if (static_cast<int64_t>(probs_.size()) != count)
    throw InvalidModel("probability table size does not match variables");
  std::unordered_set<std::string> names;
  for (const auto& v : vars_)
    if (!names.insert(v.name).second)
      throw InvalidModel("duplicate variable name '" + v.name + "'");
  double mass = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0)) throw InvalidModel("negative or NaN probability");
    mass += p;
  }
  if (std::abs(mass - 1.0) > kMassTolerance)
    throw InvalidModel("probability table mass is not 1");
}

std::vector<int> DiscreteJoint::positions_of(
    const std::vector<std::string>& names) const {
  std::vector<int> pos;
  pos.reserve(names.size());
  for (const auto& n : names) {
    int found = -1;
    for (size_t i = 0; i < vars_.size(); ++i)
      if (vars_[i].name == n) {
        found = static_cast<int>(i);
        break;
      }
    if (found < 0) throw UnknownVariable("unknown variable '" + n + "'");
    if (std::find(pos.begin(), pos.end(), found) == pos.end())
      pos.push_back(found);
  }
  std::sort(pos.begin(), pos.end());
  return pos;
}

DiscreteJoint DiscreteJoint::marginal(
    const std::vector<std::string>& keep) const {
  std::vector<int> pos = positions_of(keep);

  std::vector<int64_t> strides(vars_.size());
  int64_t stride = 1;
  for (int i = static_cast<int>(vars_.size()) - 1; i >= 0; --i) {
    strides[i] = stride;
    stride *= vars_[i].size;
  }

  std::vector<Variable> kept_vars;
  std::vector<int64_t> kept_strides(pos.size());
  int64_t kept_count = 1;
  for (int p : pos) kept_vars.push_back(vars_[p]);
  for (int i = static_cast<int>(pos.size()) - 1; i >= 0; --i) {
    kept_strides[i] = kept_count;
    kept_count *= vars_[pos[i]].size;
  }

  std::vector<double> table(kept_count, 0.0);
  for (int64_t idx = 0; idx < static_cast<int64_t>(probs_.size()); ++idx) {
    int64_t out = 0;
    for (size_t k = 0; k < pos.size(); ++k) {
      int64_t digit = (idx / strides[pos[k]]) % vars_[pos[k]].size;
      out += digit * kept_strides[k];
    }
    table[out] += probs_[idx];
  }
  return DiscreteJoint(std::move(kept_vars), std::move(table));
}

double DiscreteJoint::entropy(const std::vector<std::string>& vars) const {
  if (vars.empty()) return 0.0;
  std::vector<int> pos = positions_of(vars);
  if (pos.size() == vars_.size()) return entropy_of_table(probs_);
  return entropy_of_table(marginal(vars).probs());
}

double DiscreteJoint::mutual_information(
    const std::vector<std::string>& a,
    const std::vector<std::string>& b) const {
  std::vector<int> pa = positions_of(a);
  std::vector<int> pb = positions_of(b);
  for (int p : pa)
    if (std::find(pb.begin(), pb.end(), p) != pb.end())
      throw OverlappingSets("variable sets overlap at '" + vars_[p].name + "'");
  std::vector<std::string> ab(a);
  ab.insert(ab.end(), b.begin(), b.end());
  return entropy(a) + entropy(b) - entropy(ab);
}

double DiscreteJoint::conditional_mi(const std::vector<std::string>& a,
                                     const std::vector<std::string>& b,
                                     const std::vector<std::string>& c) const {
  std::vector<int> pa = positions_of(a);
  std::vector<int> pb = positions_of(b);
  std::vector<int> pc = positions_of(c);
  auto overlap = [&](const std::vector<int>& u, const std::vector<int>& v) {
    for (int p : u)
      if (std::find(v.begin(), v.end(), p) != v.end()) return true;
    return false;
  };
  if (overlap(pa, pb) || overlap(pa, pc) || overlap(pb, pc))
    throw OverlappingSets("variable sets overlap");
  std::vector<std::string> ac(a), bc(b), abc(a);
  ac.insert(ac.end(), c.begin(), c.end());
  bc.insert(bc.end(), c.begin(), c.end());
  abc.insert(abc.end(), b.begin(), b.end());
  abc.insert(abc.end(), c.begin(), c.end());
  return entropy(ac) + entropy(bc) - entropy(abc) - entropy(c);
}

double DiscreteJoint::interaction_information(
    const std::vector<std::string>& a, const std::vector<std::string>& b,
    const std::vector<std::string>& c) const {
  return mutual_information(a, c) - conditional_mi(a, c, b);
}

double to_bits(double nats) { return nats / std::log(2.0); }

void validate_model(const FactoredModel& m) {
  const int n = m.n_langs();
  if (n < 1) throw InvalidModel("model has no languages");
  if (static_cast<int>(m.z_sizes.size()) != n ||
      static_cast<int>(m.q_specific.size()) != n ||
      static_cast<int>(m.shift_family.size()) != n ||
      static_cast<int>(m.prior_specific.size()) != n ||
      static_cast<int>(m.likelihood.size()) != n)
    throw InvalidModel("per-language table lists have inconsistent lengths");
  if (m.zs_size < 1) throw InvalidModel("shared alphabet size < 1");

  int64_t x_joint = 1;
  for (int64_t s : m.x_sizes) {
    if (s < 1) throw InvalidModel("observed alphabet size < 1");
    if (x_joint > kMaxOutcomes / s)
      throw TooLargeToEnumerate("observed joint exceeds 10^6");
    x_joint *= s;
  }
  check_distribution_row(m.data_probs, x_joint, "data distribution");

  if (static_cast<int64_t>(m.q_shared.size()) != x_joint * m.zs_size)
    throw InvalidModel("shared posterior: wrong table size");
  for (int64_t jx = 0; jx < x_joint; ++jx) {
    std::vector<double> row(m.q_shared.begin() + jx * m.zs_size,
                            m.q_shared.begin() + (jx + 1) * m.zs_size);
    check_distribution_row(row, m.zs_size, "shared posterior");
  }

  check_distribution_row(m.prior_shared, m.zs_size, "shared prior");
  for (int i = 0; i < n; ++i) {
    if (m.z_sizes[i] < 1) throw InvalidModel("latent alphabet size < 1");
    if (static_cast<int64_t>(m.q_specific[i].size()) !=
        m.x_sizes[i] * m.z_sizes[i])
      throw InvalidModel("specific posterior: wrong table size");
    for (int64_t x = 0; x < m.x_sizes[i]; ++x)
      check_distribution_row(
          {m.q_specific[i].begin() + x * m.z_sizes[i],
           m.q_specific[i].begin() + (x + 1) * m.z_sizes[i]},
          m.z_sizes[i], "specific posterior");
    if (static_cast<int64_t>(m.shift_family[i].size()) !=
        m.x_sizes[i] * m.zs_size)
      throw InvalidModel("single-language shared family: wrong table size");
    for (int64_t x = 0; x < m.x_sizes[i]; ++x)
      check_distribution_row({m.shift_family[i].begin() + x * m.zs_size,
                              m.shift_family[i].begin() + (x + 1) * m.zs_size},
                             m.zs_size, "single-language shared family");
    check_distribution_row(m.prior_specific[i], m.z_sizes[i],
                           "specific prior");
    if (static_cast<int64_t>(m.likelihood[i].size()) !=
        m.z_sizes[i] * m.zs_size * m.x_sizes[i])
      throw InvalidModel("likelihood: wrong table size");
    for (int64_t r = 0; r < m.z_sizes[i] * m.zs_size; ++r)
      check_distribution_row({m.likelihood[i].begin() + r * m.x_sizes[i],
                              m.likelihood[i].begin() + (r + 1) * m.x_sizes[i]},
                             m.x_sizes[i], "likelihood");
  }
}

FactoredModel random_factored_model(uint64_t seed, int n_langs,
                                    int64_t x_size, int64_t z_size,
                                    int64_t zs_size) {
  if (n_langs < 1 || x_size < 1 || z_size < 1 || zs_size < 1)
    throw InvalidModel("all model sizes must be at least 1");
  Rng rng(seed);
  FactoredModel m;
  m.x_sizes.assign(n_langs, x_size);
  m.z_sizes.assign(n_langs, z_size);
  m.zs_size = zs_size;

  int64_t x_joint = 1;
  for (int i = 0; i < n_langs; ++i) x_joint *= x_size;
  m.data_probs = rng.dirichlet(static_cast<size_t>(x_joint));

  for (int i = 0; i < n_langs; ++i) {
    std::vector<double> q;
    for (int64_t x = 0; x < x_size; ++x) {
      auto row = rng.dirichlet(static_cast<size_t>(z_size));
      q.insert(q.end(), row.begin(), row.end());
    }
    m.q_specific.push_back(std::move(q));
  }
  for (int64_t jx = 0; jx < x_joint; ++jx) {
    auto row = rng.dirichlet(static_cast<size_t>(zs_size));
    m.q_shared.insert(m.q_shared.end(), row.begin(), row.end());
  }
  for (int i = 0; i < n_langs; ++i) {
    std::vector<double> r;
    for (int64_t x = 0; x < x_size; ++x) {
      auto row = rng.dirichlet(static_cast<size_t>(zs_size));
      r.insert(r.end(), row.begin(), row.end());
    }
    m.shift_family.push_back(std::move(r));
  }
  for (int i = 0; i < n_langs; ++i)
    m.prior_specific.push_back(rng.dirichlet(static_cast<size_t>(z_size)));
  m.prior_shared = rng.dirichlet(static_cast<size_t>(zs_size));
  for (int i = 0; i < n_langs; ++i) {
    std::vector<double> like;
    for (int64_t r = 0; r < z_size * zs_size; ++r) {
      auto row = rng.dirichlet(static_cast<size_t>(x_size));
      like.insert(like.end(), row.begin(), row.end());
    }
    m.likelihood.push_back(std::move(like));
  }
  validate_model(m);
  return m;
}

namespace {

std::string x_name(int i) { return "x" + std::to_string(i + 1); }
std::string z_name(int i) { return "z" + std::to_string(i + 1); }

struct ModelIndex {
  int n;
  int64_t x_joint;
  std::vector<int64_t> x_strides;  // into the joint observation index

  explicit ModelIndex(const FactoredModel& m)
      : n(m.n_langs()), x_joint(1), x_strides(m.n_langs()) {
    for (int i = n - 1; i >= 0; --i) {
      x_strides[i] = x_joint;
      x_joint *= m.x_sizes[i];
    }
  }
  int64_t x_digit(int64_t jx, int i, const FactoredModel& m) const {
    return (jx / x_strides[i]) % m.x_sizes[i];
  }
};

const double* shared_row(const FactoredModel& m, int64_t jx) {
  return m.q_shared.data() + jx * m.zs_size;
}
const double* specific_row(const FactoredModel& m, int i, int64_t xi) {
  return m.q_specific[i].data() + xi * m.z_sizes[i];
}
const double* shift_row(const FactoredModel& m, int i, int64_t xi) {
  return m.shift_family[i].data() + xi * m.zs_size;
}
const double* likelihood_row(const FactoredModel& m, int i, int64_t zi,
                             int64_t zs) {
  return m.likelihood[i].data() + (zi * m.zs_size + zs) * m.x_sizes[i];
}

double kl_ptr(const double* q, const double* r, int64_t k) {
  double kl = 0.0;
  for (int64_t t = 0; t < k; ++t)
    if (q[t] > 0.0) kl += q[t] * std::log(q[t] / r[t]);
  return kl;
}

// Model evidence p(x^1..x^N) for one joint observation: the latent
// integrals factor per language once the shared latent is fixed.
double model_evidence(const FactoredModel& m, const ModelIndex& ix,
                      int64_t jx) {
  double total = 0.0;
  for (int64_t s = 0; s < m.zs_size; ++s) {
    double prod = m.prior_shared[s];
    for (int i = 0; i < ix.n && prod > 0.0; ++i) {
      const int64_t xi = ix.x_digit(jx, i, m);
      double mix = 0.0;
      for (int64_t zi = 0; zi < m.z_sizes[i]; ++zi)
        mix += m.prior_specific[i][zi] * likelihood_row(m, i, zi, s)[xi];
      prod *= mix;
    }
    total += prod;
  }
  return total;
}

}  // namespace

DiscreteJoint induced_joint(const FactoredModel& m, LogSpace mode) {
  validate_model(m);
  const ModelIndex ix(m);
  const int n = ix.n;

  std::vector<Variable> vars;
  int64_t count = ix.x_joint;
  for (int i = 0; i < n; ++i) vars.push_back({x_name(i), m.x_sizes[i]});
  for (int i = 0; i < n; ++i) {
    vars.push_back({z_name(i), m.z_sizes[i]});
    if (count > kMaxOutcomes / m.z_sizes[i])
      throw TooLargeToEnumerate("induced joint exceeds 10^6 outcomes");
    count *= m.z_sizes[i];
  }
  vars.push_back({"zs", m.zs_size});
  if (count > kMaxOutcomes / m.zs_size)
    throw TooLargeToEnumerate("induced joint exceeds 10^6 outcomes");
  count *= m.zs_size;

  const int n_factors = n + 2;  // data term, n specific terms, shared term
  const bool log_space = mode == LogSpace::Force ||
                         (mode == LogSpace::Auto &&
                          n_factors > kLogSpaceFactorThreshold);

  std::vector<double> table(count, 0.0);
  std::vector<int64_t> z_digits(n, 0);
  for (int64_t idx = 0; idx < count; ++idx) {
    int64_t rest = idx;
    const int64_t s = rest % m.zs_size;
    rest /= m.zs_size;
    for (int i = n - 1; i >= 0; --i) {
      z_digits[i] = rest % m.z_sizes[i];
      rest /= m.z_sizes[i];
    }
    const int64_t jx = rest;

    if (log_space) {
      double lp = 0.0;
      bool zero = false;
      auto mul_log = [&](double f) {
        if (f <= 0.0)
          zero = true;
        else
          lp += std::log(f);
      };
      mul_log(m.data_probs[jx]);
      for (int i = 0; i < n && !zero; ++i)
        mul_log(specific_row(m, i, ix.x_digit(jx, i, m))[z_digits[i]]);
      if (!zero) mul_log(shared_row(m, jx)[s]);
      table[idx] = zero ? 0.0 : std::exp(lp);
    } else {
      double p = m.data_probs[jx];
      for (int i = 0; i < n && p > 0.0; ++i)
        p *= specific_row(m, i, ix.x_digit(jx, i, m))[z_digits[i]];
      if (p > 0.0) p *= shared_row(m, jx)[s];
      table[idx] = p;
    }
  }
  return DiscreteJoint(std::move(vars), std::move(table));
}

namespace {

std::vector<std::string> other_x_names(int n, int lang) {
  std::vector<std::string> names;
  for (int j = 0; j < n; ++j)
    if (j != lang) names.push_back(x_name(j));
  return names;
}

void check_lang(const FactoredModel& m, int lang) {
  if (lang < 0 || lang >= m.n_langs())
    throw InvalidModel("language index out of range");
}

}  // namespace

double verify_redundancy_identity(const FactoredModel& m, int lang) {
  check_lang(m, lang);
  DiscreteJoint j = induced_joint(m);
  const std::string xi = x_name(lang), zi = z_name(lang);
  double lhs = j.mutual_information({zi}, {"zs"});
  double rhs = -j.mutual_information({xi}, {zi, "zs"}) +
               j.mutual_information({xi}, {zi}) +
               j.mutual_information({xi}, {"zs"});
  return std::abs(lhs - rhs);
}

ConditionalIndependenceReport verify_conditional_independence(
    const FactoredModel& m, int lang) {
  check_lang(m, lang);
  DiscreteJoint j = induced_joint(m);
  const std::string xi = x_name(lang), zi = z_name(lang);
  ConditionalIndependenceReport rep;
  rep.cmi_specific_shared_given_observed = j.conditional_mi({zi}, {"zs"}, {xi});
  double lhs = j.mutual_information({zi}, {"zs"});
  double rhs = j.mutual_information({zi}, {xi}) -
               j.conditional_mi({zi}, {xi}, {"zs"}) +
               rep.cmi_specific_shared_given_observed;
  rep.chain_residual = std::abs(lhs - rhs);
  return rep;
}

InteractionReport verify_interaction_identities(const FactoredModel& m,
                                                int lang) {
  check_lang(m, lang);
  if (m.n_langs() < 2)
    throw InvalidModel("interaction identities need at least two languages");
  DiscreteJoint j = induced_joint(m);
  const std::string xi = x_name(lang), zi = z_name(lang);
  const std::vector<std::string> others = other_x_names(m.n_langs(), lang);

  InteractionReport rep;
  double via_first = j.mutual_information({xi}, {"zs"}) -
                     j.conditional_mi({xi}, {"zs"}, others);
  double via_second = j.mutual_information(others, {"zs"}) -
                      j.conditional_mi(others, {"zs"}, {xi});
  rep.symmetry_residual = std::abs(via_first - via_second);

  double lhs = via_first - j.mutual_information({zi}, {"zs"});
  double rhs = -j.conditional_mi({xi}, {"zs"}, others) +
               j.mutual_information({xi}, {zi, "zs"}) -
               j.mutual_information({xi}, {zi});
  rep.decomposition_residual = std::abs(lhs - rhs);
  return rep;
}

BoundsReport verify_bounds(const FactoredModel& m, double lambda) {
  validate_model(m);
  const ModelIndex ix(m);
  const int n = ix.n;
  DiscreteJoint j = induced_joint(m);

  BoundsReport rep;
  rep.lambda = lambda;

  // Data marginals p(x^i) and the single-language pooled shared posterior
  // q(z^s|x^i) = sum_{others} p(others|x^i) q(z^s|x).
  std::vector<std::vector<double>> px(n);
  std::vector<std::vector<double>> pooled(n);
  for (int i = 0; i < n; ++i) {
    px[i].assign(m.x_sizes[i], 0.0);
    pooled[i].assign(m.x_sizes[i] * m.zs_size, 0.0);
  }
  for (int64_t jx = 0; jx < ix.x_joint; ++jx) {
    const double pd = m.data_probs[jx];
    for (int i = 0; i < n; ++i) {
      const int64_t xi = ix.x_digit(jx, i, m);
      px[i][xi] += pd;
      for (int64_t s = 0; s < m.zs_size; ++s)
        pooled[i][xi * m.zs_size + s] += pd * shared_row(m, jx)[s];
    }
  }
  for (int i = 0; i < n; ++i)
    for (int64_t xi = 0; xi < m.x_sizes[i]; ++xi)
      if (px[i][xi] > 0.0)
        for (int64_t s = 0; s < m.zs_size; ++s)
          pooled[i][xi * m.zs_size + s] /= px[i][xi];

  // Complement-conditioned shared posterior q(z^s|others_i): group joint
  // observations by everything except language i.
  std::vector<std::vector<double>> comp(n);   // rows per complement index
  std::vector<std::vector<double>> pcomp(n);  // complement marginal
  for (int i = 0; i < n; ++i) {
    const int64_t rows = ix.x_joint / m.x_sizes[i];
    comp[i].assign(rows * m.zs_size, 0.0);
    pcomp[i].assign(rows, 0.0);
  }
  auto comp_index = [&](int64_t jx, int i) {
    const int64_t hi = jx / (ix.x_strides[i] * m.x_sizes[i]);
    const int64_t lo = jx % ix.x_strides[i];
    return hi * ix.x_strides[i] + lo;
  };
  for (int64_t jx = 0; jx < ix.x_joint; ++jx) {
    const double pd = m.data_probs[jx];
    for (int i = 0; i < n; ++i) {
      const int64_t ci = comp_index(jx, i);
      pcomp[i][ci] += pd;
      for (int64_t s = 0; s < m.zs_size; ++s)
        comp[i][ci * m.zs_size + s] += pd * shared_row(m, jx)[s];
    }
  }
  for (int i = 0; i < n; ++i)
    for (size_t row = 0; row < pcomp[i].size(); ++row)
      if (pcomp[i][row] > 0.0)
        for (int64_t s = 0; s < m.zs_size; ++s)
          comp[i][row * m.zs_size + s] /= pcomp[i][row];

  // Trainable-side expectations, exactly.
  std::vector<double> ce(n, 0.0);        // E log p(x^i|z^i,z^s)
  std::vector<double> kl_spec(n, 0.0);   // E KL[q(z^i|x^i)||p(z^i)]
  std::vector<double> kl_shift(n, 0.0);  // E KL[q(z^s|x)||r^i(z^s|x^i)]
  double kl_shared = 0.0;                // E KL[q(z^s|x)||p(z^s)]
  for (int64_t jx = 0; jx < ix.x_joint; ++jx) {
    const double pd = m.data_probs[jx];
    if (pd == 0.0) continue;
    const double* qs = shared_row(m, jx);
    kl_shared += pd * kl_ptr(qs, m.prior_shared.data(), m.zs_size);
    for (int i = 0; i < n; ++i) {
      const int64_t xi = ix.x_digit(jx, i, m);
      kl_shift[i] += pd * kl_ptr(qs, shift_row(m, i, xi), m.zs_size);
      double acc = 0.0;
      const double* qz = specific_row(m, i, xi);
      for (int64_t zi = 0; zi < m.z_sizes[i]; ++zi) {
        if (qz[zi] == 0.0) continue;
        for (int64_t s = 0; s < m.zs_size; ++s) {
          if (qs[s] == 0.0) continue;
          acc += qz[zi] * qs[s] * std::log(likelihood_row(m, i, zi, s)[xi]);
        }
      }
      ce[i] += pd * acc;
    }
  }
  for (int i = 0; i < n; ++i)
    for (int64_t xi = 0; xi < m.x_sizes[i]; ++xi)
      kl_spec[i] += px[i][xi] * kl_ptr(specific_row(m, i, xi),
                                       m.prior_specific[i].data(),
                                       m.z_sizes[i]);

  // Evidence bound: exact log-likelihood vs the trainable lower bound.
  double exact_ll = 0.0;
  for (int64_t jx = 0; jx < ix.x_joint; ++jx)
    if (m.data_probs[jx] > 0.0)
      exact_ll += m.data_probs[jx] * std::log(model_evidence(m, ix, jx));
  double ce_total = 0.0, kl_spec_total = 0.0, kl_shift_total = 0.0;
  for (int i = 0; i < n; ++i) {
    ce_total += ce[i];
    kl_spec_total += kl_spec[i];
    kl_shift_total += kl_shift[i];
  }
  rep.elbo.exact = exact_ll;
  rep.elbo.bound = ce_total - kl_spec_total - kl_shared;
  rep.elbo.gap = rep.elbo.exact - rep.elbo.bound;

  // E_x KL between the factored posterior and the true posterior, by direct
  // enumeration of every latent combination.
  {
    double kl_post = 0.0;
    std::vector<int64_t> z(n, 0);
    for (int64_t jx = 0; jx < ix.x_joint; ++jx) {
      const double pd = m.data_probs[jx];
      if (pd == 0.0) continue;
      const double evidence = model_evidence(m, ix, jx);
      const double* qs = shared_row(m, jx);
      double acc = 0.0;
      std::fill(z.begin(), z.end(), 0);
      while (true) {
        double q_z = 1.0;
        for (int i = 0; i < n; ++i)
          q_z *= specific_row(m, i, ix.x_digit(jx, i, m))[z[i]];
        for (int64_t s = 0; s < m.zs_size && q_z > 0.0; ++s) {
          const double q_full = q_z * qs[s];
          if (q_full == 0.0) continue;
          double p_joint = m.prior_shared[s];
          for (int i = 0; i < n; ++i)
            p_joint *= m.prior_specific[i][z[i]] *
                       likelihood_row(m, i, z[i], s)[ix.x_digit(jx, i, m)];
          acc += q_full * std::log(q_full / (p_joint / evidence));
        }
        int k = n - 1;
        while (k >= 0 && ++z[k] == m.z_sizes[k]) z[k--] = 0;
        if (k < 0) break;
      }
      kl_post += pd * acc;
    }
    rep.elbo_kl_to_posterior = kl_post;
  }

  // Per-language exact information quantities on the induced joint.
  std::vector<double> shift_gap(n), rec_gap(n), bot_gap(n), hx(n);
  double shift_exact = 0.0, rec_exact = 0.0, bot_exact = 0.0;
  double rec_bound = 0.0;
  double pool_kl_total = 0.0, comp_kl_total = 0.0, shift_identity_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const std::string xi = x_name(i), zi = z_name(i);
    const std::vector<std::string> others = other_x_names(n, i);
    hx[i] = j.entropy({xi});

    const double exact_shift_i =
        n >= 2 ? -j.conditional_mi({xi}, {"zs"}, others)
               : -j.mutual_information({xi}, {"zs"});
    const double bound_shift_i = -kl_shift[i];
    shift_gap[i] = exact_shift_i - bound_shift_i;
    shift_exact += exact_shift_i;

    const double exact_rec_i = j.mutual_information({xi}, {zi, "zs"});
    const double bound_rec_i = hx[i] + ce[i];
    rec_gap[i] = exact_rec_i - bound_rec_i;
    rec_exact += exact_rec_i;
    rec_bound += bound_rec_i;

    const double exact_bot_i = -j.mutual_information({xi}, {zi});
    const double bound_bot_i = -kl_spec[i];
    bot_gap[i] = exact_bot_i - bound_bot_i;
    bot_exact += exact_bot_i;

    // Both readings of the remainder dropped from the shift bound.
    double pool_kl = 0.0;
    for (int64_t x = 0; x < m.x_sizes[i]; ++x)
      pool_kl += px[i][x] * kl_ptr(pooled[i].data() + x * m.zs_size,
                                   shift_row(m, i, x), m.zs_size);
    pool_kl_total += pool_kl;
    for (int64_t jx = 0; jx < ix.x_joint; ++jx) {
      const double pd = m.data_probs[jx];
      if (pd == 0.0) continue;
      const int64_t ci = comp_index(jx, i);
      comp_kl_total +=
          pd * kl_ptr(comp[i].data() + ci * m.zs_size,
                      shift_row(m, i, ix.x_digit(jx, i, m)), m.zs_size);
    }

    // Exact decomposition of the shift gap: conditional-entropy difference
    // plus the pooled-family KL.
    const double h_zs_given_xi = j.entropy({"zs", xi}) - hx[i];
    const double h_zs_given_others =
        n >= 2 ? j.entropy([&] {
          std::vector<std::string> v(others);
          v.push_back("zs");
          return v;
        }()) - j.entropy(others)
               : j.entropy({"zs"});
    shift_identity_sum += h_zs_given_xi - h_zs_given_others + pool_kl;
  }
  rep.shift.exact = shift_exact;
  rep.shift.bound = -kl_shift_total;
  rep.shift.gap = rep.shift.exact - rep.shift.bound;
  rep.shift_kl_pool_family = pool_kl_total;
  rep.shift_kl_complement = comp_kl_total;
  rep.shift_gap_identity_residual =
      std::abs(rep.shift.gap - shift_identity_sum);

  rep.reconstruction.exact = rec_exact;
  rep.reconstruction.bound = rec_bound;
  rep.reconstruction.gap = rec_exact - rec_bound;

  rep.bottleneck.exact = bot_exact;
  rep.bottleneck.bound = -kl_spec_total;
  rep.bottleneck.gap = rep.bottleneck.exact - rep.bottleneck.bound;

  // Expected KL between the induced and generative reconstruction
  // conditionals; analytically equal to the reconstruction gap.
  {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::string xi = x_name(i), zi = z_name(i);
      DiscreteJoint mar = j.marginal({xi, zi, "zs"});
      // Variable order in the marginal follows the joint: x^i, z^i, zs.
      const int64_t sx = m.x_sizes[i], sz = m.z_sizes[i], ss = m.zs_size;
      for (int64_t z = 0; z < sz; ++z)
        for (int64_t s = 0; s < ss; ++s) {
          double w = 0.0;
          for (int64_t x = 0; x < sx; ++x)
            w += mar.probs()[(x * sz + z) * ss + s];
          if (w == 0.0) continue;
          for (int64_t x = 0; x < sx; ++x) {
            const double q_x = mar.probs()[(x * sz + z) * ss + s] / w;
            if (q_x > 0.0)
              total +=
                  w * q_x * std::log(q_x / likelihood_row(m, i, z, s)[x]);
          }
        }
    }
    rep.reconstruction_kl = total;
  }

  // Aggregated-posterior KL; analytically equal to the bottleneck gap.
  {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      std::vector<double> qz(m.z_sizes[i], 0.0);
      for (int64_t x = 0; x < m.x_sizes[i]; ++x)
        for (int64_t z = 0; z < m.z_sizes[i]; ++z)
          qz[z] += px[i][x] * specific_row(m, i, x)[z];
      total += kl_ptr(qz.data(), m.prior_specific[i].data(), m.z_sizes[i]);
    }
    rep.bottleneck_kl = total;
  }

  // Combined objective: evidence bound plus weighted disentanglement terms
  // on the left, the trainable composite on the right.
  {
    double disent_exact = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::string xi = x_name(i), zi = z_name(i);
      double interaction;
      if (n >= 2) {
        const std::vector<std::string> others = other_x_names(n, i);
        interaction = j.mutual_information({xi}, {"zs"}) -
                      j.conditional_mi({xi}, {"zs"}, others);
      } else {
        interaction = 0.0;
      }
      disent_exact += interaction - j.mutual_information({zi}, {"zs"});
    }
    rep.combined.exact = rep.elbo.bound + lambda * disent_exact;
    rep.combined.bound = (1.0 + lambda) * ce_total -
                         (1.0 + lambda) * kl_spec_total - kl_shared -
                         lambda * kl_shift_total;
    rep.combined.gap = rep.combined.exact - rep.combined.bound;
    double per_lang = 0.0;
    for (int i = 0; i < n; ++i)
      per_lang += shift_gap[i] + rec_gap[i] + bot_gap[i] + hx[i];
    rep.combined_identity_residual =
        std::abs(rep.combined.gap - lambda * per_lang);
  }

  return rep;
}

}  // namespace xlat::info
