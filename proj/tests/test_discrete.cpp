#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "xlat/discrete.hpp"
#include "xlat/rng.hpp"

using namespace xlat;
using namespace xlat::info;

namespace {

const double kLn2 = std::log(2.0);

DiscreteJoint xor_triple() {
  // A, B iid fair bits, C = A xor B.
  std::vector<double> t(8, 0.0);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) t[a * 4 + b * 2 + (a ^ b)] = 0.25;
  return DiscreteJoint({{"A", 2}, {"B", 2}, {"C", 2}}, t);
}

}  // namespace

TEST_CASE("entropy of basic distributions") {
  DiscreteJoint uniform4({{"u", 4}}, {0.25, 0.25, 0.25, 0.25});
  CHECK(uniform4.entropy({"u"}) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  DiscreteJoint point({{"p", 3}}, {0.0, 1.0, 0.0});
  CHECK(point.entropy({"p"}) == 0.0);
  DiscreteJoint skew({{"s", 3}}, {0.5, 0.25, 0.25});
  CHECK(skew.entropy({"s"}) == doctest::Approx(1.5 * kLn2).epsilon(1e-14));
  CHECK(to_bits(skew.entropy({"s"})) == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(skew.entropy({}) == 0.0);
}

TEST_CASE("entropy bounds hold on random joints") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    auto t = rng.dirichlet(2 * 3 * 4);
    DiscreteJoint j({{"a", 2}, {"b", 3}, {"c", 4}}, t);
    for (auto vars : std::vector<std::vector<std::string>>{
             {"a"}, {"b"}, {"c"}, {"a", "b"}, {"a", "b", "c"}}) {
      double h = j.entropy(vars);
      double cap = 0.0;
      for (const auto& v : vars)
        for (const auto& var : j.variables())
          if (var.name == v) cap += std::log(static_cast<double>(var.size));
      CHECK(h >= 0.0);
      CHECK(h <= cap + 1e-12);
    }
  }
}

TEST_CASE("construction and argument validation") {
  CHECK_THROWS_AS(DiscreteJoint({{"a", 2}}, {0.7, 0.7}), InvalidModel);
  CHECK_THROWS_AS(DiscreteJoint({{"a", 2}}, {1.5, -0.5}), InvalidModel);
  CHECK_THROWS_AS(DiscreteJoint({{"a", 2}}, {0.5, 0.25, 0.25}), InvalidModel);
  CHECK_THROWS_AS(DiscreteJoint({{"a", 2}, {"a", 2}}, {0.25, 0.25, 0.25, 0.25}),
                  InvalidModel);
  CHECK_THROWS_AS(DiscreteJoint({{"a", 101}, {"b", 101}, {"c", 101}},
                                std::vector<double>(101 * 101 * 101, 0.0)),
                  TooLargeToEnumerate);
  DiscreteJoint j({{"a", 2}, {"b", 2}}, {0.25, 0.25, 0.25, 0.25});
  CHECK_THROWS_AS(j.entropy({"missing"}), UnknownVariable);
  CHECK_THROWS_AS(j.mutual_information({"a"}, {"a"}), OverlappingSets);
  CHECK_THROWS_AS(j.conditional_mi({"a"}, {"b"}, {"a"}), OverlappingSets);
}

TEST_CASE("marginals are valid distributions") {
  Rng rng(17);
  auto t = rng.dirichlet(3 * 2 * 3);
  DiscreteJoint j({{"a", 3}, {"b", 2}, {"c", 3}}, t);
  for (auto keep : std::vector<std::vector<std::string>>{
           {"a"}, {"c"}, {"a", "c"}, {"b", "c"}}) {
    DiscreteJoint m = j.marginal(keep);
    double mass = 0.0;
    for (double p : m.probs()) mass += p;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(m.variables().size() == keep.size());
  }
}

TEST_CASE("mutual information oracle cases") {
  // Independent fair bits.
  DiscreteJoint indep({{"A", 2}, {"B", 2}}, {0.25, 0.25, 0.25, 0.25});
  CHECK(indep.mutual_information({"A"}, {"B"}) ==
        doctest::Approx(0.0).epsilon(1e-14));
  // Perfectly correlated bits.
  DiscreteJoint same({{"A", 2}, {"B", 2}}, {0.5, 0.0, 0.0, 0.5});
  CHECK(same.mutual_information({"A"}, {"B"}) ==
        doctest::Approx(kLn2).epsilon(1e-14));
}

TEST_CASE("parity triple has purely synergistic information") {
  DiscreteJoint j = xor_triple();
  CHECK(j.mutual_information({"A"}, {"C"}) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(j.conditional_mi({"A"}, {"C"}, {"B"}) ==
        doctest::Approx(kLn2).epsilon(1e-14));
  CHECK(j.interaction_information({"A"}, {"B"}, {"C"}) ==
        doctest::Approx(-kLn2).epsilon(1e-14));
}

TEST_CASE("copied triple has purely redundant information") {
  std::vector<double> t(8, 0.0);
  t[0] = 0.5;
  t[7] = 0.5;
  DiscreteJoint j({{"A", 2}, {"B", 2}, {"C", 2}}, t);
  CHECK(j.interaction_information({"A"}, {"B"}, {"C"}) ==
        doctest::Approx(kLn2).epsilon(1e-14));
}

TEST_CASE("independent triple has zero interaction information") {
  std::vector<double> t(8, 0.125);
  DiscreteJoint j({{"A", 2}, {"B", 2}, {"C", 2}}, t);
  CHECK(j.interaction_information({"A"}, {"B"}, {"C"}) ==
        doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("interaction information is symmetric across expansions") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    auto t = rng.dirichlet(2 * 3 * 2 * 2);
    DiscreteJoint j({{"a", 2}, {"b", 3}, {"c", 2}, {"d", 2}}, t);
    double one = j.interaction_information({"a"}, {"b", "d"}, {"c"});
    double two = j.mutual_information({"b", "d"}, {"c"}) -
                 j.conditional_mi({"b", "d"}, {"c"}, {"a"});
    CHECK(std::abs(one - two) < 1e-10);
  }
}

TEST_CASE("random factored models validate and induce a unit-mass joint") {
  FactoredModel m = random_factored_model(100, 3, 3, 2, 3);
  DiscreteJoint j = induced_joint(m);
  CHECK(j.outcome_count() == 27 * 8 * 3);
  double mass = 0.0;
  for (double p : j.probs()) mass += p;
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));

  FactoredModel bad = m;
  bad.prior_shared[0] += 0.1;
  CHECK_THROWS_AS(validate_model(bad), InvalidModel);
}

TEST_CASE("log-space and linear-space joints agree") {
  FactoredModel m = random_factored_model(7, 2, 3, 3, 2);
  DiscreteJoint lin = induced_joint(m, LogSpace::Never);
  DiscreteJoint lg = induced_joint(m, LogSpace::Force);
  for (int64_t i = 0; i < lin.outcome_count(); ++i)
    CHECK(std::abs(lin.probs()[i] - lg.probs()[i]) < 1e-12);
}

TEST_CASE("oversized induced joints are refused") {
  FactoredModel m = random_factored_model(1, 2, 25, 25, 25);
  CHECK_THROWS_AS(induced_joint(m), TooLargeToEnumerate);
}

TEST_CASE("latent-redundancy decomposition holds on seeded models") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    FactoredModel m = random_factored_model(seed, 2, 3, 3, 3);
    for (int lang = 0; lang < 2; ++lang)
      CHECK(verify_redundancy_identity(m, lang) < 1e-10);
  }
}

TEST_CASE("degenerate single-letter latent makes both sides zero") {
  FactoredModel m = random_factored_model(5, 2, 3, 1, 3);
  DiscreteJoint j = induced_joint(m);
  CHECK(j.mutual_information({"z1"}, {"zs"}) == doctest::Approx(0.0));
  CHECK(verify_redundancy_identity(m, 0) < 1e-12);
}

TEST_CASE("specific and shared latents are conditionally independent") {
  for (uint64_t seed = 11; seed <= 15; ++seed) {
    FactoredModel m = random_factored_model(seed, 2, 3, 2, 3);
    for (int lang = 0; lang < 2; ++lang) {
      auto rep = verify_conditional_independence(m, lang);
      CHECK(rep.cmi_specific_shared_given_observed < 1e-12);
      CHECK(rep.chain_residual < 1e-10);
    }
  }
}

TEST_CASE("entangled posterior breaks the conditional independence") {
  // z1 copies zs exactly, so conditioning on x1 cannot separate them.
  std::vector<double> t(8, 0.0);
  const double q0[2] = {0.8, 0.2}, q1[2] = {0.3, 0.7};
  for (int x = 0; x < 2; ++x)
    for (int s = 0; s < 2; ++s)
      t[x * 4 + s * 2 + s] = 0.5 * (x == 0 ? q0[s] : q1[s]);
  DiscreteJoint j({{"x1", 2}, {"z1", 2}, {"zs", 2}}, t);
  CHECK(j.conditional_mi({"z1"}, {"zs"}, {"x1"}) > 0.1);
}

TEST_CASE("shared latent of size one zeroes every term") {
  FactoredModel m = random_factored_model(9, 2, 3, 2, 1);
  auto rep = verify_conditional_independence(m, 0);
  CHECK(rep.cmi_specific_shared_given_observed < 1e-14);
  CHECK(rep.chain_residual < 1e-14);
  DiscreteJoint j = induced_joint(m);
  CHECK(j.mutual_information({"z1"}, {"zs"}) == doctest::Approx(0.0));
}

TEST_CASE("interaction identities hold on seeded models") {
  for (uint64_t seed = 21; seed <= 23; ++seed) {
    for (int n : {2, 3}) {
      FactoredModel m = random_factored_model(seed, n, 2, 2, 3);
      for (int lang = 0; lang < n; ++lang) {
        auto rep = verify_interaction_identities(m, lang);
        CHECK(rep.symmetry_residual < 1e-10);
        CHECK(rep.decomposition_residual < 1e-10);
      }
    }
  }
}

TEST_CASE("interaction identities hold with parity-structured observations") {
  FactoredModel m = random_factored_model(77, 3, 2, 2, 2);
  std::vector<double> pd(8, 0.0);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) pd[a * 4 + b * 2 + (a ^ b)] = 0.25;
  m.data_probs = pd;
  for (int lang = 0; lang < 3; ++lang) {
    auto rep = verify_interaction_identities(m, lang);
    CHECK(rep.symmetry_residual < 1e-10);
    CHECK(rep.decomposition_residual < 1e-10);
  }
}

TEST_CASE("single-letter observation makes every identity term vanish") {
  FactoredModel m = random_factored_model(3, 2, 1, 2, 2);
  auto rep = verify_interaction_identities(m, 0);
  CHECK(rep.symmetry_residual < 1e-13);
  CHECK(rep.decomposition_residual < 1e-13);
  DiscreteJoint j = induced_joint(m);
  CHECK(j.mutual_information({"x1"}, {"zs"}) == doctest::Approx(0.0));
}

TEST_CASE("every variational bound holds on seeded models") {
  for (uint64_t seed = 31; seed <= 40; ++seed) {
    FactoredModel m = random_factored_model(seed, 2, 3, 2, 3);
    for (double lambda : {0.0, 0.5, 1.0, 2.0}) {
      BoundsReport rep = verify_bounds(m, lambda);
      CHECK(rep.elbo.gap >= -1e-10);
      CHECK(rep.shift.gap >= -1e-10);
      CHECK(rep.reconstruction.gap >= -1e-10);
      CHECK(rep.bottleneck.gap >= -1e-10);
      CHECK(rep.combined.gap >= -1e-10);

      CHECK(std::abs(rep.elbo.gap - rep.elbo_kl_to_posterior) < 1e-10);
      CHECK(std::abs(rep.reconstruction.gap - rep.reconstruction_kl) < 1e-10);
      CHECK(std::abs(rep.bottleneck.gap - rep.bottleneck_kl) < 1e-10);
      CHECK(rep.shift_gap_identity_residual < 1e-10);
      CHECK(rep.combined_identity_residual < 1e-10);
      CHECK(rep.shift_kl_pool_family >= -1e-14);
      CHECK(rep.shift_kl_complement >= -1e-14);
    }
  }
}

TEST_CASE("three-language bounds also hold") {
  for (uint64_t seed = 51; seed <= 53; ++seed) {
    FactoredModel m = random_factored_model(seed, 3, 2, 2, 2);
    BoundsReport rep = verify_bounds(m, 1.0);
    CHECK(rep.elbo.gap >= -1e-10);
    CHECK(rep.shift.gap >= -1e-10);
    CHECK(rep.reconstruction.gap >= -1e-10);
    CHECK(rep.bottleneck.gap >= -1e-10);
    CHECK(rep.combined.gap >= -1e-10);
    CHECK(rep.combined_identity_residual < 1e-10);
  }
}

TEST_CASE("true-posterior inference closes the evidence gap") {
  // Make the likelihood ignore the shared latent; the exact posterior then
  // factors per language, and copying it into q leaves no slack.
  FactoredModel m = random_factored_model(61, 2, 3, 2, 2);
  const int n = 2;
  for (int i = 0; i < n; ++i) {
    for (int64_t z = 0; z < m.z_sizes[i]; ++z)
      for (int64_t s = 1; s < m.zs_size; ++s)
        for (int64_t x = 0; x < m.x_sizes[i]; ++x)
          m.likelihood[i][(z * m.zs_size + s) * m.x_sizes[i] + x] =
              m.likelihood[i][(z * m.zs_size + 0) * m.x_sizes[i] + x];
    // Exact per-language posterior: p(z^i|x^i) proportional to
    // p(z^i) p(x^i|z^i).
    for (int64_t x = 0; x < m.x_sizes[i]; ++x) {
      double norm = 0.0;
      std::vector<double> post(m.z_sizes[i]);
      for (int64_t z = 0; z < m.z_sizes[i]; ++z) {
        post[z] = m.prior_specific[i][z] *
                  m.likelihood[i][(z * m.zs_size + 0) * m.x_sizes[i] + x];
        norm += post[z];
      }
      for (int64_t z = 0; z < m.z_sizes[i]; ++z)
        m.q_specific[i][x * m.z_sizes[i] + z] = post[z] / norm;
    }
  }
  // The shared latent is unidentified, so its exact posterior is the prior.
  const int64_t x_joint = m.x_sizes[0] * m.x_sizes[1];
  for (int64_t jx = 0; jx < x_joint; ++jx)
    for (int64_t s = 0; s < m.zs_size; ++s)
      m.q_shared[jx * m.zs_size + s] = m.prior_shared[s];

  BoundsReport rep = verify_bounds(m, 1.0);
  CHECK(std::abs(rep.elbo.gap) < 1e-12);
  CHECK(rep.elbo_kl_to_posterior < 1e-12);
}

TEST_CASE("pooled-family choice zeroes the dropped remainder reading") {
  FactoredModel m = random_factored_model(71, 2, 3, 2, 3);
  // Recompute the single-language pooled posterior q(z^s|x^i) directly from
  // the tables and install it as the approximating family.
  const int n = 2;
  int64_t x_joint = m.x_sizes[0] * m.x_sizes[1];
  for (int i = 0; i < n; ++i) {
    std::vector<double> px(m.x_sizes[i], 0.0);
    std::vector<double> fam(m.x_sizes[i] * m.zs_size, 0.0);
    for (int64_t jx = 0; jx < x_joint; ++jx) {
      int64_t xi = i == 0 ? jx / m.x_sizes[1] : jx % m.x_sizes[1];
      px[xi] += m.data_probs[jx];
      for (int64_t s = 0; s < m.zs_size; ++s)
        fam[xi * m.zs_size + s] +=
            m.data_probs[jx] * m.q_shared[jx * m.zs_size + s];
    }
    for (int64_t x = 0; x < m.x_sizes[i]; ++x)
      for (int64_t s = 0; s < m.zs_size; ++s)
        fam[x * m.zs_size + s] /= px[x];
    m.shift_family[i] = fam;
  }
  BoundsReport rep = verify_bounds(m, 1.0);
  CHECK(rep.shift_kl_pool_family < 1e-12);
  // The exact gap decomposition continues to hold with this family, so the
  // whole gap is now the conditional-entropy difference.
  CHECK(rep.shift_gap_identity_residual < 1e-12);
}
