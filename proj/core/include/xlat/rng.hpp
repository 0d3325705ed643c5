#pragma once
// Self-contained deterministic RNG.  Standard-library distributions are
// implementation-defined, so everything that must reproduce bit-for-bit
// (corpus sampling, parameter init, reparameterization noise, pseudo-fill
// draws) goes through this generator instead.

#include <cstdint>
#include <string_view>
#include <vector>

namespace xlat {

uint64_t splitmix64(uint64_t& state);

// Stable seed derivation: one master seed fans out to independent subsystem
// streams keyed by a tag string plus optional indices.
uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t a = 0,
                     uint64_t b = 0, uint64_t c = 0);

class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  // Uniform in [0, n); n must be > 0.
  uint64_t below(uint64_t n);
  // Uniform in [0, 1).
  double uniform();
  // Uniform in (0, 1].
  double uniform_pos();
  // Standard normal via Box-Muller (spare value cached).
  double normal();
  std::vector<double> normal_vec(size_t n);
  // Dirichlet(1,...,1): normalized unit-exponential draws.
  std::vector<double> dirichlet(size_t n);
  bool bernoulli(double p);

 private:
  uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace xlat
