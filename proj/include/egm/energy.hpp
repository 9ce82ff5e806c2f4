#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "egm/common.hpp"
#include "egm/state.hpp"

namespace egm {

enum class Task { Ising, GBRBM, JointDW4, JointMoG };

inline std::string task_name(Task t) {
  switch (t) {
    case Task::Ising: return "ising";
    case Task::GBRBM: return "gbrbm";
    case Task::JointDW4: return "jointdw4";
    case Task::JointMoG: return "jointmog";
  }
  return "?";
}

inline Task task_from_name(const std::string& s) {
  if (s == "ising") return Task::Ising;
  if (s == "gbrbm") return Task::GBRBM;
  if (s == "jointdw4") return Task::JointDW4;
  if (s == "jointmog") return Task::JointMoG;
  throw std::invalid_argument("unknown task: " + s);
}

/// Target energy parameters. All tasks use V=2 data tokens; each task
/// declares its own token decoding (see spin_of/bit01_of/type_of/pm_of).
struct EnergySpec {
  Task task = Task::Ising;

  // ising
  int L = 5;
  double beta = 0.2;
  double J = 1.0;

  // gbrbm
  std::array<double, 2> rbm_a{0.0, 0.0};
  std::array<double, 3> rbm_b{-5.0, -5.0, -5.0};
  double rbm_sigma = 2.0;                                  // paper's scalar Sigma
  std::array<std::array<double, 3>, 2> rbm_w{{{10.0, 0.0, 10.0}, {0.0, 10.0, 0.0}}};

  // jointdw4
  double dw_tau = 1.0;
  double dw_d0 = 2.0;
  std::array<std::array<double, 2>, 2> dw_a{{{0.0, 0.0}, {0.0, 0.0}}};
  std::array<std::array<double, 2>, 2> dw_b{{{-3.0, -2.5}, {-2.5, -2.8}}};
  std::array<std::array<double, 2>, 2> dw_c{{{0.8, 0.4}, {0.4, 0.6}}};

  // jointmog
  int mog_pairs = 10;          // d continuous + d discrete dims
  double mog_sigma = 0.3;

  static EnergySpec ising(int L, double beta, double J = 1.0) {
    EnergySpec s;
    s.task = Task::Ising;
    s.L = L;
    s.beta = beta;
    s.J = J;
    s.validate();
    return s;
  }
  static EnergySpec gbrbm() {
    EnergySpec s;
    s.task = Task::GBRBM;
    s.validate();
    return s;
  }
  static EnergySpec jointdw4() {
    EnergySpec s;
    s.task = Task::JointDW4;
    s.validate();
    return s;
  }
  static EnergySpec jointmog(int pairs, double sigma = 0.3) {
    EnergySpec s;
    s.task = Task::JointMoG;
    s.mog_pairs = pairs;
    s.mog_sigma = sigma;
    s.validate();
    return s;
  }

  void validate() const {
    if (task == Task::Ising && (L < 1 || beta < 0))
      throw std::invalid_argument("ising: need L >= 1, beta >= 0");
    if (task == Task::GBRBM && rbm_sigma <= 0)
      throw std::invalid_argument("gbrbm: Sigma must be positive");
    if (task == Task::JointDW4) {
      if (dw_tau <= 0) throw std::invalid_argument("jointdw4: tau must be positive");
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          if (dw_b[i][j] != dw_b[j][i] || dw_c[i][j] != dw_c[j][i])
            throw std::invalid_argument("jointdw4: b, c tables must be symmetric");
    }
    if (task == Task::JointMoG && (mog_pairs < 1 || mog_sigma <= 0))
      throw std::invalid_argument("jointmog: need pairs >= 1, sigma > 0");
  }

  int d_disc() const {
    switch (task) {
      case Task::Ising: return L * L;
      case Task::GBRBM: return 3;
      case Task::JointDW4: return 4;
      case Task::JointMoG: return mog_pairs;
    }
    return 0;
  }
  int d_cont() const {
    switch (task) {
      case Task::Ising: return 0;
      case Task::GBRBM: return 2;
      case Task::JointDW4: return 8;
      case Task::JointMoG: return mog_pairs;
    }
    return 0;
  }
  int vocab() const { return 2; }
  TokenId mask_token() const { return static_cast<TokenId>(vocab()); }
};

// Token decodings. token 0 -> spin -1 / bit 0 / type 1; token 1 -> +1 / 1 / 2.
inline int spin_of(TokenId t) { return 2 * int(t) - 1; }
inline int bit01_of(TokenId t) { return int(t); }
inline int type_of(TokenId t) { return int(t) + 1; }
inline int pm_of(TokenId t) { return 2 * int(t) - 1; }

/// E = -beta*J * sum over the 2L^2 periodic neighbor pairs (right and down
/// neighbor of every site, so each pair appears once for L >= 3).
inline double ising_energy(std::span<const int> spins, const EnergySpec& spec) {
  int L = spec.L;
  if (int(spins.size()) != L * L)
    throw std::invalid_argument("ising_energy: grid size mismatch");
  for (int s : spins)
    if (s != 1 && s != -1)
      throw std::invalid_argument("ising_energy: entries must be +-1");
  double sum = 0.0;
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < L; ++j) {
      int s = spins[i * L + j];
      sum += s * spins[i * L + (j + 1) % L];
      sum += s * spins[((i + 1) % L) * L + j];
    }
  }
  return -spec.beta * spec.J * sum;
}

/// E = Sigma^-1 ||x1-a||^2 - <b,x2> - Sigma^-1 x1' W x2 with x2 in {0,1}^3.
inline double gbrbm_energy(std::span<const double> x1, std::span<const int> x2,
                           const EnergySpec& spec) {
  if (x1.size() != 2 || x2.size() != 3)
    throw std::invalid_argument("gbrbm_energy: expected x1 in R^2, x2 in {0,1}^3");
  for (int b : x2)
    if (b != 0 && b != 1) throw std::invalid_argument("gbrbm_energy: x2 entries must be 0/1");
  double inv_sigma = 1.0 / spec.rbm_sigma;
  double quad = 0.0;
  for (int i = 0; i < 2; ++i) quad += square(x1[i] - spec.rbm_a[i]);
  double lin = 0.0, coupling = 0.0;
  for (int j = 0; j < 3; ++j) {
    lin += spec.rbm_b[j] * x2[j];
    for (int i = 0; i < 2; ++i) coupling += x1[i] * spec.rbm_w[i][j] * x2[j];
  }
  return inv_sigma * quad - lin - inv_sigma * coupling;
}

/// E = (1/2tau) sum_{i<j} a(d_ij-d0) + b(d_ij-d0)^2 + c(d_ij-d0)^4 over
/// unordered particle pairs, with type-dependent tables.
inline double jointdw4_energy(std::span<const double> pos, std::span<const int> types,
                              const EnergySpec& spec) {
  if (pos.size() != 8 || types.size() != 4)
    throw std::invalid_argument("jointdw4_energy: expected 4 particles in R^2");
  for (int t : types)
    if (t != 1 && t != 2) throw std::invalid_argument("jointdw4_energy: types must be 1/2");
  double e = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      double dx = pos[2 * i] - pos[2 * j];
      double dy = pos[2 * i + 1] - pos[2 * j + 1];
      double dev = std::sqrt(dx * dx + dy * dy) - spec.dw_d0;
      int ti = types[i] - 1, tj = types[j] - 1;
      double dev2 = dev * dev;
      e += spec.dw_a[ti][tj] * dev + spec.dw_b[ti][tj] * dev2 + spec.dw_c[ti][tj] * dev2 * dev2;
    }
  }
  return e / (2.0 * spec.dw_tau);
}

/// E = sum_i ||x_i - b_i||^2 / (2 sigma^2) with b_i in {-1, 1}.
inline double jointmog_energy(std::span<const double> x, std::span<const int> bits,
                              const EnergySpec& spec) {
  if (x.size() != bits.size() || int(x.size()) != spec.mog_pairs)
    throw std::invalid_argument("jointmog_energy: length mismatch");
  double inv = 1.0 / (2.0 * spec.mog_sigma * spec.mog_sigma);
  double e = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    if (bits[i] != 1 && bits[i] != -1)
      throw std::invalid_argument("jointmog_energy: bits must be +-1");
    e += inv * square(x[i] - bits[i]);
  }
  return e;
}

/// Determined-edge part of the Ising energy: -beta*J over edges whose BOTH
/// endpoints are unmasked. Equals ising_energy when no masks are present.
inline double ising_determined_edge_energy(std::span<const TokenId> tokens,
                                           const EnergySpec& spec) {
  int L = spec.L;
  if (int(tokens.size()) != L * L)
    throw std::invalid_argument("ising_determined_edge_energy: grid size mismatch");
  TokenId mask = spec.mask_token();
  double sum = 0.0;
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < L; ++j) {
      TokenId s = tokens[i * L + j];
      if (s == mask) continue;
      TokenId right = tokens[i * L + (j + 1) % L];
      TokenId down = tokens[((i + 1) % L) * L + j];
      if (right != mask) sum += spin_of(s) * spin_of(right);
      if (down != mask) sum += spin_of(s) * spin_of(down);
    }
  }
  return -spec.beta * spec.J * sum;
}

/// Unified oracle on mixed states (terminal states only: throws on masks).
inline double energy(const EnergySpec& spec, const MixedState& x) {
  if (int(x.disc.size()) != spec.d_disc() || int(x.cont.size()) != spec.d_cont())
    throw std::invalid_argument("energy: state dims do not match spec");
  TokenId mask = spec.mask_token();
  for (TokenId t : x.disc)
    if (t >= mask) {
      if (t == mask) throw std::invalid_argument("energy: mask token in terminal state");
      throw std::invalid_argument("energy: token id out of range");
    }
  switch (spec.task) {
    case Task::Ising: {
      std::vector<int> spins(x.disc.size());
      for (size_t i = 0; i < x.disc.size(); ++i) spins[i] = spin_of(x.disc[i]);
      return ising_energy(spins, spec);
    }
    case Task::GBRBM: {
      std::array<int, 3> bits{bit01_of(x.disc[0]), bit01_of(x.disc[1]), bit01_of(x.disc[2])};
      return gbrbm_energy(x.cont, bits, spec);
    }
    case Task::JointDW4: {
      std::array<int, 4> types;
      for (int i = 0; i < 4; ++i) types[i] = type_of(x.disc[i]);
      return jointdw4_energy(x.cont, types, spec);
    }
    case Task::JointMoG: {
      std::vector<int> bits(x.disc.size());
      for (size_t i = 0; i < x.disc.size(); ++i) bits[i] = pm_of(x.disc[i]);
      return jointmog_energy(x.cont, bits, spec);
    }
  }
  throw std::logic_error("energy: unreachable");
}

/// Ground-truth sampler for JointMoG: bits uniform, x_i ~ N(b_i, sigma^2).
inline std::vector<MixedState> exact_sample_jointmog(const EnergySpec& spec, int n, Rng& rng) {
  if (spec.task != Task::JointMoG)
    throw std::invalid_argument("exact_sample_jointmog: spec is not JointMoG");
  if (n < 1) throw std::invalid_argument("exact_sample_jointmog: n must be >= 1");
  std::vector<MixedState> out(n);
  for (auto& s : out) {
    s.disc.resize(spec.mog_pairs);
    s.cont.resize(spec.mog_pairs);
    for (int i = 0; i < spec.mog_pairs; ++i) {
      s.disc[i] = static_cast<TokenId>(rng.uniform_int(2));
      s.cont[i] = pm_of(s.disc[i]) + spec.mog_sigma * rng.normal();
    }
  }
  return out;
}

}  // namespace egm
