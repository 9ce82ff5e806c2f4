#include <catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <vector>

#include "egm/energy.hpp"

using namespace egm;

namespace {

// Independent reference: enumerate unordered site pairs and test torus
// adjacency directly (agrees with the right+down convention for L >= 3).
double ising_pair_enumeration(const std::vector<int>& spins, int L, double beta, double J) {
  double sum = 0.0;
  int n = L * L;
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      int ai = a / L, aj = a % L, bi = b / L, bj = b % L;
      int di = std::min((ai - bi + L) % L, (bi - ai + L) % L);
      int dj = std::min((aj - bj + L) % L, (bj - aj + L) % L);
      bool adjacent = (di == 1 && dj == 0) || (di == 0 && dj == 1);
      if (adjacent) sum += spins[a] * spins[b];
    }
  }
  return -beta * J * sum;
}

std::vector<int> random_spins(int n, Rng& rng) {
  std::vector<int> s(n);
  for (auto& v : s) v = rng.bernoulli(0.5) ? 1 : -1;
  return s;
}

}  // namespace

TEST_CASE("ising energy matches hand values") {
  auto spec = EnergySpec::ising(5, 0.2);
  std::vector<int> up(25, 1);
  CHECK(ising_energy(up, spec) == Catch::Approx(-10.0).epsilon(1e-12));

  auto spec4 = EnergySpec::ising(4, 0.2);
  std::vector<int> checker(16);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) checker[i * 4 + j] = ((i + j) % 2 == 0) ? 1 : -1;
  CHECK(ising_energy(checker, spec4) == Catch::Approx(6.4).epsilon(1e-12));
}

TEST_CASE("ising energy matches pair enumeration oracle on random 3x3 grids") {
  auto spec = EnergySpec::ising(3, 0.37);
  Rng rng(99);
  for (int rep = 0; rep < 50; ++rep) {
    auto s = random_spins(9, rng);
    CHECK(ising_energy(s, spec) ==
          Catch::Approx(ising_pair_enumeration(s, 3, 0.37, 1.0)).margin(1e-12));
  }
}

TEST_CASE("ising energy rejects invalid spins and is flip invariant") {
  auto spec = EnergySpec::ising(3, 0.2);
  std::vector<int> bad(9, 1);
  bad[4] = 0;
  CHECK_THROWS_AS(ising_energy(bad, spec), std::invalid_argument);

  Rng rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    auto s = random_spins(9, rng);
    auto flipped = s;
    for (auto& v : flipped) v = -v;
    CHECK(ising_energy(s, spec) == Catch::Approx(ising_energy(flipped, spec)).margin(1e-12));
  }
}

TEST_CASE("gbrbm energy") {
  auto spec = EnergySpec::gbrbm();
  std::array<double, 2> x0{0.0, 0.0};
  CHECK(gbrbm_energy(x0, std::array<int, 3>{0, 0, 0}, spec) == Catch::Approx(0.0).margin(1e-15));
  CHECK(gbrbm_energy(x0, std::array<int, 3>{1, 0, 0}, spec) == Catch::Approx(5.0).margin(1e-15));

  // term-by-term reference at x1=(2,1), x2=(1,1,0)
  std::array<double, 2> x1{2.0, 1.0};
  std::array<int, 3> x2{1, 1, 0};
  double quad = (2.0 * 2.0 + 1.0 * 1.0) / 2.0;
  double lin = -(-5.0 - 5.0);
  double coupling = (2.0 * 10.0 * 1.0 + 1.0 * 10.0 * 1.0) / 2.0;
  CHECK(gbrbm_energy(x1, x2, spec) == Catch::Approx(quad + lin - coupling).margin(1e-12));

  CHECK_THROWS_AS(gbrbm_energy(x1, std::array<int, 3>{2, 0, 0}, spec), std::invalid_argument);
}

TEST_CASE("jointdw4 energy") {
  auto spec = EnergySpec::jointdw4();

  SECTION("unit square of side 2: edges sit at d0 and contribute nothing") {
    std::array<int, 4> types{1, 1, 1, 1};
    std::array<double, 8> square_pos{0, 0, 2, 0, 2, 2, 0, 2};
    double diag_dev = 2.0 * std::sqrt(2.0) - 2.0;
    double per_diag = -3.0 * diag_dev * diag_dev + 0.8 * std::pow(diag_dev, 4);
    double expected = 2.0 * per_diag / 2.0;  // only the two diagonals deviate from d0
    CHECK(jointdw4_energy(square_pos, types, spec) == Catch::Approx(expected).margin(1e-12));
    CHECK(jointdw4_energy(square_pos, types, spec) == Catch::Approx(-1.6821).margin(1e-4));
  }

  SECTION("pairwise sum oracle on random configurations") {
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
      std::array<double, 8> pos;
      std::array<int, 4> types;
      for (auto& p : pos) p = 3.0 * rng.normal();
      for (auto& t : types) t = rng.bernoulli(0.5) ? 1 : 2;
      double ref = 0.0;
      for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) {
          double d = std::hypot(pos[2 * i] - pos[2 * j], pos[2 * i + 1] - pos[2 * j + 1]);
          double dev = d - 2.0;
          int ti = types[i] - 1, tj = types[j] - 1;
          double b[2][2] = {{-3.0, -2.5}, {-2.5, -2.8}};
          double c[2][2] = {{0.8, 0.4}, {0.4, 0.6}};
          ref += 0.5 * (b[ti][tj] * dev * dev + c[ti][tj] * std::pow(dev, 4));
        }
      CHECK(jointdw4_energy(pos, types, spec) == Catch::Approx(ref).margin(1e-10));
    }
  }

  SECTION("same-type swap and global translation leave energy unchanged") {
    Rng rng(17);
    std::array<double, 8> pos;
    for (auto& p : pos) p = rng.normal();
    std::array<int, 4> types{1, 2, 1, 2};
    double e0 = jointdw4_energy(pos, types, spec);

    std::array<double, 8> swapped = pos;  // swap particles 0 and 2 (both type 1)
    std::swap(swapped[0], swapped[4]);
    std::swap(swapped[1], swapped[5]);
    CHECK(jointdw4_energy(swapped, types, spec) == Catch::Approx(e0).margin(1e-12));

    std::array<double, 8> shifted = pos;
    for (int i = 0; i < 4; ++i) {
      shifted[2 * i] += 11.5;
      shifted[2 * i + 1] -= 3.25;
    }
    CHECK(jointdw4_energy(shifted, types, spec) == Catch::Approx(e0).margin(1e-9));
  }

  SECTION("coincident particles are finite") {
    std::array<double, 8> pos{0, 0, 0, 0, 1, 1, 2, 2};
    std::array<int, 4> types{1, 1, 2, 2};
    CHECK(std::isfinite(jointdw4_energy(pos, types, spec)));
  }
}

TEST_CASE("jointmog energy") {
  auto spec = EnergySpec::jointmog(1);
  CHECK(jointmog_energy(std::array<double, 1>{0.3}, std::array<int, 1>{-1}, spec) ==
        Catch::Approx(9.388888888888889).epsilon(1e-12));

  auto spec3 = EnergySpec::jointmog(3);
  std::array<double, 3> x{1.0, -1.0, 1.0};
  std::array<int, 3> b{1, -1, 1};
  CHECK(jointmog_energy(x, b, spec3) == Catch::Approx(0.0).margin(1e-15));

  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    std::array<double, 3> xr;
    std::array<int, 3> br;
    for (auto& v : xr) v = rng.normal();
    for (auto& v : br) v = rng.bernoulli(0.5) ? 1 : -1;
    std::array<double, 3> xf;
    std::array<int, 3> bf;
    for (int i = 0; i < 3; ++i) {
      xf[i] = -xr[i];
      bf[i] = -br[i];
    }
    CHECK(jointmog_energy(xr, br, spec3) ==
          Catch::Approx(jointmog_energy(xf, bf, spec3)).margin(1e-12));
  }
}

TEST_CASE("determined edge energy") {
  auto spec = EnergySpec::ising(5, 0.4);
  TokenId M = spec.mask_token();

  std::vector<TokenId> fully_masked(25, M);
  CHECK(ising_determined_edge_energy(fully_masked, spec) == 0.0);

  Rng rng(23);
  std::vector<TokenId> grid(25);
  for (auto& t : grid) t = rng.bernoulli(0.5) ? 1 : 0;
  std::vector<int> spins(25);
  for (int i = 0; i < 25; ++i) spins[i] = spin_of(grid[i]);
  CHECK(ising_determined_edge_energy(grid, spec) ==
        Catch::Approx(ising_energy(spins, spec)).margin(1e-12));

  std::vector<TokenId> two(25, M);
  two[0] = 1;
  two[1] = 1;  // one horizontal determined edge of aligned spins
  CHECK(ising_determined_edge_energy(two, spec) == Catch::Approx(-0.4).margin(1e-12));
}

TEST_CASE("determined edge energy is monotone consistent under unmasking") {
  auto spec = EnergySpec::ising(4, 0.3);
  TokenId M = spec.mask_token();
  Rng rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<TokenId> grid(16);
    std::vector<int> masked_positions;
    for (int i = 0; i < 16; ++i) {
      if (rng.bernoulli(0.5)) {
        grid[i] = M;
        masked_positions.push_back(i);
      } else {
        grid[i] = rng.bernoulli(0.5) ? 1 : 0;
      }
    }
    if (masked_positions.empty()) continue;
    double before = ising_determined_edge_energy(grid, spec);
    int pos = masked_positions[rng.uniform_int(masked_positions.size())];
    TokenId val = rng.bernoulli(0.5) ? 1 : 0;
    auto unmasked = grid;
    unmasked[pos] = val;
    // newly determined edges are exactly those incident to pos with an
    // unmasked other endpoint
    int L = 4, i = pos / L, j = pos % L;
    int nb[4] = {i * L + (j + 1) % L, i * L + (j + 3) % L, ((i + 1) % L) * L + j,
                 ((i + 3) % L) * L + j};
    double delta = 0.0;
    for (int n : nb)
      if (grid[n] != M) delta += -spec.beta * spec.J * spin_of(val) * spin_of(grid[n]);
    CHECK(ising_determined_edge_energy(unmasked, spec) ==
          Catch::Approx(before + delta).margin(1e-12));
  }
}

TEST_CASE("mixed state energy dispatch") {
  auto spec = EnergySpec::ising(3, 0.2);
  MixedState x;
  x.disc.assign(9, 1);
  CHECK(energy(spec, x) == Catch::Approx(-0.2 * 18).margin(1e-12));
  x.disc[0] = spec.mask_token();
  CHECK_THROWS_AS(energy(spec, x), std::invalid_argument);
}

TEST_CASE("exact jointmog sampler moments", "[slow]") {
  auto spec = EnergySpec::jointmog(2);
  Rng rng(42);
  const int n = 1'000'000;
  auto samples = exact_sample_jointmog(spec, n, rng);

  double xb = 0.0, e_mean = 0.0, bit_frac = 0.0;
  for (const auto& s : samples) {
    xb += s.cont[0] * pm_of(s.disc[0]) / double(n);
    e_mean += energy(spec, s) / double(n);
    bit_frac += (s.disc[0] == 1) / double(n);
  }
  // E[x_i b_i] = 1, sd = sigma per draw
  CHECK(std::abs(xb - 1.0) < 3.0 * spec.mog_sigma / std::sqrt(double(n)));
  // E[E] = d/2 by the chi^2 expectation (d = number of pairs here)
  CHECK(std::abs(e_mean - 1.0) < 3.0 * std::sqrt(2.0 * 1.0) / std::sqrt(double(n)));
  CHECK(std::abs(bit_frac - 0.5) < 3.0 * 0.5 / std::sqrt(double(n)));
}
