#pragma once

#include <bit>
#include <boost/random/sobol.hpp>

#include "sembayes/common.hpp"

namespace sembayes {

namespace detail {

inline std::uint32_t reverse_bits32(std::uint32_t x) {
  x = ((x >> 1) & 0x55555555u) | ((x & 0x55555555u) << 1);
  x = ((x >> 2) & 0x33333333u) | ((x & 0x33333333u) << 2);
  x = ((x >> 4) & 0x0F0F0F0Fu) | ((x & 0x0F0F0F0Fu) << 4);
  x = ((x >> 8) & 0x00FF00FFu) | ((x & 0x00FF00FFu) << 8);
  return (x >> 16) | (x << 16);
}

// Hash-based nested uniform (Owen) scramble, Laine-Karras construction with
// Burley's constants.
inline std::uint32_t owen_scramble(std::uint32_t x, std::uint32_t seed) {
  x = reverse_bits32(x);
  x ^= x * 0x3d20adeau;
  x += seed;
  x *= (seed >> 16) | 1u;
  x ^= x * 0x05526c56u;
  x ^= x * 0x53a22864u;
  return reverse_bits32(x);
}

}  // namespace detail

/// count x m scrambled Sobol points in (0,1)^m, starting from the origin.
inline Mat rqmc_uniform_points(int m, int count, std::uint64_t seed) {
  if (m < 1 || count < 1) throw DomainError("RQMC needs positive dimension and count");
  boost::random::sobol_engine<std::uint32_t, 32> engine(static_cast<std::size_t>(m));
  std::vector<std::uint32_t> dim_seed(m);
  for (int d = 0; d < m; ++d) dim_seed[d] = static_cast<std::uint32_t>(derive_seed(seed, d));
  Mat u(count, m);
  for (int i = 0; i < count; ++i)
    for (int d = 0; d < m; ++d) {
      const std::uint32_t raw = i == 0 ? 0u : engine();
      u(i, d) = (static_cast<double>(detail::owen_scramble(raw, dim_seed[d])) + 0.5) * 0x1p-32;
    }
  return u;
}

/// Scrambled Sobol points mapped to standard normal deviates.
inline Mat rqmc_normal_points(int m, int count, std::uint64_t seed) {
  Mat z = rqmc_uniform_points(m, count, seed);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = norm_quantile(z.data()[i]);
  return z;
}

}  // namespace sembayes
