#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace dsmrf {

// Philox4x32-10 (Salmon et al. 2011): counter-based, so element i of stream s
// is a pure function of (seed, s, i)
inline std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> c, std::array<uint32_t, 2> k) {
  constexpr uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u, W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
  for (int r = 0; r < 10; ++r) {
    uint64_t p0 = uint64_t(M0) * c[0], p1 = uint64_t(M1) * c[2];
    c = {uint32_t(p1 >> 32) ^ c[1] ^ k[0], uint32_t(p1), uint32_t(p0 >> 32) ^ c[3] ^ k[1], uint32_t(p0)};
    k[0] += W0;
    k[1] += W1;
  }
  return c;
}

enum Stream : uint32_t {
  kStreamM = 1,
  kStreamXi = 2,
  kStreamW = 3,
  kStreamTestXi = 4,
  kStreamTestZ = 5,
  kStreamScoreXi = 6,
  kStreamScoreZ = 7,
  kStreamMomentZ = 8,
  kStreamTrainZ = 9,
  kStreamStarXi = 10,
  kStreamStarZ = 11,
  kStreamGap = 12,
};

// standard normal number `index` of (seed, stream), Box-Muller on one Philox block
inline double normal_at(uint64_t seed, uint32_t stream, uint64_t index) {
  uint64_t blk = index >> 1;
  auto r = philox4x32({uint32_t(blk), uint32_t(blk >> 32), stream, 0u}, {uint32_t(seed), uint32_t(seed >> 32)});
  double u1 = ((uint64_t(r[0] >> 5) << 26 | (r[1] >> 6)) + 0.5) * 0x1p-53;
  double u2 = (uint64_t(r[2] >> 5) << 26 | (r[3] >> 6)) * 0x1p-53;
  double rad = std::sqrt(-2.0 * std::log(u1));
  double ang = 2.0 * std::numbers::pi * u2;
  return (index & 1) ? rad * std::sin(ang) : rad * std::cos(ang);
}

// fills column-major with element (i, j) = normal_at(seed, stream, offset + i + j*rows)
template <typename Derived>
void fill_normal(Eigen::MatrixBase<Derived>& A, uint64_t seed, uint32_t stream, uint64_t offset = 0) {
  const uint64_t rows = uint64_t(A.rows());
  for (Eigen::Index j = 0; j < A.cols(); ++j)
    for (Eigen::Index i = 0; i < A.rows(); ++i) A(i, j) = normal_at(seed, stream, offset + uint64_t(i) + uint64_t(j) * rows);
}

// row-major indexing: leading row blocks do not depend on the number of rows
template <typename Derived>
void fill_normal_rowwise(Eigen::MatrixBase<Derived>& A, uint64_t seed, uint32_t stream, uint64_t offset = 0) {
  const uint64_t cols = uint64_t(A.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) A(i, j) = normal_at(seed, stream, offset + uint64_t(i) * cols + uint64_t(j));
}

}  // namespace dsmrf
