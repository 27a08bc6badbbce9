#pragma once

// Calibrated 5-point essential-matrix solver and a plain RANSAC around it.
// Only used as a comparison baseline by the benchmark harness.
//
// Solver: 4-dim nullspace E = xX + yY + zZ + W of the epipolar constraints,
// ten cubic constraints (det E = 0 and the trace constraint), Gauss-Jordan on
// the cubic monomials and an eigen-decomposition of the 10x10 action matrix
// for multiplication by x.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gravpnp/consensus.hpp"
#include "gravpnp/geometry.hpp"

namespace gravpnp::five_point {

namespace detail {

// Monomials up to degree 3 in (x, y, z), ordered
//   x^3 x^2y x^2z xy^2 xyz xz^2 y^3 y^2z yz^2 z^3 | x^2 xy xz y^2 yz z^2 x y z 1
constexpr int kTerms = 20;

constexpr std::array<std::array<int, 3>, kTerms> kExp = {{
    {3, 0, 0}, {2, 1, 0}, {2, 0, 1}, {1, 2, 0}, {1, 1, 1}, {1, 0, 2}, {0, 3, 0}, {0, 2, 1}, {0, 1, 2}, {0, 0, 3},
    {2, 0, 0}, {1, 1, 0}, {1, 0, 1}, {0, 2, 0}, {0, 1, 1}, {0, 0, 2}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, 0},
}};

constexpr int index_of(int a, int b, int c) {
  for (int i = 0; i < kTerms; ++i) {
    if (kExp[i][0] == a && kExp[i][1] == b && kExp[i][2] == c) return i;
  }
  return -1;
}

// product table: kMul[i][j] = index of monomial_i * monomial_j, or -1 if degree > 3
constexpr auto make_mul_table() {
  std::array<std::array<int, kTerms>, kTerms> t{};
  for (int i = 0; i < kTerms; ++i) {
    for (int j = 0; j < kTerms; ++j) {
      const int a = kExp[i][0] + kExp[j][0], b = kExp[i][1] + kExp[j][1], c = kExp[i][2] + kExp[j][2];
      t[i][j] = (a + b + c <= 3) ? index_of(a, b, c) : -1;
    }
  }
  return t;
}
inline constexpr auto kMul = make_mul_table();

struct Poly {
  std::array<double, kTerms> c{};

  Poly& operator+=(const Poly& o) {
    for (int i = 0; i < kTerms; ++i) c[i] += o.c[i];
    return *this;
  }
  Poly& operator-=(const Poly& o) {
    for (int i = 0; i < kTerms; ++i) c[i] -= o.c[i];
    return *this;
  }
  Poly operator*(double s) const {
    Poly p = *this;
    for (auto& v : p.c) v *= s;
    return p;
  }
};

inline Poly operator+(Poly a, const Poly& b) { return a += b; }
inline Poly operator-(Poly a, const Poly& b) { return a -= b; }

inline Poly operator*(const Poly& a, const Poly& b) {
  Poly p;
  for (int i = 0; i < kTerms; ++i) {
    if (a.c[i] == 0.0) continue;
    for (int j = 0; j < kTerms; ++j) {
      if (b.c[j] == 0.0) continue;
      const int k = kMul[i][j];
      if (k >= 0) p.c[k] += a.c[i] * b.c[j];
    }
  }
  return p;
}

using PolyMat = std::array<std::array<Poly, 3>, 3>;

inline PolyMat mul(const PolyMat& A, const PolyMat& B) {
  PolyMat C{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < 3; ++k) C[i][j] += A[i][k] * B[k][j];
    }
  }
  return C;
}

inline PolyMat transpose(const PolyMat& A) {
  PolyMat T{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) T[i][j] = A[j][i];
  }
  return T;
}

}  // namespace detail

/// All real essential matrices consistent with five correspondences
/// x2^T E x1 = 0 (normalized coordinates).
inline std::vector<Mat3> solve(std::span<const Vec2> x1, std::span<const Vec2> x2) {
  using namespace detail;
  if (x1.size() != 5 || x2.size() != 5) {
    throw Error(ErrorCode::invalid_argument, "5-point solver takes exactly 5 correspondences");
  }
  Eigen::Matrix<double, 5, 9> Q;
  for (int i = 0; i < 5; ++i) {
    const Vec3 a = homogeneous(x1[i]);
    const Vec3 b = homogeneous(x2[i]);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) Q(i, 3 * r + c) = b(r) * a(c);
    }
  }
  const Eigen::JacobiSVD<Eigen::Matrix<double, 5, 9>> svd(Q, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 9>& V = svd.matrixV();

  // E entries as linear polynomials in (x, y, z)
  PolyMat E{};
  constexpr int ix = 16, iy = 17, iz = 18, i1 = 19;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      const int k = 3 * r + c;
      E[r][c].c[ix] = V(k, 5);
      E[r][c].c[iy] = V(k, 6);
      E[r][c].c[iz] = V(k, 7);
      E[r][c].c[i1] = V(k, 8);
    }
  }

  Eigen::Matrix<double, 10, kTerms> M;
  // det(E)
  const Poly det = E[0][0] * (E[1][1] * E[2][2] - E[1][2] * E[2][1]) -
                   E[0][1] * (E[1][0] * E[2][2] - E[1][2] * E[2][0]) +
                   E[0][2] * (E[1][0] * E[2][1] - E[1][1] * E[2][0]);
  for (int k = 0; k < kTerms; ++k) M(0, k) = det.c[k];
  // 2 E E^T E - tr(E E^T) E
  const PolyMat EEt = mul(E, transpose(E));
  Poly tr = EEt[0][0];
  tr += EEt[1][1];
  tr += EEt[2][2];
  const PolyMat EEtE = mul(EEt, E);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      Poly p = EEtE[r][c] * 2.0;
      p -= tr * E[r][c];
      for (int k = 0; k < kTerms; ++k) M(1 + 3 * r + c, k) = p.c[k];
    }
  }

  const Eigen::Matrix<double, 10, 10> C1 = M.leftCols<10>();
  const Eigen::Matrix<double, 10, 10> C2 = M.rightCols<10>();
  const Eigen::PartialPivLU<Eigen::Matrix<double, 10, 10>> lu(C1);
  if (!(std::abs(lu.determinant()) > 0.0)) return {};
  const Eigen::Matrix<double, 10, 10> B = lu.solve(C2);

  // multiplication by x on the basis [x^2 xy xz y^2 yz z^2 x y z 1]
  Eigen::Matrix<double, 10, 10> Ax = Eigen::Matrix<double, 10, 10>::Zero();
  Ax.topRows<6>() = -B.topRows<6>();
  Ax(6, 0) = 1.0;
  Ax(7, 1) = 1.0;
  Ax(8, 2) = 1.0;
  Ax(9, 6) = 1.0;

  const Eigen::EigenSolver<Eigen::Matrix<double, 10, 10>> es(Ax);
  if (es.info() != Eigen::Success) return {};
  std::vector<Mat3> out;
  for (int k = 0; k < 10; ++k) {
    const auto lambda = es.eigenvalues()(k);
    if (std::abs(lambda.imag()) > 1e-8 * std::max(1.0, std::abs(lambda.real()))) continue;
    const auto v = es.eigenvectors().col(k);
    if (std::abs(v(9)) < 1e-12) continue;
    const double x = (v(6) / v(9)).real();
    const double y = (v(7) / v(9)).real();
    const double z = (v(8) / v(9)).real();
    Eigen::Matrix<double, 9, 1> e = x * V.col(5) + y * V.col(6) + z * V.col(7) + V.col(8);
    e.normalize();
    Mat3 Em;
    Em << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
    out.push_back(Em);
  }
  return out;
}

/// First-order geometric (Sampson) error of x2^T E x1 = 0, squared units.
inline double sampson(const Mat3& E, const Vec2& x1, const Vec2& x2) {
  const Vec3 a = homogeneous(x1), b = homogeneous(x2);
  const Vec3 Ea = E * a;
  const Vec3 Etb = E.transpose() * b;
  const double r = b.dot(Ea);
  const double den = Ea.x() * Ea.x() + Ea.y() * Ea.y() + Etb.x() * Etb.x() + Etb.y() * Etb.y();
  if (!(den > 0.0)) return std::numeric_limits<double>::infinity();
  return r * r / den;
}

/// Relative pose (2 <- 1) from E with cheirality voting; translation has unit
/// norm.
inline PoseSE3 decompose(const Mat3& E, std::span<const Vec2> x1, std::span<const Vec2> x2) {
  const Eigen::JacobiSVD<Mat3> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU(), V = svd.matrixV();
  if (U.determinant() < 0.0) U = -U;
  if (V.determinant() < 0.0) V = -V;
  Mat3 W;
  W << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  const std::array<Rotation3, 2> Rs = {U * W * V.transpose(), U * W.transpose() * V.transpose()};
  const std::array<Vec3, 2> ts = {U.col(2), -U.col(2)};

  PoseSE3 best;
  int best_votes = -1;
  for (const auto& R : Rs) {
    for (const auto& t : ts) {
      int votes = 0;
      for (std::size_t i = 0; i < x1.size(); ++i) {
        // l2 x2h = R l1 x1h + t
        Eigen::Matrix<double, 3, 2> A;
        A.col(0) = R * homogeneous(x1[i]);
        A.col(1) = -homogeneous(x2[i]);
        const Eigen::Vector2d lam = A.colPivHouseholderQr().solve(-t);
        if (lam(0) > 0.0 && lam(1) > 0.0) ++votes;
      }
      if (votes > best_votes) {
        best_votes = votes;
        best = {R, t};
      }
    }
  }
  return best;
}

struct RansacResult {
  Mat3 E = Mat3::Zero();
  PoseSE3 pose;  // unit translation
  std::vector<bool> inliers;
  int iterations = 0;
  std::chrono::nanoseconds elapsed{0};
};

/// Adaptive RANSAC with Sampson scoring (inlier iff sampson <= tau^2) and no
/// nonlinear refit, followed by cheirality-checked decomposition.
inline RansacResult ransac(std::span<const Vec2> x1, std::span<const Vec2> x2, double tau, double confidence,
                           int max_iterations, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = x1.size();
  if (x2.size() != n) throw Error(ErrorCode::invalid_argument, "correspondence count mismatch");
  if (n < 5) throw Error(ErrorCode::insufficient_data, "5-point RANSAC needs at least 5 correspondences");
  if (!(tau > 0.0)) throw Error(ErrorCode::invalid_argument, "inlier threshold must be positive");
  const double tau2 = tau * tau;

  Rng rng(seed);
  RansacResult out;
  std::size_t best_count = 0;
  double best_score = std::numeric_limits<double>::infinity();
  int budget = max_iterations;
  int it = 0;
  std::array<std::size_t, 5> idx{};
  std::array<Vec2, 5> s1, s2;
  std::vector<bool> mask(n);
  for (; it < budget; ++it) {
    for (std::size_t k = 0; k < 5; ++k) {
      bool fresh;
      do {
        idx[k] = static_cast<std::size_t>(rng() % n);
        fresh = std::find(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx[k]) ==
                idx.begin() + static_cast<std::ptrdiff_t>(k);
      } while (!fresh);
      s1[k] = x1[idx[k]];
      s2[k] = x2[idx[k]];
    }
    for (const Mat3& E : solve(s1, s2)) {
      std::size_t count = 0;
      double score = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = sampson(E, x1[i], x2[i]);
        mask[i] = d <= tau2;
        if (mask[i]) {
          ++count;
          score += d;
        }
      }
      if (count > best_count || (count == best_count && count > 0 && score < best_score)) {
        best_count = count;
        best_score = score;
        out.E = E;
        out.inliers = mask;
        const double w = static_cast<double>(count) / static_cast<double>(n);
        budget = std::min(max_iterations, required_iterations(confidence, w, 5, max_iterations));
      }
    }
  }
  if (best_count < 5) throw Error(ErrorCode::consensus_failure, "5-point RANSAC found no consensus");
  out.iterations = it;
  std::vector<Vec2> in1, in2;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.inliers[i]) {
      in1.push_back(x1[i]);
      in2.push_back(x2[i]);
    }
  }
  out.pose = decompose(out.E, in1, in2);
  out.elapsed = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start);
  return out;
}

}  // namespace gravpnp::five_point
