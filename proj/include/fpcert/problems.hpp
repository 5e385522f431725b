#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "fpcert/fixed_point.hpp"

namespace fpcert::problems {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class FamilyId { sparse_coding, unconstrained_qp, deblurring };

std::string to_string(FamilyId id);

// A distribution over problem instances with shared fixed data. Instances
// are pure functions of (fixed data, seed, index), so they can be
// materialized in any order or in parallel.
struct ParametricFamily {
  FamilyId family_id;
  std::uint64_t seed = 0;

  // sparse_coding: D (m x n), lasso weight rho.
  // unconstrained_qp: quadratic P (diagonal), coefficient scales mu.
  // deblurring: blur operator A (n x n), rho, box [0,1], side length.
  MatrixXd dictionary;      // sparse_coding
  double rho = 0.0;         // sparse_coding / deblurring
  double snr_db = 40.0;     // sparse_coding
  double keep_prob = 0.1;   // sparse_coding: P(entry survives)
  VectorXd qp_diag;         // unconstrained_qp
  VectorXd coeff_scale;     // unconstrained_qp
  MatrixXd blur;            // deblurring (dense n x n operator)
  int side = 0;             // deblurring
  double noise_std = 0.0;   // deblurring
  std::vector<VectorXd> images;  // deblurring source pool (each in [0,1]^n)

  fp::Instance instance(std::uint64_t index) const;
  std::vector<fp::Instance> instances(std::uint64_t first, std::uint64_t count) const;
};

// Dictionary with i.i.d. N(0, 1/m) entries, columns normalized to unit norm.
// Instances: ground truth with N(0,1) entries kept with probability
// keep_prob, noise scaled to the requested SNR, x = b = D z + eps.
// All-zero ground truths are resampled.
ParametricFamily gen_sparse_coding(int m, int n, double keep_prob, double snr_db,
                                   double rho, std::uint64_t seed);

// Diagonal quadratic with the first n/2 eigenvalues 100 and the rest 1;
// instances x = c with c_i ~ mu_i * U[-10, 10], mu_i = 10000 for the stiff
// half and 1 otherwise; z*(x) = -P^{-1} c.
ParametricFamily gen_unconstrained_qp(int n, std::uint64_t seed);

enum class ImageSource { synthetic, idx_file };

// Box-constrained lasso deblurring family on side x side images. The blur is
// a separable Gaussian kernel of blur_size taps (std = blur_size / 4,
// renormalized, zero-padded borders). Instance parameter x = A y + noise.
// With y >= 0 the l1 penalty is linear, so the QP data are P = 2 A^T A,
// q(x) = -2 A^T x + rho 1, box [0,1]^n.
ParametricFamily gen_deblurring(int side, int blur_size, double noise_std, double rho,
                                ImageSource source, const std::string& idx_path,
                                std::uint64_t seed);

// 1-D blur matrix (side x side) for the separable kernel; the 2-D operator
// is its Kronecker square.
MatrixXd blur_matrix_1d(int side, int blur_size);

// IDX image file parser (big-endian magic 0x00000803). Pixels are scaled to
// [0,1] by division by 255. Parse errors report the byte offset.
std::vector<MatrixXd> load_idx(const std::string& path);

}  // namespace fpcert::problems
