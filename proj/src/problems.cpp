#include "fpcert/problems.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "fpcert/rng.hpp"

namespace fpcert::problems {

std::string to_string(FamilyId id) {
  switch (id) {
    case FamilyId::sparse_coding: return "sparse_coding";
    case FamilyId::unconstrained_qp: return "unconstrained_qp";
    case FamilyId::deblurring: return "deblurring";
  }
  return "?";
}

namespace {

fp::Instance sparse_coding_instance(const ParametricFamily& fam, std::uint64_t index) {
  const int m = static_cast<int>(fam.dictionary.rows());
  const int n = static_cast<int>(fam.dictionary.cols());
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(fam.seed, stream::family_instance, index, attempt);
    VectorXd z_true = VectorXd::Zero(n);
    bool any = false;
    for (int i = 0; i < n; ++i) {
      const double g = rng.next_normal();
      if (rng.next_double() < fam.keep_prob) {
        z_true[i] = g;
        any = true;
      }
    }
    if (!any) continue;  // all entries zeroed: resample
    const VectorXd signal = fam.dictionary * z_true;
    // Per-coordinate noise std from 10 log10(|Dz|^2 / (m sigma^2)) = snr_db.
    const double sigma =
        std::sqrt(signal.squaredNorm() / (m * std::pow(10.0, fam.snr_db / 10.0)));
    VectorXd b = signal;
    for (int i = 0; i < m; ++i) b[i] += sigma * rng.next_normal();
    return {b, z_true};
  }
}

fp::Instance qp_instance(const ParametricFamily& fam, std::uint64_t index) {
  Rng rng(fam.seed, stream::family_instance, index);
  const int n = static_cast<int>(fam.qp_diag.size());
  VectorXd c(n);
  for (int i = 0; i < n; ++i) c[i] = fam.coeff_scale[i] * rng.uniform(-10.0, 10.0);
  VectorXd z_star = -(c.array() / fam.qp_diag.array()).matrix();
  return {c, z_star};
}

fp::Instance deblurring_instance(const ParametricFamily& fam, std::uint64_t index) {
  Rng rng(fam.seed, stream::family_instance, index);
  const auto& y = fam.images[index % fam.images.size()];
  VectorXd x = fam.blur * y;
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += fam.noise_std * rng.next_normal();
  // Ground truth solutions are computed on demand by the solver layer.
  return {x, std::nullopt};
}

}  // namespace

fp::Instance ParametricFamily::instance(std::uint64_t index) const {
  switch (family_id) {
    case FamilyId::sparse_coding: return sparse_coding_instance(*this, index);
    case FamilyId::unconstrained_qp: return qp_instance(*this, index);
    case FamilyId::deblurring: return deblurring_instance(*this, index);
  }
  throw std::logic_error("unknown family");
}

std::vector<fp::Instance> ParametricFamily::instances(std::uint64_t first,
                                                      std::uint64_t count) const {
  std::vector<fp::Instance> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) out.push_back(instance(first + i));
  return out;
}

ParametricFamily gen_sparse_coding(int m, int n, double keep_prob, double snr_db,
                                   double rho, std::uint64_t seed) {
  if (m < 1 || n < 1) throw std::invalid_argument("gen_sparse_coding: bad dimensions");
  ParametricFamily fam;
  fam.family_id = FamilyId::sparse_coding;
  fam.seed = seed;
  fam.keep_prob = keep_prob;
  fam.snr_db = snr_db;
  fam.rho = rho;
  Rng rng(seed, stream::family_fixed);
  fam.dictionary.resize(m, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < m; ++i) fam.dictionary(i, j) = scale * rng.next_normal();
    fam.dictionary.col(j).normalize();
  }
  return fam;
}

ParametricFamily gen_unconstrained_qp(int n, std::uint64_t seed) {
  if (n < 2 || n % 2 != 0) throw std::invalid_argument("gen_unconstrained_qp: n must be even");
  ParametricFamily fam;
  fam.family_id = FamilyId::unconstrained_qp;
  fam.seed = seed;
  fam.qp_diag.resize(n);
  fam.coeff_scale.resize(n);
  for (int i = 0; i < n; ++i) {
    const bool stiff = i < n / 2;
    fam.qp_diag[i] = stiff ? 100.0 : 1.0;
    fam.coeff_scale[i] = stiff ? 10000.0 : 1.0;
  }
  return fam;
}

MatrixXd blur_matrix_1d(int side, int blur_size) {
  if (side < 1 || blur_size < 1) throw std::invalid_argument("blur_matrix_1d: bad sizes");
  // blur_size taps at integer offsets -floor(L/2) .. ceil(L/2)-1, Gaussian
  // weights with std = L/4, normalized so the full kernel sums to 1.
  const double sigma = blur_size / 4.0;
  const int lo = -(blur_size / 2);
  std::vector<double> w(blur_size);
  double sum = 0.0;
  for (int t = 0; t < blur_size; ++t) {
    const double d = lo + t;
    w[t] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += w[t];
  }
  MatrixXd B = MatrixXd::Zero(side, side);
  for (int i = 0; i < side; ++i) {
    for (int t = 0; t < blur_size; ++t) {
      const int j = i + lo + t;
      if (j >= 0 && j < side) B(i, j) += w[t] / sum;  // zero-padded borders
    }
  }
  return B;
}

namespace {

VectorXd synthetic_image(int side, Rng& rng) {
  // Random sparse Gaussian blobs, clamped to [0,1].
  const int blobs = 2 + static_cast<int>(rng.next_u64() % 3);
  MatrixXd img = MatrixXd::Zero(side, side);
  for (int b = 0; b < blobs; ++b) {
    const double cx = rng.uniform(0.15, 0.85) * side;
    const double cy = rng.uniform(0.15, 0.85) * side;
    const double w = rng.uniform(0.06, 0.2) * side;
    const double amp = rng.uniform(0.4, 1.0);
    for (int i = 0; i < side; ++i) {
      for (int j = 0; j < side; ++j) {
        const double d2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
        img(i, j) += amp * std::exp(-d2 / (2.0 * w * w));
      }
    }
  }
  VectorXd v(side * side);
  int idx = 0;
  for (int j = 0; j < side; ++j) {
    for (int i = 0; i < side; ++i) v[idx++] = std::clamp(img(i, j), 0.0, 1.0);
  }
  return v;
}

}  // namespace

ParametricFamily gen_deblurring(int side, int blur_size, double noise_std, double rho,
                                ImageSource source, const std::string& idx_path,
                                std::uint64_t seed) {
  ParametricFamily fam;
  fam.family_id = FamilyId::deblurring;
  fam.seed = seed;
  fam.side = side;
  fam.noise_std = noise_std;
  fam.rho = rho;
  const MatrixXd B = blur_matrix_1d(side, blur_size);
  fam.blur = Eigen::kroneckerProduct(B, B).eval();
  if (source == ImageSource::idx_file) {
    const auto imgs = load_idx(idx_path);
    for (const auto& img : imgs) {
      if (img.rows() != side || img.cols() != side) {
        throw std::invalid_argument("gen_deblurring: IDX image dimensions do not match side");
      }
      VectorXd v(side * side);
      int idx = 0;
      for (int j = 0; j < side; ++j) {
        for (int i = 0; i < side; ++i) v[idx++] = img(i, j);
      }
      fam.images.push_back(std::move(v));
    }
    if (fam.images.empty()) throw std::invalid_argument("gen_deblurring: empty IDX file");
  } else {
    constexpr int kPoolSize = 32;
    for (int i = 0; i < kPoolSize; ++i) {
      Rng rng(seed, stream::family_fixed, static_cast<std::uint64_t>(i));
      fam.images.push_back(synthetic_image(side, rng));
    }
  }
  return fam;
}

std::vector<MatrixXd> load_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_idx: cannot open " + path);

  auto read_u32 = [&](std::size_t offset) -> std::uint32_t {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) {
      throw std::runtime_error("load_idx: truncated header at byte offset " +
                               std::to_string(offset));
    }
    return (static_cast<std::uint32_t>(buf[0]) << 24) |
           (static_cast<std::uint32_t>(buf[1]) << 16) |
           (static_cast<std::uint32_t>(buf[2]) << 8) | buf[3];
  };

  const std::uint32_t magic = read_u32(0);
  if (magic != 0x00000803u) {
    throw std::runtime_error("load_idx: bad magic at byte offset 0");
  }
  const std::uint32_t count = read_u32(4);
  const std::uint32_t rows = read_u32(8);
  const std::uint32_t cols = read_u32(12);

  std::vector<MatrixXd> images;
  images.reserve(count);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t img = 0; img < count; ++img) {
    const std::size_t offset = 16 + static_cast<std::size_t>(img) * rows * cols;
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) {
      throw std::runtime_error("load_idx: truncated payload at byte offset " +
                               std::to_string(offset + static_cast<std::size_t>(in.gcount())));
    }
    MatrixXd m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) {
        m(r, c) = buf[static_cast<std::size_t>(r) * cols + c] / 255.0;
      }
    }
    images.push_back(std::move(m));
  }
  // Trailing bytes indicate a header/payload mismatch.
  char extra;
  if (in.read(&extra, 1)) {
    throw std::runtime_error("load_idx: trailing data at byte offset " +
                             std::to_string(16 + static_cast<std::size_t>(count) * rows * cols));
  }
  return images;
}

}  // namespace fpcert::problems
