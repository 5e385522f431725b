#include "fpcert/learned.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "fpcert/solvers.hpp"

namespace fpcert::learned {

namespace {

// Elementwise soft threshold of a matrix with scalar psi; derivative is 1
// strictly outside the threshold, 0 at and inside the kink.
MatrixXd soft(const MatrixXd& v, double psi) {
  return v.unaryExpr([psi](double t) { return solvers::soft_threshold(t, psi); });
}

MatrixXd soft_mask(const MatrixXd& v, double psi) {
  return v.unaryExpr([psi](double t) { return std::abs(t) > psi ? 1.0 : 0.0; });
}

MatrixXd sign_of(const MatrixXd& v) {
  return v.unaryExpr([](double t) { return t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0); });
}

std::vector<int> index_range(int first, int count) {
  std::vector<int> out(count);
  for (int i = 0; i < count; ++i) out[i] = first + i;
  return out;
}

// Shared update z+ = eta_psi(z - gamma Wt'(Dz - x)) used by ALISTA (fixed Wt)
// and TiLISTA (learned Wt, leading block of theta).
class ThresholdNet : public Architecture {
 public:
  ThresholdNet(MatrixXd d, int k_layers, double rho, double L)
      : d_(std::move(d)), k_(k_layers), rho_(rho), L_(L) {
    if (k_ < 0) throw std::invalid_argument("learned arch: negative depth");
  }

  int z_dim() const override { return static_cast<int>(d_.cols()); }
  int depth() const override { return k_; }

  std::vector<MatrixXd> iterates_batch(const VectorXd& theta, const MatrixXd& x_batch,
                                       int k_max) const override {
    check_theta(theta);
    std::vector<MatrixXd> z;
    z.reserve(k_max + 1);
    z.push_back(MatrixXd::Zero(d_.cols(), x_batch.cols()));
    if (k_ == 0) {  // no layers: every iterate is the zero start
      for (int k = 0; k < k_max; ++k) z.push_back(z.front());
      return z;
    }
    const MatrixXd wt = w_tilde(theta);
    for (int k = 0; k < k_max; ++k) {
      const int layer = std::min(k, k_ - 1);
      const MatrixXd pre =
          z.back() - gamma(theta, layer) * (wt.transpose() * (d_ * z.back() - x_batch));
      z.push_back(soft(pre, psi(theta, layer)));
    }
    return z;
  }

  VectorXd backprop_batch(const VectorXd& theta, const MatrixXd& x_batch, int K,
                          const MatrixXd& dz_k) const override {
    check_theta(theta);
    if (k_ == 0 || K == 0) return VectorXd::Zero(theta.size());
    const MatrixXd wt = w_tilde(theta);
    // Forward pass storing residuals R_k = D z^k - x and pre-activations.
    std::vector<MatrixXd> z{MatrixXd::Zero(d_.cols(), x_batch.cols())};
    std::vector<MatrixXd> r, pre;
    for (int k = 0; k < K; ++k) {
      const int layer = std::min(k, k_ - 1);
      r.push_back(d_ * z.back() - x_batch);
      pre.push_back(z.back() - gamma(theta, layer) * (wt.transpose() * r.back()));
      z.push_back(soft(pre.back(), psi(theta, layer)));
    }
    VectorXd grad = VectorXd::Zero(theta.size());
    MatrixXd dz = dz_k;
    for (int k = K - 1; k >= 0; --k) {
      const int layer = std::min(k, std::max(k_ - 1, 0));
      const MatrixXd dpre = dz.cwiseProduct(soft_mask(pre[k], psi(theta, layer)));
      grad[psi_index(layer)] -= sign_of(pre[k]).cwiseProduct(dpre).sum();
      const MatrixXd wtr = wt.transpose() * r[k];
      grad[gamma_index(layer)] -= wtr.cwiseProduct(dpre).sum();
      accumulate_wt_grad(grad, r[k], dpre, gamma(theta, layer));
      dz = dpre - gamma(theta, layer) * (d_.transpose() * (wt * dpre));
    }
    return grad;
  }

 protected:
  virtual MatrixXd w_tilde(const VectorXd& theta) const = 0;
  virtual int psi_index(int layer) const = 0;
  virtual int gamma_index(int layer) const = 0;
  virtual void accumulate_wt_grad(VectorXd& grad, const MatrixXd& r, const MatrixXd& dpre,
                                  double gamma_k) const {}

  double psi(const VectorXd& theta, int layer) const { return theta[psi_index(layer)]; }
  double gamma(const VectorXd& theta, int layer) const { return theta[gamma_index(layer)]; }
  void check_theta(const VectorXd& theta) const {
    if (theta.size() != theta_len()) {
      throw std::invalid_argument(name() + ": theta length mismatch");
    }
  }

  MatrixXd d_;
  int k_;
  double rho_, L_;
};

class Alista final : public ThresholdNet {
 public:
  Alista(MatrixXd d, MatrixXd wt, int k_layers, double rho, double L)
      : ThresholdNet(std::move(d), k_layers, rho, L), wt_(std::move(wt)) {
    if (wt_.rows() != d_.rows() || wt_.cols() != d_.cols()) {
      throw std::invalid_argument("alista: W~ dimensions must match D");
    }
  }

  std::string name() const override { return "alista"; }
  int theta_len() const override { return 2 * k_; }
  std::vector<std::vector<int>> groups() const override {
    return {index_range(0, k_), index_range(k_, k_)};
  }
  VectorXd prior_mean() const override {
    VectorXd w0(2 * k_);
    for (int k = 0; k < k_; ++k) {
      w0[k] = rho_ / L_;
      w0[k_ + k] = 1.0 / L_;
    }
    return w0;
  }

 private:
  MatrixXd w_tilde(const VectorXd&) const override { return wt_; }
  int psi_index(int layer) const override { return layer; }
  int gamma_index(int layer) const override { return k_ + layer; }

  MatrixXd wt_;
};

class Tilista final : public ThresholdNet {
 public:
  using ThresholdNet::ThresholdNet;

  std::string name() const override { return "tilista"; }
  int theta_len() const override { return wt_len() + 2 * k_; }
  std::vector<std::vector<int>> groups() const override {
    return {index_range(0, wt_len()), index_range(wt_len(), k_),
            index_range(wt_len() + k_, k_)};
  }
  VectorXd prior_mean() const override {
    VectorXd w0(theta_len());
    Eigen::Map<MatrixXd>(w0.data(), d_.rows(), d_.cols()) = d_;
    for (int k = 0; k < k_; ++k) {
      w0[wt_len() + k] = rho_ / L_;
      w0[wt_len() + k_ + k] = 1.0 / L_;
    }
    return w0;
  }

 private:
  int wt_len() const { return static_cast<int>(d_.size()); }
  MatrixXd w_tilde(const VectorXd& theta) const override {
    return Eigen::Map<const MatrixXd>(theta.data(), d_.rows(), d_.cols());
  }
  int psi_index(int layer) const override { return wt_len() + layer; }
  int gamma_index(int layer) const override { return wt_len() + k_ + layer; }
  void accumulate_wt_grad(VectorXd& grad, const MatrixXd& r, const MatrixXd& dpre,
                          double gamma_k) const override {
    Eigen::Map<MatrixXd>(grad.data(), d_.rows(), d_.cols()) -=
        gamma_k * (r * dpre.transpose());
  }
};

class Lista final : public Architecture {
 public:
  Lista(MatrixXd d, int k_layers, double L) : d_(std::move(d)), k_(k_layers), L_(L) {
    if (k_ < 0) throw std::invalid_argument("lista: negative depth");
    n_ = static_cast<int>(d_.cols());
    m_ = static_cast<int>(d_.rows());
    per_layer_ = 1 + n_ * n_ + n_ * m_;
  }

  std::string name() const override { return "lista"; }
  int theta_len() const override { return k_ * per_layer_; }
  int z_dim() const override { return n_; }
  int depth() const override { return k_; }

  std::vector<std::vector<int>> groups() const override {
    std::vector<std::vector<int>> g(3);
    for (int k = 0; k < k_; ++k) {
      const int base = k * per_layer_;
      g[0].push_back(base);
      for (int i = 0; i < n_ * n_; ++i) g[1].push_back(base + 1 + i);
      for (int i = 0; i < n_ * m_; ++i) g[2].push_back(base + 1 + n_ * n_ + i);
    }
    return g;
  }

  VectorXd prior_mean() const override {
    // ISTA parameterization with rho = 0.1.
    const MatrixXd w1 = MatrixXd::Identity(n_, n_) - (1.0 / L_) * (d_.transpose() * d_);
    const MatrixXd w2 = (1.0 / L_) * d_.transpose();
    VectorXd w0(theta_len());
    for (int k = 0; k < k_; ++k) {
      const int base = k * per_layer_;
      w0[base] = 0.1 / L_;
      Eigen::Map<MatrixXd>(w0.data() + base + 1, n_, n_) = w1;
      Eigen::Map<MatrixXd>(w0.data() + base + 1 + n_ * n_, n_, m_) = w2;
    }
    return w0;
  }

  std::vector<MatrixXd> iterates_batch(const VectorXd& theta, const MatrixXd& x_batch,
                                       int k_max) const override {
    check_theta(theta);
    std::vector<MatrixXd> z{MatrixXd::Zero(n_, x_batch.cols())};
    for (int k = 0; k < k_max; ++k) {
      if (k_ == 0) {
        z.push_back(z.front());
        continue;
      }
      const int layer = std::min(k, k_ - 1);
      z.push_back(soft(w1(theta, layer) * z.back() + w2(theta, layer) * x_batch,
                       psi(theta, layer)));
    }
    return z;
  }

  VectorXd backprop_batch(const VectorXd& theta, const MatrixXd& x_batch, int K,
                          const MatrixXd& dz_k) const override {
    check_theta(theta);
    if (k_ == 0 || K == 0) return VectorXd::Zero(theta.size());
    std::vector<MatrixXd> z{MatrixXd::Zero(n_, x_batch.cols())};
    std::vector<MatrixXd> pre;
    for (int k = 0; k < K; ++k) {
      const int layer = std::min(k, std::max(k_ - 1, 0));
      pre.push_back(w1(theta, layer) * z.back() + w2(theta, layer) * x_batch);
      z.push_back(soft(pre.back(), psi(theta, layer)));
    }
    VectorXd grad = VectorXd::Zero(theta.size());
    MatrixXd dz = dz_k;
    for (int k = K - 1; k >= 0; --k) {
      const int layer = std::min(k, std::max(k_ - 1, 0));
      const int base = layer * per_layer_;
      const MatrixXd dpre = dz.cwiseProduct(soft_mask(pre[k], psi(theta, layer)));
      grad[base] -= sign_of(pre[k]).cwiseProduct(dpre).sum();
      Eigen::Map<MatrixXd>(grad.data() + base + 1, n_, n_) += dpre * z[k].transpose();
      Eigen::Map<MatrixXd>(grad.data() + base + 1 + n_ * n_, n_, m_) +=
          dpre * x_batch.transpose();
      dz = w1(theta, layer).transpose() * dpre;
    }
    return grad;
  }

 private:
  double psi(const VectorXd& theta, int layer) const { return theta[layer * per_layer_]; }
  Eigen::Map<const MatrixXd> w1(const VectorXd& theta, int layer) const {
    return {theta.data() + layer * per_layer_ + 1, n_, n_};
  }
  Eigen::Map<const MatrixXd> w2(const VectorXd& theta, int layer) const {
    return {theta.data() + layer * per_layer_ + 1 + n_ * n_, n_, m_};
  }
  void check_theta(const VectorXd& theta) const {
    if (theta.size() != theta_len()) throw std::invalid_argument("lista: theta length mismatch");
  }

  MatrixXd d_;
  int k_, n_, m_, per_layer_;
  double L_;
};

class L2ws final : public Architecture {
 public:
  L2ws(std::vector<int> dims, MatrixXd p, double gamma, int k_layers)
      : dims_(std::move(dims)), p_(std::move(p)), gamma_(gamma), k_(k_layers) {
    if (dims_.size() < 2) throw std::invalid_argument("l2ws: need at least one layer");
    if (dims_.back() != p_.rows() || p_.rows() != p_.cols()) {
      throw std::invalid_argument("l2ws: output dimension must match P");
    }
    len_ = 0;
    for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
      len_ += dims_[i + 1] * dims_[i] + dims_[i + 1];
    }
  }

  std::string name() const override { return "l2ws"; }
  int theta_len() const override { return len_; }
  int z_dim() const override { return static_cast<int>(p_.rows()); }
  int depth() const override { return k_; }

  std::vector<std::vector<int>> groups() const override {
    std::vector<std::vector<int>> g;
    int off = 0;
    for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
      g.push_back(index_range(off, dims_[i + 1] * dims_[i]));
      off += dims_[i + 1] * dims_[i];
      g.push_back(index_range(off, dims_[i + 1]));
      off += dims_[i + 1];
    }
    return g;
  }

  VectorXd prior_mean() const override { return VectorXd::Zero(len_); }

  std::vector<MatrixXd> iterates_batch(const VectorXd& theta, const MatrixXd& x_batch,
                                       int k_max) const override {
    check(theta, x_batch);
    std::vector<MatrixXd> z{mlp_forward(theta, x_batch).back()};
    for (int k = 0; k < k_max; ++k) {
      z.push_back(z.back() - gamma_ * (p_ * z.back() + x_batch));
    }
    return z;
  }

  VectorXd backprop_batch(const VectorXd& theta, const MatrixXd& x_batch, int K,
                          const MatrixXd& dz_k) const override {
    check(theta, x_batch);
    const auto acts = mlp_forward(theta, x_batch);
    // Gradient-descent layers are linear with symmetric Jacobian I - gamma P.
    MatrixXd dz = dz_k;
    for (int k = 0; k < K; ++k) dz -= gamma_ * (p_ * dz);
    VectorXd grad = VectorXd::Zero(len_);
    const int layers = static_cast<int>(dims_.size()) - 1;
    MatrixXd dout = dz;
    for (int i = layers - 1; i >= 0; --i) {
      if (i < layers - 1) dout = dout.cwiseProduct(relu_mask(acts[i + 1]));
      const int off = offset(i);
      Eigen::Map<MatrixXd>(grad.data() + off, dims_[i + 1], dims_[i]) +=
          dout * acts[i].transpose();
      Eigen::Map<VectorXd>(grad.data() + off + dims_[i + 1] * dims_[i], dims_[i + 1]) +=
          dout.rowwise().sum();
      if (i > 0) dout = wmat(theta, i).transpose() * dout;
    }
    return grad;
  }

 private:
  int offset(int layer) const {
    int off = 0;
    for (int i = 0; i < layer; ++i) off += dims_[i + 1] * dims_[i] + dims_[i + 1];
    return off;
  }
  Eigen::Map<const MatrixXd> wmat(const VectorXd& theta, int layer) const {
    return {theta.data() + offset(layer), dims_[layer + 1], dims_[layer]};
  }
  Eigen::Map<const VectorXd> bvec(const VectorXd& theta, int layer) const {
    return {theta.data() + offset(layer) + dims_[layer + 1] * dims_[layer],
            dims_[layer + 1]};
  }
  static MatrixXd relu_mask(const MatrixXd& a) {
    return a.unaryExpr([](double t) { return t > 0.0 ? 1.0 : 0.0; });
  }

  // Activations a_0 = x, a_{i+1} = relu(W_i a_i + b_i) for hidden layers,
  // linear final layer.
  std::vector<MatrixXd> mlp_forward(const VectorXd& theta, const MatrixXd& x_batch) const {
    const int layers = static_cast<int>(dims_.size()) - 1;
    std::vector<MatrixXd> a{x_batch};
    for (int i = 0; i < layers; ++i) {
      MatrixXd pre = (wmat(theta, i) * a.back()).colwise() + bvec(theta, i);
      if (i < layers - 1) pre = pre.cwiseMax(0.0);
      a.push_back(std::move(pre));
    }
    return a;
  }

  void check(const VectorXd& theta, const MatrixXd& x_batch) const {
    if (theta.size() != len_) throw std::invalid_argument("l2ws: theta length mismatch");
    if (x_batch.rows() != dims_.front()) {
      throw std::invalid_argument("l2ws: input dimension mismatch");
    }
  }

  std::vector<int> dims_;
  MatrixXd p_;
  double gamma_;
  int k_, len_;
};

}  // namespace

std::vector<VectorXd> Architecture::iterates(const VectorXd& theta, const VectorXd& x,
                                             int k_max) const {
  const auto batch = iterates_batch(theta, x, k_max);
  std::vector<VectorXd> out;
  out.reserve(batch.size());
  for (const auto& z : batch) out.push_back(z.col(0));
  return out;
}

MatrixXd datafree_W(const MatrixXd& d) {
  const MatrixXd gram = d * d.transpose();
  Eigen::LDLT<MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success) {
    throw std::runtime_error("datafree_W: DD' factorization failed");
  }
  MatrixXd w(d.rows(), d.cols());
  for (Eigen::Index i = 0; i < d.cols(); ++i) {
    const VectorXd g = ldlt.solve(d.col(i));
    const double den = d.col(i).dot(g);
    if (!(den > 1e-300)) throw std::runtime_error("datafree_W: singular DD'");
    w.col(i) = g / den;
  }
  return w;
}

std::unique_ptr<Architecture> make_alista(MatrixXd d, MatrixXd w_tilde, int k_layers,
                                          double rho, double L) {
  return std::make_unique<Alista>(std::move(d), std::move(w_tilde), k_layers, rho, L);
}

std::unique_ptr<Architecture> make_tilista(MatrixXd d, int k_layers, double rho,
                                           double L) {
  return std::make_unique<Tilista>(std::move(d), k_layers, rho, L);
}

std::unique_ptr<Architecture> make_lista(MatrixXd d, int k_layers, double L) {
  return std::make_unique<Lista>(std::move(d), k_layers, L);
}

std::unique_ptr<Architecture> make_l2ws(std::vector<int> layer_dims, MatrixXd p,
                                        double gamma, int k_layers) {
  return std::make_unique<L2ws>(std::move(layer_dims), std::move(p), gamma, k_layers);
}

VectorXd sample_weights(const VectorXd& w, const VectorXd& s, Rng& rng) {
  if (w.size() != s.size()) throw std::invalid_argument("sample_weights: size mismatch");
  VectorXd out(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    out[i] = w[i] + rng.next_normal() * std::sqrt(s[i]);
  }
  return out;
}

double l2ws_distance_bound(const std::vector<LayerPosterior>& layers, double x_bar,
                           double z_bar, double delta) {
  if (delta <= 0.0 || delta >= 1.0) {
    throw std::invalid_argument("l2ws_distance_bound: delta outside (0,1)");
  }
  if (layers.empty()) throw std::invalid_argument("l2ws_distance_bound: no layers");
  const double L = static_cast<double>(layers.size());
  double a = x_bar;
  for (const auto& layer : layers) {
    const Eigen::Index m = layer.w_mean.rows();
    const Eigen::Index n = layer.w_mean.cols();
    // v^2: largest row/column sum of squares of the augmented std block
    // [sqrt(Sigma) sqrt(sigma)] (the covariance is diagonal, so entries of
    // the Tropp B-matrix are the per-entry stds).
    double v2 = layer.b_var.sum();  // the bias column
    for (Eigen::Index j = 0; j < n; ++j) v2 = std::max(v2, layer.w_var.col(j).sum());
    for (Eigen::Index i = 0; i < m; ++i) {
      v2 = std::max(v2, layer.w_var.row(i).sum() + layer.b_var[i]);
    }
    const double tau =
        std::sqrt(v2) * std::sqrt(2.0 * std::log(L * (m + n + 1) / delta));
    const double wnorm = layer.w_mean.jacobiSvd().singularValues()[0];
    a = (wnorm + layer.b_mean.norm() + tau) * (a + 1.0);
  }
  return z_bar + a;
}

std::vector<LayerPosterior> l2ws_layer_posteriors(const std::vector<int>& layer_dims,
                                                  const VectorXd& w, const VectorXd& s) {
  if (w.size() != s.size()) {
    throw std::invalid_argument("l2ws_layer_posteriors: size mismatch");
  }
  std::vector<LayerPosterior> out;
  int off = 0;
  for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
    const int rows = layer_dims[i + 1], cols = layer_dims[i];
    LayerPosterior lp;
    lp.w_mean = Eigen::Map<const MatrixXd>(w.data() + off, rows, cols);
    lp.w_var = Eigen::Map<const MatrixXd>(s.data() + off, rows, cols);
    off += rows * cols;
    lp.b_mean = Eigen::Map<const VectorXd>(w.data() + off, rows);
    lp.b_var = Eigen::Map<const VectorXd>(s.data() + off, rows);
    off += rows;
    out.push_back(std::move(lp));
  }
  if (off != w.size()) {
    throw std::invalid_argument("l2ws_layer_posteriors: layout does not tile theta");
  }
  return out;
}

}  // namespace fpcert::learned
