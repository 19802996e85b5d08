#pragma once

// Domain-shift quantification and feature-space diagnostics.

#include "dgadr/common.hpp"
#include "dgadr/losses.hpp"

#include <map>
#include <ostream>
#include <set>

namespace dgadr {

struct GaussianFit {
  Vector mean;
  Eigen::MatrixXd covariance;
  std::size_t sample_count = 0;
};

/// Sample mean and unbiased (n - 1) covariance plus lambda * I, where
/// lambda = shrinkage * trace(cov) / d. A zero-trace covariance is floored to 1e-9 * I.
inline GaussianFit fit_gaussian(const Matrix &features, double shrinkage = 1e-3) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (n < 2) throw Error("fit_gaussian: need at least two samples");
  if (!(shrinkage >= 0.0)) throw Error("fit_gaussian: shrinkage must be >= 0");
  constexpr double kMinVariance = 1e-9;
  GaussianFit fit;
  fit.sample_count = static_cast<std::size_t>(n);
  fit.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - fit.mean.transpose();
  fit.covariance = (centered.transpose() * centered) / static_cast<double>(n - 1);
  fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose());
  const double trace = fit.covariance.trace();
  if (trace == 0.0)
    fit.covariance = kMinVariance * Eigen::MatrixXd::Identity(d, d);
  else
    fit.covariance.diagonal().array() += shrinkage * trace / static_cast<double>(d);
  return fit;
}

/// KL(p || q) between Gaussians, via Cholesky factors of both covariances.
inline double kl_gaussian(const GaussianFit &p, const GaussianFit &q) {
  const Eigen::Index d = p.mean.size();
  if (q.mean.size() != d || p.covariance.rows() != d || q.covariance.rows() != d)
    throw Error("kl_gaussian: dimension mismatch");
  if (p.mean == q.mean && p.covariance == q.covariance) return 0.0;
  const Eigen::LLT<Eigen::MatrixXd> lp(p.covariance);
  const Eigen::LLT<Eigen::MatrixXd> lq(q.covariance);
  if (lp.info() != Eigen::Success || lq.info() != Eigen::Success)
    throw Error("kl_gaussian: covariance is not positive definite");
  const Eigen::MatrixXd lq_mat = lq.matrixL();
  const Eigen::MatrixXd lp_mat = lp.matrixL();
  // tr(Sq^-1 Sp) = ||Lq^-1 Lp||_F^2
  const Eigen::MatrixXd m = lq.matrixL().solve(lp_mat);
  const Vector diff = q.mean - p.mean;
  const Vector w = lq.matrixL().solve(diff);
  const double log_det_q = 2.0 * lq_mat.diagonal().array().log().sum();
  const double log_det_p = 2.0 * lp_mat.diagonal().array().log().sum();
  const double kl =
      0.5 * (m.squaredNorm() + w.squaredNorm() - static_cast<double>(d) + log_det_q - log_det_p);
  return std::max(kl, 0.0);
}

struct KLMatrix {
  std::vector<int> domain_ids;
  Eigen::MatrixXd values;  // values(a, b) = KL(domain a || domain b)

  void write_csv(std::ostream &out, int digits = 6) const {
    out << "domain";
    for (int d : domain_ids) out << ',' << d;
    out << '\n';
    for (Eigen::Index a = 0; a < values.rows(); ++a) {
      out << domain_ids[static_cast<std::size_t>(a)];
      for (Eigen::Index b = 0; b < values.cols(); ++b) out << ',' << format_fixed(values(a, b), digits);
      out << '\n';
    }
  }

  double mean_off_diagonal() const {
    const Eigen::Index k = values.rows();
    if (k < 2) return 0.0;
    return values.sum() / static_cast<double>(k * (k - 1));
  }
};

/// Pairwise KL matrix between per-domain Gaussian fits. Domains are taken in key order.
inline KLMatrix domain_kl_matrix(const std::map<int, Matrix> &features_by_domain,
                                 double shrinkage = 1e-3) {
  KLMatrix out;
  std::vector<GaussianFit> fits;
  for (const auto &[d, feats] : features_by_domain) {
    if (feats.rows() < 2)
      throw Error("domain_kl_matrix: domain " + std::to_string(d) + " has fewer than two samples");
    out.domain_ids.push_back(d);
    fits.push_back(fit_gaussian(feats, shrinkage));
  }
  const Eigen::Index k = static_cast<Eigen::Index>(fits.size());
  out.values = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = 0; b < k; ++b)
      if (a != b) out.values(a, b) = kl_gaussian(fits[static_cast<std::size_t>(a)], fits[static_cast<std::size_t>(b)]);
  return out;
}

/// Groups feature rows by domain id.
inline std::map<int, Matrix> group_by_domain(const Matrix &features, const std::vector<int> &domains) {
  if (static_cast<std::size_t>(features.rows()) != domains.size())
    throw Error("group_by_domain: row count mismatch");
  std::map<int, std::vector<Eigen::Index>> rows;
  for (std::size_t i = 0; i < domains.size(); ++i) rows[domains[i]].push_back(static_cast<Eigen::Index>(i));
  std::map<int, Matrix> out;
  for (const auto &[d, idx] : rows) {
    Matrix m(static_cast<Eigen::Index>(idx.size()), features.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = features.row(idx[r]);
    out.emplace(d, std::move(m));
  }
  return out;
}

/// Mean over classes of the mean pairwise cosine distance between that class's
/// per-domain centroids on the unit sphere. Classes seen in fewer than two domains
/// do not contribute; zero-norm rows are skipped when averaging directions.
inline double cross_domain_dispersion(const Matrix &z, const std::vector<int> &labels,
                                      const std::vector<int> &domains) {
  if (static_cast<std::size_t>(z.rows()) != labels.size() || labels.size() != domains.size())
    throw Error("cross_domain_dispersion: row count mismatch");
  std::map<std::pair<int, int>, Vector> sums;  // (class, domain) -> sum of unit vectors
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double n = z.row(static_cast<Eigen::Index>(i)).norm();
    auto [it, inserted] = sums.try_emplace({labels[i], domains[i]}, Vector::Zero(z.cols()));
    if (n > 0.0) it->second += z.row(static_cast<Eigen::Index>(i)).transpose() / n;
  }
  std::map<int, std::vector<Vector>> centroids;
  for (const auto &[key, s] : sums) {
    const double n = s.norm();
    centroids[key.first].push_back(n > 0.0 ? Vector(s / n) : s);
  }
  double total = 0.0;
  int classes = 0;
  bool degenerate = false;
  for (const auto &[label, cs] : centroids) {
    if (cs.size() < 2) continue;
    double sum = 0.0;
    int pairs = 0;
    for (std::size_t a = 0; a < cs.size(); ++a)
      for (std::size_t b = a + 1; b < cs.size(); ++b) {
        sum += detail::cosine_distance_raw(cs[a], cs[b], degenerate);
        ++pairs;
      }
    total += sum / pairs;
    ++classes;
  }
  if (classes == 0) throw Error("cross_domain_dispersion: no class is shared by two domains");
  return total / classes;
}

struct Projection {
  Matrix coords;              // n x out_dims
  Eigen::MatrixXd components;  // d x out_dims, orthonormal columns
  Vector mean;
};

/// Projection onto the leading principal axes of the centred data. Each axis is
/// signed so that its largest-magnitude loading is positive; axes beyond the data's
/// rank project to zero.
inline Projection pca_project(const Matrix &z, int out_dims = 2) {
  const Eigen::Index n = z.rows();
  const Eigen::Index d = z.cols();
  if (out_dims < 1) throw Error("pca_project: out_dims must be >= 1");
  if (n <= out_dims) throw Error("pca_project: need more samples than output dimensions");
  Projection p;
  p.mean = z.colwise().mean().transpose();
  const Eigen::MatrixXd centered = z.rowwise() - p.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  p.components = Eigen::MatrixXd::Zero(d, out_dims);
  const double top = std::max(eig.eigenvalues().maxCoeff(), 0.0);
  for (int k = 0; k < out_dims && k < d; ++k) {
    const Eigen::Index col = d - 1 - k;  // eigenvalues ascend
    if (eig.eigenvalues()[col] <= 1e-12 * top || top == 0.0) continue;
    Vector axis = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis[arg] < 0) axis = -axis;
    p.components.col(k) = axis;
  }
  p.coords = centered * p.components;
  return p;
}

inline void write_projection_csv(std::ostream &out, const Matrix &coords, const std::vector<int> &labels,
                                 const std::vector<int> &domains, int digits = 6) {
  if (coords.cols() < 2) throw Error("write_projection_csv: need two coordinates");
  out << "x,y,label,domain\n";
  for (Eigen::Index i = 0; i < coords.rows(); ++i)
    out << format_fixed(coords(i, 0), digits) << ',' << format_fixed(coords(i, 1), digits) << ','
        << labels[static_cast<std::size_t>(i)] << ',' << domains[static_cast<std::size_t>(i)] << '\n';
}

}  // namespace dgadr
