#pragma once

// Classification and alignment objectives.
//
// DomAlign mines, for every query z_i in a batch, up to C hard positives (nearest
// same-class samples from any domain, the query's own domain included) and up to C
// hard negatives (nearest same-domain samples of a different class), then applies
//   max{0, margin + D_p - D_n}
// to the mean cosine distances D_p and D_n. The batch value is the mean over queries
// whose positive and negative sets are both nonempty.

#include "dgadr/common.hpp"
#include "dgadr/data.hpp"
#include "dgadr/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <ostream>

namespace dgadr {

namespace detail {

// 1 - cos(a, b). Returns 1 and sets `degenerate` if either vector has zero norm.
template <class A, class B>
double cosine_distance_raw(const A &a, const B &b, bool &degenerate) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    degenerate = true;
    return 1.0;
  }
  const double d = 1.0 - a.dot(b) / (na * nb);
  return std::clamp(d, 0.0, 2.0);
}

}  // namespace detail

/// 1 - cos(a, b), in [0, 2]. A zero-norm argument is treated as orthogonal (distance 1)
/// and reported through the warning sink.
template <class A, class B>
double cosine_distance(const A &a, const B &b) {
  if (a.size() != b.size()) throw Error("cosine_distance: dimension mismatch");
  bool degenerate = false;
  const double d = detail::cosine_distance_raw(a, b, degenerate);
  if (degenerate) warn("cosine_distance: zero-norm vector, using distance 1");
  return d;
}

/// Symmetric M x M matrix of pairwise cosine distances between the rows of Z.
inline Matrix cosine_distance_matrix(const Matrix &z, bool *any_degenerate = nullptr) {
  const Eigen::Index m = z.rows();
  Matrix dist = Matrix::Zero(m, m);
  bool degenerate = false;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double d = detail::cosine_distance_raw(z.row(i), z.row(j), degenerate);
      dist(i, j) = d;
      dist(j, i) = d;
    }
  if (any_degenerate) *any_degenerate = degenerate;
  return dist;
}

struct MiningResult {
  int query = 0;
  std::vector<int> positives;  // ascending distance, ties by lower index
  std::vector<int> negatives;
  bool valid = false;  // both sets nonempty
};

namespace detail {

// Candidates sorted by (distance, index); the first min(C, n) are kept.
// `gap` receives the distance between the last kept and the first dropped candidate.
inline std::vector<int> select_nearest(std::vector<std::pair<double, int>> cand, int count,
                                       double *gap = nullptr) {
  const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(std::max(count, 0)), cand.size());
  const std::size_t sorted = std::min(keep + 1, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(sorted), cand.end());
  if (gap) {
    *gap = (keep > 0 && keep < cand.size()) ? cand[keep].first - cand[keep - 1].first
                                            : std::numeric_limits<double>::infinity();
  }
  std::vector<int> out;
  out.reserve(keep);
  for (std::size_t k = 0; k < keep; ++k) out.push_back(cand[k].second);
  return out;
}

inline void check_batch(const Matrix &z, const std::vector<int> &labels,
                        const std::vector<int> &domains) {
  if (static_cast<std::size_t>(z.rows()) != labels.size() || labels.size() != domains.size())
    throw Error("mining: features, labels and domains disagree on batch size");
}

inline std::vector<int> mine_positives_from(const Matrix &dist, int query,
                                            const std::vector<int> &labels, int count,
                                            double *gap = nullptr) {
  std::vector<std::pair<double, int>> cand;
  for (int j = 0; j < static_cast<int>(labels.size()); ++j)
    if (j != query && labels[j] == labels[query]) cand.emplace_back(dist(query, j), j);
  return select_nearest(std::move(cand), count, gap);
}

inline std::vector<int> mine_negatives_from(const Matrix &dist, int query,
                                            const std::vector<int> &labels,
                                            const std::vector<int> &domains, int count,
                                            double *gap = nullptr) {
  std::vector<std::pair<double, int>> cand;
  for (int k = 0; k < static_cast<int>(labels.size()); ++k)
    if (domains[k] == domains[query] && labels[k] != labels[query])
      cand.emplace_back(dist(query, k), k);
  return select_nearest(std::move(cand), count, gap);
}

inline Matrix distances_from_query(const Matrix &z, int query) {
  Matrix dist = Matrix::Zero(z.rows(), z.rows());
  bool degenerate = false;
  for (Eigen::Index j = 0; j < z.rows(); ++j)
    if (j != query) {
      const double d = cosine_distance_raw(z.row(query), z.row(j), degenerate);
      dist(query, j) = d;
      dist(j, query) = d;
    }
  if (degenerate) warn("mining: zero-norm feature vector, using distance 1");
  return dist;
}

}  // namespace detail

/// Up to C nearest samples sharing the query's label, from every domain (own included).
inline std::vector<int> mine_hard_positives(int query, const Matrix &z, const std::vector<int> &labels,
                                            const std::vector<int> &domains, int count) {
  detail::check_batch(z, labels, domains);
  if (query < 0 || query >= z.rows()) throw Error("mining: query index out of range");
  return detail::mine_positives_from(detail::distances_from_query(z, query), query, labels, count);
}

/// Up to C nearest samples from the query's domain carrying a different label.
inline std::vector<int> mine_hard_negatives(int query, const Matrix &z, const std::vector<int> &labels,
                                            const std::vector<int> &domains, int count) {
  detail::check_batch(z, labels, domains);
  if (query < 0 || query >= z.rows()) throw Error("mining: query index out of range");
  return detail::mine_negatives_from(detail::distances_from_query(z, query), query, labels,
                                     domains, count);
}

inline MiningResult mine_hard_examples(int query, const Matrix &z, const std::vector<int> &labels,
                                       const std::vector<int> &domains, int count) {
  MiningResult r;
  r.query = query;
  r.positives = mine_hard_positives(query, z, labels, domains, count);
  r.negatives = mine_hard_negatives(query, z, labels, domains, count);
  r.valid = !r.positives.empty() && !r.negatives.empty();
  return r;
}

// ---------------------------------------------------------------------------

/// w[y][d] = normalized class weight x normalized domain weight, for every
/// (class, domain) cell present in the source data.
class WeightTable {
 public:
  void set(int label, int domain, double w) { table_[{label, domain}] = w; }

  double weight(int label, int domain) const {
    const auto it = table_.find({label, domain});
    if (it == table_.end())
      throw Error("weight table: no entry for class " + std::to_string(label) + " in domain " +
                  std::to_string(domain));
    return it->second;
  }
  bool contains(int label, int domain) const { return table_.count({label, domain}) != 0; }
  const std::map<std::pair<int, int>, double> &entries() const { return table_; }

  void write_csv(std::ostream &out) const {
    out << "class,domain,weight\n";
    for (const auto &[key, w] : table_) out << key.first << ',' << key.second << ',' << format_exact(w) << '\n';
  }

 private:
  std::map<std::pair<int, int>, double> table_;
};

inline WeightTable weighted_ce_weights(const Dataset &source) {
  const auto cells = source.cell_counts();
  std::map<int, double> domain_total;
  for (const auto &[key, n] : cells) domain_total[key.second] += static_cast<double>(n);
  for (int d : source.domain_ids())
    if (domain_total[d] == 0.0) throw Error("weighted_ce_weights: domain " + std::to_string(d) + " is empty");
  const double total = static_cast<double>(source.size());

  std::map<int, double> theta;
  double theta_max = 0.0;
  for (const auto &[d, n_d] : domain_total) {
    theta[d] = total / n_d;
    theta_max = std::max(theta_max, theta[d]);
  }
  std::map<int, double> omega_max;
  for (const auto &[key, n] : cells)
    omega_max[key.second] = std::max(omega_max[key.second], domain_total[key.second] / static_cast<double>(n));

  WeightTable table;
  for (const auto &[key, n] : cells) {
    const auto [y, d] = key;
    const double omega_hat = domain_total[d] / static_cast<double>(n) / omega_max[d];
    table.set(y, d, omega_hat * (theta[d] / theta_max));
  }
  return table;
}

// ---------------------------------------------------------------------------

struct LossConfig {
  double margin = 0.1;  // epsilon
  int hard_count = 5;   // C
  double alpha = 10.0;
  double gamma = 2.0;
  std::optional<WeightTable> weights;  // nullopt: uniform

  void validate() const {
    if (!(margin >= 0.0)) throw Error("loss config: margin must be >= 0");
    if (hard_count < 1) throw Error("loss config: hard_count must be >= 1");
    if (!(alpha >= 0.0)) throw Error("loss config: alpha must be >= 0");
    if (!(gamma >= 0.0)) throw Error("loss config: gamma must be >= 0");
  }
};

/// A loss value with its gradients. An empty gradient matrix stands for zero.
struct LossOutput {
  double value = 0.0;
  Matrix d_logits;
  Matrix d_features;
};

struct DomAlignQuery {
  MiningResult mined;
  double d_pos = 0.0;
  double d_neg = 0.0;
  double hinge_arg = 0.0;  // margin + d_pos - d_neg
  double pos_gap = std::numeric_limits<double>::infinity();
  double neg_gap = std::numeric_limits<double>::infinity();
};

/// Per-query mining and mean distances, exposed so callers can inspect hinge margins
/// and selection gaps (e.g. to keep finite-difference probes away from kinks).
inline std::vector<DomAlignQuery> domalign_queries(const Matrix &z, const std::vector<int> &labels,
                                                   const std::vector<int> &domains,
                                                   const LossConfig &cfg, const Matrix &dist) {
  const int m = static_cast<int>(z.rows());
  std::vector<DomAlignQuery> out(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    DomAlignQuery &q = out[static_cast<std::size_t>(i)];
    q.mined.query = i;
    q.mined.positives = detail::mine_positives_from(dist, i, labels, cfg.hard_count, &q.pos_gap);
    q.mined.negatives = detail::mine_negatives_from(dist, i, labels, domains, cfg.hard_count, &q.neg_gap);
    q.mined.valid = !q.mined.positives.empty() && !q.mined.negatives.empty();
    if (!q.mined.valid) continue;
    for (int j : q.mined.positives) q.d_pos += dist(i, j);
    q.d_pos /= static_cast<double>(q.mined.positives.size());
    for (int k : q.mined.negatives) q.d_neg += dist(i, k);
    q.d_neg /= static_cast<double>(q.mined.negatives.size());
    q.hinge_arg = cfg.margin + q.d_pos - q.d_neg;
  }
  return out;
}

inline std::vector<DomAlignQuery> domalign_queries(const Matrix &z, const std::vector<int> &labels,
                                                   const std::vector<int> &domains,
                                                   const LossConfig &cfg) {
  detail::check_batch(z, labels, domains);
  return domalign_queries(z, labels, domains, cfg, cosine_distance_matrix(z));
}

/// Mined sets are constants for differentiation; the hinge subgradient at 0 is 0.
inline LossOutput domalign_loss(const Matrix &z, const std::vector<int> &labels,
                                const std::vector<int> &domains, const LossConfig &cfg) {
  detail::check_batch(z, labels, domains);
  if (z.rows() < 2) throw Error("domalign_loss: need at least two samples");
  bool degenerate = false;
  const Matrix dist = cosine_distance_matrix(z, &degenerate);
  if (degenerate) warn("domalign_loss: zero-norm feature vector, using distance 1");
  const auto queries = domalign_queries(z, labels, domains, cfg, dist);

  LossOutput out;
  out.d_features = Matrix::Zero(z.rows(), z.cols());
  std::size_t valid = 0;
  for (const auto &q : queries) valid += q.mined.valid ? 1 : 0;
  if (valid == 0) return out;
  const double scale = 1.0 / static_cast<double>(valid);

  const Vector norms = z.rowwise().norm();
  // Accumulates coeff * d(1 - cos(z_a, z_b)) into both rows.
  auto add_pair = [&](int a, int b, double coeff) {
    const double na = norms[a], nb = norms[b];
    if (na == 0.0 || nb == 0.0) return;
    const double cosine = z.row(a).dot(z.row(b)) / (na * nb);
    out.d_features.row(a) -= coeff / na * (z.row(b) / nb - cosine * z.row(a) / na);
    out.d_features.row(b) -= coeff / nb * (z.row(a) / na - cosine * z.row(b) / nb);
  };

  for (const auto &q : queries) {
    if (!q.mined.valid || q.hinge_arg <= 0.0) continue;
    out.value += q.hinge_arg;
    const double wp = scale / static_cast<double>(q.mined.positives.size());
    const double wn = scale / static_cast<double>(q.mined.negatives.size());
    for (int j : q.mined.positives) add_pair(q.mined.query, j, wp);
    for (int k : q.mined.negatives) add_pair(q.mined.query, k, -wn);
  }
  out.value *= scale;
  return out;
}

/// Mean over the batch of -w_i (1 - p_i)^gamma log p_i, with p_i the softmax probability
/// of the true class and w_i from the weight table (1 when none is configured).
inline LossOutput focal_loss(const Matrix &logits, const std::vector<int> &labels,
                             const std::vector<int> &domains, const LossConfig &cfg) {
  const Eigen::Index m = logits.rows();
  const Eigen::Index num_classes = logits.cols();
  if (num_classes < 2) throw Error("focal_loss: need at least two classes");
  if (static_cast<std::size_t>(m) != labels.size() || labels.size() != domains.size())
    throw Error("focal_loss: logits, labels and domains disagree on batch size");
  if (m == 0) throw Error("focal_loss: empty batch");
  constexpr double kProbFloor = 1e-12;
  const double log_floor = std::log(kProbFloor);

  LossOutput out;
  out.d_logits = Matrix::Zero(m, num_classes);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= num_classes)
      throw Error("focal_loss: label " + std::to_string(y) + " outside [0, " +
                  std::to_string(num_classes) + ")");
    const double w = cfg.weights ? cfg.weights->weight(y, domains[static_cast<std::size_t>(i)]) : 1.0;
    const double shift = logits.row(i).maxCoeff();
    const RowVector e = (logits.row(i).array() - shift).exp().matrix();
    const double log_sum = std::log(e.sum());
    const RowVector p = e / e.sum();
    const double logp = std::max(logits(i, y) - shift - log_sum, log_floor);
    const double pt = std::exp(logp);
    const double one_minus = -std::expm1(logp);

    double modulator = 1.0, factor = -1.0;  // factor: dl/dz_c = w * factor * (delta_cy - p_c)
    if (cfg.gamma != 0.0) {
      modulator = std::pow(one_minus, cfg.gamma);
      const double slope = one_minus > 0.0 ? cfg.gamma * std::pow(one_minus, cfg.gamma - 1.0) * pt * logp : 0.0;
      factor = slope - modulator;
    }
    out.value += -w * modulator * logp;
    RowVector g = -p;
    g[y] += 1.0;
    out.d_logits.row(i) = (w * factor * inv_m) * g;
  }
  out.value *= inv_m;
  return out;
}

struct CombinedLoss {
  LossOutput total;
  double focal = 0.0;     // classification term
  double domalign = 0.0;  // unweighted alignment term; total.value = focal + alpha * domalign
};

inline CombinedLoss combined_loss(const Matrix &features, const Matrix &logits,
                                  const std::vector<int> &labels, const std::vector<int> &domains,
                                  const LossConfig &cfg) {
  cfg.validate();
  LossOutput cls = focal_loss(logits, labels, domains, cfg);
  CombinedLoss out;
  out.focal = cls.value;
  out.total.d_logits = std::move(cls.d_logits);
  out.total.d_features = Matrix::Zero(features.rows(), features.cols());
  if (cfg.alpha > 0.0) {
    LossOutput align = domalign_loss(features, labels, domains, cfg);
    out.domalign = align.value;
    out.total.d_features = cfg.alpha * align.d_features;
  }
  out.total.value = out.focal + cfg.alpha * out.domalign;
  return out;
}

inline CombinedLoss combined_loss(const ForwardTrace &trace, const std::vector<int> &labels,
                                  const std::vector<int> &domains, const LossConfig &cfg) {
  return combined_loss(trace.features(), trace.logits(), labels, domains, cfg);
}

}  // namespace dgadr
