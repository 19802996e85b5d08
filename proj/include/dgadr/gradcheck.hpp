#pragma once

// Finite-difference verification of the analytic gradients for every objective,
// over randomly drawn (model, batch, loss config) triples.

#include "dgadr/losses.hpp"
#include "dgadr/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace dgadr {

enum class LossKind { Focal, WeightedCE, DomAlign, Combined };

inline const char *to_string(LossKind k) {
  switch (k) {
    case LossKind::Focal: return "focal";
    case LossKind::WeightedCE: return "weighted_ce";
    case LossKind::DomAlign: return "domalign";
    case LossKind::Combined: return "combined";
  }
  return "?";
}

/// Elementwise max of |a - b| / max(|a|, |b|, 1e-8).
inline double max_relative_error(const ParamGrads &a, const ParamGrads &b) {
  const auto fa = a.flatten();
  const auto fb = b.flatten();
  if (fa.size() != fb.size()) throw Error("max_relative_error: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    const double denom = std::max({std::abs(fa[i]), std::abs(fb[i]), 1e-8});
    worst = std::max(worst, std::abs(fa[i] - fb[i]) / denom);
  }
  return worst;
}

/// A random problem instance for one loss kind.
struct GradCheckProblem {
  Model model;
  Minibatch batch;
  LossConfig cfg;
  LossKind kind = LossKind::Combined;
};

/// Loss value of `kind` for the given parameters (DomAlign: the alignment term alone).
inline double objective_value(const Model &model, const Minibatch &batch, const LossConfig &cfg, LossKind kind) {
  const ForwardTrace t = forward(model, batch);
  if (kind == LossKind::DomAlign) return domalign_loss(t.features(), batch.labels, batch.domains, cfg).value;
  if (kind == LossKind::Combined) return combined_loss(t, batch.labels, batch.domains, cfg).total.value;
  return focal_loss(t.logits(), batch.labels, batch.domains, cfg).value;
}

inline ParamGrads objective_gradient(const Model &model, const Minibatch &batch, const LossConfig &cfg,
                                     LossKind kind) {
  const ForwardTrace t = forward(model, batch);
  const Matrix zero_logits = Matrix::Zero(t.logits().rows(), t.logits().cols());
  const Matrix zero_features = Matrix::Zero(t.features().rows(), t.features().cols());
  switch (kind) {
    case LossKind::DomAlign: {
      const LossOutput l = domalign_loss(t.features(), batch.labels, batch.domains, cfg);
      return backward(model, t, zero_logits, l.d_features);
    }
    case LossKind::Combined: {
      const CombinedLoss l = combined_loss(t, batch.labels, batch.domains, cfg);
      return backward(model, t, l.total.d_logits, l.total.d_features);
    }
    default: {
      const LossOutput l = focal_loss(t.logits(), batch.labels, batch.domains, cfg);
      return backward(model, t, l.d_logits, zero_features);
    }
  }
}

/// True when every valid query sits at least `clearance` away from its hinge kink and
/// from a change in its mined sets, and (for alignment losses) at least one hinge is active.
inline bool away_from_kinks(const GradCheckProblem &p, double clearance) {
  if (p.kind == LossKind::Focal || p.kind == LossKind::WeightedCE) return true;
  const ForwardTrace t = forward(p.model, p.batch);
  const auto queries = domalign_queries(t.features(), p.batch.labels, p.batch.domains, p.cfg);
  bool active = false;
  for (const auto &q : queries) {
    if (q.pos_gap < clearance || q.neg_gap < clearance) return false;
    if (!q.mined.valid) continue;
    if (std::abs(q.hinge_arg) < clearance) return false;
    active = active || q.hinge_arg > 0.0;
  }
  return active;
}

inline GradCheckProblem random_problem(LossKind kind, Rng &rng) {
  std::uniform_int_distribution<int> in_dim(3, 6), hidden(4, 8), feat(3, 6), classes(2, 4), doms(2, 3),
      batch(8, 16);
  std::normal_distribution<double> gauss(0.0, 1.0);
  GradCheckProblem p;
  p.kind = kind;
  const int d = in_dim(rng), num_classes = classes(rng), num_domains = doms(rng), m = batch(rng);
  p.model = init_model({d, hidden(rng), feat(rng), num_classes}, Activation::Tanh, rng());
  // Nonzero biases so the check also covers the bias paths.
  for (auto &layer : p.model.layers)
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = 0.3 * gauss(rng);
  p.batch.features.resize(m, d);
  for (Eigen::Index i = 0; i < p.batch.features.size(); ++i) p.batch.features.data()[i] = gauss(rng);
  std::uniform_int_distribution<int> pick_label(0, num_classes - 1);
  for (int i = 0; i < m; ++i) {
    p.batch.labels.push_back(i < num_classes ? i : pick_label(rng));
    p.batch.domains.push_back(i % num_domains);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  p.cfg.margin = 0.1;
  p.cfg.hard_count = 1 + static_cast<int>(unit(rng) * 5.0);
  p.cfg.alpha = kind == LossKind::Combined ? 10.0 : 1.0;
  p.cfg.gamma = kind == LossKind::WeightedCE ? 0.0 : (kind == LossKind::Focal ? 0.5 + 2.5 * unit(rng) : 2.0);
  if (kind == LossKind::WeightedCE || (kind == LossKind::Combined && unit(rng) < 0.5)) {
    std::vector<Sample> samples;
    for (int i = 0; i < m; ++i) samples.push_back({p.batch.features.row(i).transpose(), p.batch.labels[i], p.batch.domains[i]});
    std::vector<int> ids(static_cast<std::size_t>(num_domains));
    for (int k = 0; k < num_domains; ++k) ids[static_cast<std::size_t>(k)] = k;
    p.cfg.weights = weighted_ce_weights(Dataset(samples, num_classes, ids, d));
  }
  return p;
}

struct GradCheckSummary {
  LossKind kind = LossKind::Combined;
  int cases = 0;
  int resampled = 0;
  double max_rel_err = 0.0;
};

/// Runs `cases` random instances per loss kind with central differences of step `fd_eps`.
/// Instances within `clearance` of a hinge kink or a mining swap are redrawn.
inline std::array<GradCheckSummary, 4> run_gradcheck(int cases = 20, std::uint64_t seed = 0,
                                                     double fd_eps = 1e-5, double clearance = 1e-3) {
  std::array<GradCheckSummary, 4> out;
  const LossKind kinds[] = {LossKind::Focal, LossKind::WeightedCE, LossKind::DomAlign, LossKind::Combined};
  for (int k = 0; k < 4; ++k) {
    GradCheckSummary &s = out[static_cast<std::size_t>(k)];
    s.kind = kinds[k];
    Rng rng(seed * 7919 + static_cast<std::uint64_t>(k));
    while (s.cases < cases) {
      GradCheckProblem p = random_problem(s.kind, rng);
      if (!away_from_kinks(p, clearance)) {
        ++s.resampled;
        if (s.resampled > 100 * cases) throw Error("gradcheck: could not draw problems away from kinks");
        continue;
      }
      const ParamGrads analytic = objective_gradient(p.model, p.batch, p.cfg, p.kind);
      const ParamGrads numeric = finite_diff_grad(
          p.model, [&](const Model &m) { return objective_value(m, p.batch, p.cfg, p.kind); }, fd_eps);
      s.max_rel_err = std::max(s.max_rel_err, max_relative_error(analytic, numeric));
      ++s.cases;
    }
  }
  return out;
}

}  // namespace dgadr
