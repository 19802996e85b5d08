#pragma once

// Training over source domains and the leave-one-domain-out experiment driver.
//
// Each step draws a domain-stratified batch x', optionally a second jittered copy x'',
// and the augmented view phi(x'). All active streams are stacked
// into one effective batch so that the classification and alignment losses see them
// together (alignment may mine across streams).

#include "dgadr/analysis.hpp"
#include "dgadr/data.hpp"
#include "dgadr/losses.hpp"
#include "dgadr/metrics.hpp"
#include "dgadr/model.hpp"

#include <array>
#include <atomic>
#include <exception>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <thread>

namespace dgadr {

enum class WeightsMode { Uniform, WeightedCE };

inline std::string to_string(WeightsMode m) { return m == WeightsMode::Uniform ? "uniform" : "weighted_ce"; }

struct TrainConfig {
  std::vector<int> hidden_dims{64, 32};
  Activation activation = Activation::Tanh;
  int feature_layer = 0;  // 0: penultimate layer
  LossConfig loss;
  WeightsMode weights = WeightsMode::Uniform;
  int batch_size = 128;
  int epochs = 200;
  double lr = 0.001;
  double jitter = 0.1;   // phi stream; 0 disables it
  double jitter2 = 0.0;  // second raw stream x''; 0 disables it
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string init_params;  // optional parameter file used as the starting point
  int eval_every = 0;       // 0: record only the final epoch
  double kl_shrinkage = 1e-3;

  void validate() const {
    loss.validate();
    for (int h : hidden_dims)
      if (h < 1) throw Error("train config: hidden dimensions must be >= 1");
    if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
    if (epochs < 1) throw Error("train config: epochs must be >= 1");
    if (!(lr > 0.0)) throw Error("train config: lr must be > 0");
    if (!(jitter >= 0.0) || !(jitter2 >= 0.0)) throw Error("train config: jitter must be >= 0");
    if (seeds.empty()) throw Error("train config: need at least one seed");
    if (eval_every < 0) throw Error("train config: eval_every must be >= 0");
  }

  std::vector<int> layer_dims(int input_dim, int num_classes) const {
    std::vector<int> dims{input_dim};
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(num_classes);
    return dims;
  }
};

struct HistoryRecord {
  int epoch = 0;
  double total = 0.0;
  double focal = 0.0;
  double alpha_domalign = 0.0;
  std::optional<MetricsReport> target_metrics;
  double dispersion = std::numeric_limits<double>::quiet_NaN();
};

struct RunHistory {
  std::vector<HistoryRecord> records;

  void write_csv(std::ostream &out, int digits = 9) const {
    out << "epoch,total,focal,alpha_domalign,accuracy,macro_f1,ovr_auc,dispersion\n";
    for (const auto &r : records) {
      out << r.epoch << ',' << format_fixed(r.total, digits) << ',' << format_fixed(r.focal, digits) << ','
          << format_fixed(r.alpha_domalign, digits) << ',';
      if (r.target_metrics)
        out << r.target_metrics->csv_row(digits) << ',';
      else
        out << ",,,";
      if (!std::isnan(r.dispersion)) out << format_fixed(r.dispersion, digits);
      out << '\n';
    }
  }
};

/// Raised when a step produces a non-finite loss; carries the offending batch.
class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(const std::string &what, Minibatch batch, int epoch, int step)
      : Error(what), batch_(std::move(batch)), epoch_(epoch), step_(step) {}
  const Minibatch &batch() const { return batch_; }
  int epoch() const { return epoch_; }
  int step() const { return step_; }

  void write_batch_csv(std::ostream &out) const {
    for (Eigen::Index j = 0; j < batch_.features.cols(); ++j) out << 'f' << j << ',';
    out << "label,domain\n";
    for (Eigen::Index i = 0; i < batch_.size(); ++i) {
      for (Eigen::Index j = 0; j < batch_.features.cols(); ++j) out << format_exact(batch_.features(i, j)) << ',';
      out << batch_.labels[static_cast<std::size_t>(i)] << ',' << batch_.domains[static_cast<std::size_t>(i)] << '\n';
    }
  }

 private:
  Minibatch batch_;
  int epoch_;
  int step_;
};

/// Deterministic per-run seeds, derived from the run seed.
struct RunSeeds {
  std::uint64_t init, sampler, augment;

  explicit RunSeeds(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x64u, 0x67u};
    std::array<std::uint32_t, 6> words{};
    seq.generate(words.begin(), words.end());
    init = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    sampler = (static_cast<std::uint64_t>(words[2]) << 32) | words[3];
    augment = (static_cast<std::uint64_t>(words[4]) << 32) | words[5];
  }
};

/// Forward on raw features only; argmax ties go to the lowest class id. Consumes no randomness.
inline MetricsReport evaluate(const Model &model, const Dataset &target) {
  if (target.feature_dim() != model.input_dim()) throw Error("evaluate: feature dimension mismatch");
  if (target.num_classes() != model.num_classes()) throw Error("evaluate: class count mismatch");
  const ForwardTrace t = forward(model, target.feature_matrix());
  return make_report(softmax_rows(t.logits()), target.labels(), target.num_classes());
}

/// Cross-domain dispersion of the model's features over every sample of `data`.
inline double feature_dispersion(const Model &model, const Dataset &data) {
  const ForwardTrace t = forward(model, data.feature_matrix());
  return cross_domain_dispersion(t.features(), data.labels(), data.domains());
}

inline Model initial_model(const Dataset &source, const TrainConfig &cfg, std::uint64_t seed) {
  const auto dims = cfg.layer_dims(source.feature_dim(), source.num_classes());
  if (cfg.init_params.empty()) return init_model(dims, cfg.activation, seed, cfg.feature_layer);
  Model m = load_params(cfg.init_params);
  if (m.input_dim() != source.feature_dim() || m.num_classes() != source.num_classes())
    throw Error("initial parameters " + cfg.init_params + " do not match the dataset dimensions");
  return m;
}

/// The loss configuration actually used for a source set (weight table resolved).
inline LossConfig resolve_loss(const Dataset &source, const TrainConfig &cfg) {
  LossConfig loss = cfg.loss;
  if (cfg.weights == WeightsMode::WeightedCE) loss.weights = weighted_ce_weights(source);
  return loss;
}

/// Builds the stacked effective batch for one step: x', [x''], [phi(x')].
inline Minibatch build_streams(const Minibatch &raw, const TrainConfig &cfg, Rng &rng) {
  std::vector<Minibatch> streams;
  if (cfg.jitter2 > 0.0) streams.push_back(augment_jitter(raw, cfg.jitter2, rng));
  if (cfg.jitter > 0.0) streams.push_back(augment_jitter(raw, cfg.jitter, rng));
  if (streams.empty()) return raw;
  std::vector<const Minibatch *> parts{&raw};
  for (const auto &s : streams) parts.push_back(&s);
  return Minibatch::concat(parts);
}

struct TrainResult {
  Model model;
  RunHistory history;
};

/// Fixed-epoch SGD over domain-stratified batches. An epoch is ceil(|source| / M) steps.
/// When `monitor` is given, evaluation snapshots report its metrics and the feature
/// dispersion over source and monitor samples together.
inline TrainResult train_one(const Dataset &source, const TrainConfig &cfg, std::uint64_t seed,
                             const Dataset *monitor = nullptr) {
  cfg.validate();
  if (source.num_domains() < 2)
    throw Error("train: need at least two source domains, got " + std::to_string(source.num_domains()));
  const RunSeeds seeds(seed);
  TrainResult result{initial_model(source, cfg, seeds.init), {}};
  Model &model = result.model;
  const LossConfig loss_cfg = resolve_loss(source, cfg);
  SamplerState sampler(source, seeds.sampler);
  Rng augment_rng(seeds.augment);
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const int steps = static_cast<int>((source.size() + batch - 1) / batch);

  std::optional<Dataset> combined;
  if (monitor) {
    std::vector<Sample> all = source.samples();
    all.insert(all.end(), monitor->samples().begin(), monitor->samples().end());
    std::vector<int> ids = source.domain_ids();
    ids.insert(ids.end(), monitor->domain_ids().begin(), monitor->domain_ids().end());
    combined.emplace(std::move(all), source.num_classes(), std::move(ids), source.feature_dim());
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double total = 0.0, focal = 0.0, align = 0.0;
    for (int step = 0; step < steps; ++step) {
      const Minibatch raw = sample_minibatch(source, batch, sampler);
      const Minibatch effective = build_streams(raw, cfg, augment_rng);
      const ForwardTrace trace = forward(model, effective);
      const CombinedLoss loss = combined_loss(trace, effective.labels, effective.domains, loss_cfg);
      if (!std::isfinite(loss.total.value))
        throw NonFiniteLoss("train: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                std::to_string(step),
                            effective, epoch, step);
      const ParamGrads grads = backward(model, trace, loss.total.d_logits, loss.total.d_features);
      model = sgd_step(std::move(model), grads, cfg.lr);
      total += loss.total.value;
      focal += loss.focal;
      align += loss_cfg.alpha * loss.domalign;
    }
    const bool snapshot = epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
    if (!snapshot) continue;
    HistoryRecord rec;
    rec.epoch = epoch;
    rec.total = total / steps;
    rec.focal = focal / steps;
    rec.alpha_domalign = align / steps;
    if (monitor) {
      rec.target_metrics = evaluate(model, *monitor);
      rec.dispersion = feature_dispersion(model, *combined);
    }
    result.history.records.push_back(std::move(rec));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Leave-one-domain-out

struct RunRecord {
  int target_domain = 0;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  double dispersion = 0.0;  // over all domains, held-out one included
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double> &v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

struct AggregateRow {
  std::string target;  // domain id, or "Average"
  MeanStd accuracy, ovr_auc, macro_f1, dispersion;
};

struct LotoResult {
  std::vector<RunRecord> runs;  // ordered by (target, seed) as configured
  std::vector<AggregateRow> aggregate;

  void write_results_csv(std::ostream &out, int digits = 6) const {
    out << "target_domain,seed," << MetricsReport::csv_header() << ",dispersion\n";
    for (const auto &r : runs)
      out << r.target_domain << ',' << r.seed << ',' << r.metrics.csv_row(digits) << ','
          << format_fixed(r.dispersion, digits) << '\n';
  }

  /// One row per held-out domain plus the cross-domain Average row.
  void write_aggregate_csv(std::ostream &out, int digits = 6) const {
    out << "target,acc_mean,acc_std,auc_mean,auc_std,f1_mean,f1_std,dispersion_mean,dispersion_std\n";
    for (const auto &a : aggregate) {
      out << a.target;
      for (const MeanStd *m : {&a.accuracy, &a.ovr_auc, &a.macro_f1, &a.dispersion})
        out << ',' << format_fixed(m->mean, digits) << ',' << format_fixed(m->std, digits);
      out << '\n';
    }
  }
};

/// Per-target mean and sample std over seeds. The Average row averages each seed's
/// results over targets, then takes mean and std over seeds.
inline std::vector<AggregateRow> aggregate_runs(const std::vector<RunRecord> &runs) {
  std::vector<int> targets;
  std::vector<std::uint64_t> seeds;
  for (const auto &r : runs) {
    if (std::find(targets.begin(), targets.end(), r.target_domain) == targets.end()) targets.push_back(r.target_domain);
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
  }
  using Field = double (*)(const RunRecord &);
  const Field fields[] = {[](const RunRecord &r) { return r.metrics.accuracy; },
                          [](const RunRecord &r) { return r.metrics.ovr_auc; },
                          [](const RunRecord &r) { return r.metrics.macro_f1; },
                          [](const RunRecord &r) { return r.dispersion; }};
  auto fill = [&](AggregateRow &row, auto &&select) {
    MeanStd *slots[] = {&row.accuracy, &row.ovr_auc, &row.macro_f1, &row.dispersion};
    for (int f = 0; f < 4; ++f) *slots[f] = mean_std(select(fields[f]));
  };

  std::vector<AggregateRow> out;
  for (int t : targets) {
    AggregateRow row;
    row.target = std::to_string(t);
    fill(row, [&](Field f) {
      std::vector<double> v;
      for (const auto &r : runs)
        if (r.target_domain == t) v.push_back(f(r));
      return v;
    });
    out.push_back(row);
  }
  AggregateRow avg;
  avg.target = "Average";
  fill(avg, [&](Field f) {
    std::vector<double> per_seed;
    for (auto s : seeds) {
      double sum = 0.0;
      int n = 0;
      for (const auto &r : runs)
        if (r.seed == s) {
          sum += f(r);
          ++n;
        }
      per_seed.push_back(sum / n);
    }
    return per_seed;
  });
  out.push_back(avg);
  return out;
}

/// Runs every (target domain, seed) pair, optionally on `jobs` worker threads. Results are
/// stored by task index, so the output does not depend on scheduling.
inline LotoResult run_loto(const Dataset &dataset, const TrainConfig &cfg, int jobs = 1,
                           const std::vector<int> &targets_override = {}) {
  cfg.validate();
  if (dataset.num_domains() < 3)
    throw Error("loto: need at least three domains, got " + std::to_string(dataset.num_domains()));
  const std::vector<int> targets = targets_override.empty() ? dataset.domain_ids() : targets_override;
  struct Task {
    int target;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (int t : targets)
    for (auto s : cfg.seeds) tasks.push_back({t, s});

  LotoResult result;
  result.runs.resize(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        const auto split = split_leave_one_out(dataset, tasks[i].target);
        const TrainResult trained = train_one(split.source, cfg, tasks[i].seed);
        RunRecord &rec = result.runs[i];
        rec.target_domain = tasks[i].target;
        rec.seed = tasks[i].seed;
        rec.metrics = evaluate(trained.model, split.target);
        rec.dispersion = feature_dispersion(trained.model, dataset);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto &th : pool) th.join();
  }
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
  result.aggregate = aggregate_runs(result.runs);
  return result;
}

}  // namespace dgadr
