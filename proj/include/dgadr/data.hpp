#pragma once

// Multi-domain datasets: synthetic generation, CSV ingestion, leave-one-domain-out
// splitting and domain-stratified mini-batch sampling.

#include "dgadr/common.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string_view>

namespace dgadr {

struct Sample {
  Vector features;
  int label = 0;
  int domain = 0;

  friend bool operator==(const Sample &a, const Sample &b) {
    return a.label == b.label && a.domain == b.domain && a.features.size() == b.features.size() &&
           a.features == b.features;
  }
};

/// Immutable collection of samples. Domain ids are arbitrary non-negative integers;
/// the dataset declares which ones it holds (after a leave-one-out split the source
/// keeps the original ids, e.g. {0, 2, 3}).
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<Sample> samples, int num_classes, std::vector<int> domain_ids,
          int feature_dim)
      : samples_(std::move(samples)),
        num_classes_(num_classes),
        domain_ids_(std::move(domain_ids)),
        feature_dim_(feature_dim) {
    std::sort(domain_ids_.begin(), domain_ids_.end());
    domain_ids_.erase(std::unique(domain_ids_.begin(), domain_ids_.end()), domain_ids_.end());
    validate();
  }

  const std::vector<Sample> &samples() const { return samples_; }
  const Sample &operator[](std::size_t i) const { return samples_[i]; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  int num_classes() const { return num_classes_; }
  /// Number of distinct domains held (K for a source split, K_total for a full set).
  int num_domains() const { return static_cast<int>(domain_ids_.size()); }
  const std::vector<int> &domain_ids() const { return domain_ids_; }
  int feature_dim() const { return feature_dim_; }

  bool has_domain(int d) const {
    return std::binary_search(domain_ids_.begin(), domain_ids_.end(), d);
  }

  std::vector<std::size_t> indices_of_domain(int d) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples_.size(); ++i)
      if (samples_[i].domain == d) out.push_back(i);
    return out;
  }

  /// Samples restricted to one domain, keeping row order.
  Dataset domain_subset(int d) const {
    std::vector<Sample> kept;
    for (const auto &s : samples_)
      if (s.domain == d) kept.push_back(s);
    return Dataset(std::move(kept), num_classes_, {d}, feature_dim_);
  }

  Matrix feature_matrix() const {
    Matrix x(static_cast<Eigen::Index>(samples_.size()), feature_dim_);
    for (std::size_t i = 0; i < samples_.size(); ++i)
      x.row(static_cast<Eigen::Index>(i)) = samples_[i].features.transpose();
    return x;
  }
  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(samples_.size());
    for (const auto &s : samples_) out.push_back(s.label);
    return out;
  }
  std::vector<int> domains() const {
    std::vector<int> out;
    out.reserve(samples_.size());
    for (const auto &s : samples_) out.push_back(s.domain);
    return out;
  }

  /// n_{y,d}: sample count per (class, domain id).
  std::map<std::pair<int, int>, std::size_t> cell_counts() const {
    std::map<std::pair<int, int>, std::size_t> counts;
    for (const auto &s : samples_) ++counts[{s.label, s.domain}];
    return counts;
  }

  friend bool operator==(const Dataset &a, const Dataset &b) {
    return a.num_classes_ == b.num_classes_ && a.feature_dim_ == b.feature_dim_ &&
           a.domain_ids_ == b.domain_ids_ && a.samples_ == b.samples_;
  }

 private:
  void validate() const {
    if (num_classes_ < 1) throw Error("dataset: num_classes must be >= 1");
    if (feature_dim_ < 1) throw Error("dataset: feature_dim must be >= 1");
    for (int d : domain_ids_)
      if (d < 0) throw Error("dataset: negative domain id " + std::to_string(d));
    std::set<int> seen;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const Sample &s = samples_[i];
      if (s.features.size() != feature_dim_)
        throw Error("dataset: sample " + std::to_string(i) + " has " +
                    std::to_string(s.features.size()) + " features, expected " +
                    std::to_string(feature_dim_));
      if (!s.features.allFinite())
        throw Error("dataset: sample " + std::to_string(i) + " has non-finite features");
      if (s.label < 0 || s.label >= num_classes_)
        throw Error("dataset: sample " + std::to_string(i) + " label " + std::to_string(s.label) +
                    " outside [0, " + std::to_string(num_classes_) + ")");
      if (!has_domain(s.domain))
        throw Error("dataset: sample " + std::to_string(i) + " has undeclared domain " +
                    std::to_string(s.domain));
      seen.insert(s.domain);
    }
    for (int d : domain_ids_)
      if (!seen.count(d)) throw Error("dataset: declared domain " + std::to_string(d) + " is empty");
  }

  std::vector<Sample> samples_;
  int num_classes_ = 0;
  std::vector<int> domain_ids_;
  int feature_dim_ = 0;
};

struct Minibatch {
  Matrix features;  // M x feature_dim
  std::vector<int> labels;
  std::vector<int> domains;

  Eigen::Index size() const { return features.rows(); }

  void check() const {
    if (static_cast<std::size_t>(features.rows()) != labels.size() ||
        labels.size() != domains.size())
      throw Error("minibatch: features/labels/domains disagree on batch size");
  }

  static Minibatch from_dataset(const Dataset &ds) {
    return Minibatch{ds.feature_matrix(), ds.labels(), ds.domains()};
  }

  /// Stacks batches row-wise, replicating labels and domains.
  static Minibatch concat(const std::vector<const Minibatch *> &parts) {
    if (parts.empty()) return {};
    Eigen::Index rows = 0;
    for (const auto *p : parts) rows += p->size();
    Minibatch out;
    out.features.resize(rows, parts.front()->features.cols());
    Eigen::Index r = 0;
    for (const auto *p : parts) {
      out.features.middleRows(r, p->size()) = p->features;
      r += p->size();
      out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
      out.domains.insert(out.domains.end(), p->domains.begin(), p->domains.end());
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Synthetic generation

struct SynthConfig {
  int num_domains = 4;
  int num_classes = 4;
  int feature_dim = 8;
  int samples_per_domain = 400;
  double class_skew = 1.0;          // largest / smallest class size within a domain
  double domain_shift_scale = 1.0;  // magnitude of the per-domain rotation + translation
  int intra_domain_subclusters = 1;
  double noise_std = 1.0;
  std::uint64_t seed = 0;
  double class_separation = 2.0;   // std of the shared class centroids
  double subcluster_spread = 0.5;  // std of sub-cluster offsets around a cell centre

  void validate() const {
    if (num_domains < 1 || num_classes < 1 || samples_per_domain < 1 ||
        intra_domain_subclusters < 1)
      throw Error("synth config: all counts must be >= 1");
    if (feature_dim < 2) throw Error("synth config: feature_dim must be >= 2 for rotations");
    if (samples_per_domain < num_classes)
      throw Error("synth config: samples_per_domain must be >= num_classes");
    if (!(class_skew >= 1.0)) throw Error("synth config: class_skew must be >= 1");
    if (!(domain_shift_scale >= 0.0) || !(noise_std >= 0.0) || !(class_separation >= 0.0) ||
        !(subcluster_spread >= 0.0))
      throw Error("synth config: scales must be >= 0");
  }
};

/// Per-class counts for one domain. Class y gets weight skew^(-y/(L-1)); counts are
/// apportioned by largest remainder with a floor of one sample per class.
inline std::vector<int> class_counts(int total, int num_classes, double skew) {
  std::vector<double> weight(num_classes);
  for (int y = 0; y < num_classes; ++y)
    weight[y] = num_classes == 1 ? 1.0 : std::pow(skew, -static_cast<double>(y) / (num_classes - 1));
  const double wsum = std::accumulate(weight.begin(), weight.end(), 0.0);
  const int spare = total - num_classes;
  std::vector<int> counts(num_classes, 1);
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int y = 0; y < num_classes; ++y) {
    const double exact = spare * weight[y] / wsum;
    const int whole = static_cast<int>(std::floor(exact));
    counts[y] += whole;
    assigned += whole;
    remainders.emplace_back(exact - whole, y);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto &a, const auto &b) { return a.first > b.first; });
  for (int k = 0; k < spare - assigned; ++k) ++counts[remainders[k].second];
  return counts;
}

/// Class centroids are shared across domains. Each domain applies its own rotation
/// (a chain of Givens rotations with angles proportional to the shift scale) followed
/// by a translation; each (class, domain) cell is a mixture of sub-cluster blobs.
inline Dataset generate_synthetic(const SynthConfig &cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int d = cfg.feature_dim;

  std::vector<Vector> centroid(cfg.num_classes, Vector(d));
  for (auto &c : centroid)
    for (int j = 0; j < d; ++j) c[j] = cfg.class_separation * gauss(rng);

  std::vector<int> counts = class_counts(cfg.samples_per_domain, cfg.num_classes, cfg.class_skew);
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(cfg.num_domains) * cfg.samples_per_domain);
  std::vector<int> ids(cfg.num_domains);
  std::iota(ids.begin(), ids.end(), 0);

  for (int dom = 0; dom < cfg.num_domains; ++dom) {
    Eigen::MatrixXd rotation = Eigen::MatrixXd::Identity(d, d);
    for (int p = 0; p + 1 < d; ++p) {
      const double angle = cfg.domain_shift_scale * 0.5 * gauss(rng);
      Eigen::MatrixXd givens = Eigen::MatrixXd::Identity(d, d);
      givens(p, p) = std::cos(angle);
      givens(p, p + 1) = -std::sin(angle);
      givens(p + 1, p) = std::sin(angle);
      givens(p + 1, p + 1) = std::cos(angle);
      rotation = givens * rotation;
    }
    Vector translation(d);
    for (int j = 0; j < d; ++j)
      translation[j] = cfg.domain_shift_scale * cfg.class_separation * gauss(rng);

    for (int y = 0; y < cfg.num_classes; ++y) {
      std::vector<Vector> offsets(cfg.intra_domain_subclusters, Vector::Zero(d));
      if (cfg.intra_domain_subclusters > 1)
        for (auto &o : offsets)
          for (int j = 0; j < d; ++j) o[j] = cfg.subcluster_spread * gauss(rng);
      for (int i = 0; i < counts[y]; ++i) {
        Vector x = centroid[y] + offsets[i % cfg.intra_domain_subclusters];
        for (int j = 0; j < d; ++j) x[j] += cfg.noise_std * gauss(rng);
        samples.push_back(Sample{rotation * x + translation, y, dom});
      }
    }
  }
  return Dataset(std::move(samples), cfg.num_classes, std::move(ids), d);
}

// ---------------------------------------------------------------------------
// CSV ingestion. Schema: header `f0,...,f{d-1},label,domain`, one sample per row.

struct LoadOptions {
  int num_classes = 0;  // 0: infer as max label + 1
  int num_domains = 0;  // 0: no declared bound on domain ids
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double &out) {
  s = trim(s);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline bool parse_int(std::string_view s, long long &out) {
  s = trim(s);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace detail

inline Dataset read_dataset(std::istream &in, const std::string &name = "<stream>",
                            const LoadOptions &opts = {}) {
  std::string line;
  if (!std::getline(in, line)) throw Error(name + ": empty file, missing header");
  const auto header = detail::split_commas(line);
  if (header.size() < 3 || detail::trim(header[header.size() - 2]) != "label" ||
      detail::trim(header.back()) != "domain")
    throw Error(name + ":1: header must be f0,...,f{d-1},label,domain");
  const int dim = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < dim; ++j)
    if (detail::trim(header[j]) != "f" + std::to_string(j))
      throw Error(name + ":1: expected column f" + std::to_string(j));

  std::vector<Sample> samples;
  std::set<int> domains;
  int max_label = -1;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const std::string where = name + ":" + std::to_string(lineno) + ": ";
    const auto fields = detail::split_commas(line);
    if (static_cast<int>(fields.size()) != dim + 2)
      throw Error(where + "expected " + std::to_string(dim + 2) + " fields, got " +
                  std::to_string(fields.size()));
    Sample s;
    s.features.resize(dim);
    for (int j = 0; j < dim; ++j) {
      if (!detail::parse_double(fields[j], s.features[j]))
        throw Error(where + "malformed feature f" + std::to_string(j));
      if (!std::isfinite(s.features[j]))
        throw Error(where + "non-finite feature f" + std::to_string(j));
    }
    long long label = 0, domain = 0;
    if (!detail::parse_int(fields[dim], label) || label < 0)
      throw Error(where + "label must be a non-negative integer");
    if (!detail::parse_int(fields[dim + 1], domain) || domain < 0)
      throw Error(where + "domain must be a non-negative integer");
    if (opts.num_classes > 0 && label >= opts.num_classes)
      throw Error(where + "label " + std::to_string(label) + " outside declared range [0, " +
                  std::to_string(opts.num_classes) + ")");
    if (opts.num_domains > 0 && domain >= opts.num_domains)
      throw Error(where + "domain " + std::to_string(domain) + " outside declared range [0, " +
                  std::to_string(opts.num_domains) + ")");
    s.label = static_cast<int>(label);
    s.domain = static_cast<int>(domain);
    max_label = std::max(max_label, s.label);
    domains.insert(s.domain);
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw Error(name + ": no samples");
  const int num_classes = opts.num_classes > 0 ? opts.num_classes : max_label + 1;
  return Dataset(std::move(samples), num_classes, {domains.begin(), domains.end()}, dim);
}

inline Dataset load_dataset(const std::string &path, const LoadOptions &opts = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file: " + path);
  return read_dataset(in, path, opts);
}

inline void write_dataset(std::ostream &out, const Dataset &ds) {
  for (int j = 0; j < ds.feature_dim(); ++j) out << 'f' << j << ',';
  out << "label,domain\n";
  for (const auto &s : ds.samples()) {
    for (int j = 0; j < ds.feature_dim(); ++j) out << format_exact(s.features[j]) << ',';
    out << s.label << ',' << s.domain << '\n';
  }
}

inline void save_dataset(const Dataset &ds, const std::string &path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write dataset file: " + path);
  write_dataset(out, ds);
}

// ---------------------------------------------------------------------------
// Leave-one-domain-out

struct DomainSplit {
  Dataset source;
  Dataset target;
};

inline DomainSplit split_leave_one_out(const Dataset &ds, int target_domain) {
  if (!ds.has_domain(target_domain))
    throw Error("split: target domain " + std::to_string(target_domain) + " not in dataset");
  if (ds.num_domains() < 2) throw Error("split: need at least two domains");
  std::vector<Sample> src, tgt;
  for (const auto &s : ds.samples()) (s.domain == target_domain ? tgt : src).push_back(s);
  std::vector<int> src_ids;
  for (int d : ds.domain_ids())
    if (d != target_domain) src_ids.push_back(d);
  return {Dataset(std::move(src), ds.num_classes(), std::move(src_ids), ds.feature_dim()),
          Dataset(std::move(tgt), ds.num_classes(), {target_domain}, ds.feature_dim())};
}

// ---------------------------------------------------------------------------
// Domain-stratified sampling

/// Per-domain without-replacement cursors plus the engine that reshuffles them.
/// A domain's order is reshuffled each time its pass is exhausted.
class SamplerState {
 public:
  SamplerState(const Dataset &source, std::uint64_t seed) : rng_(seed) {
    for (int d : source.domain_ids()) {
      pools_.push_back(source.indices_of_domain(d));
      cursors_.push_back(0);
      std::shuffle(pools_.back().begin(), pools_.back().end(), rng_);
    }
  }

  std::size_t num_domains() const { return pools_.size(); }

  std::size_t next_index(std::size_t domain_slot) {
    auto &pool = pools_[domain_slot];
    auto &cursor = cursors_[domain_slot];
    if (cursor == pool.size()) {
      std::shuffle(pool.begin(), pool.end(), rng_);
      cursor = 0;
    }
    return pool[cursor++];
  }

  Rng &rng() { return rng_; }

 private:
  Rng rng_;
  std::vector<std::vector<std::size_t>> pools_;
  std::vector<std::size_t> cursors_;
};

/// Quota per source domain: floor(M/K) each, remainder handed out one at a time in
/// domain-id order.
inline std::vector<std::size_t> domain_quotas(std::size_t batch_size, std::size_t num_domains) {
  std::vector<std::size_t> q(num_domains, batch_size / num_domains);
  for (std::size_t k = 0; k < batch_size % num_domains; ++k) ++q[k];
  return q;
}

inline Minibatch sample_minibatch(const Dataset &source, std::size_t batch_size,
                                  SamplerState &state) {
  const std::size_t k = static_cast<std::size_t>(source.num_domains());
  if (state.num_domains() != k) throw Error("sample_minibatch: sampler built for another dataset");
  if (batch_size < k)
    throw Error("sample_minibatch: batch size " + std::to_string(batch_size) +
                " smaller than the number of source domains " + std::to_string(k));
  const auto quota = domain_quotas(batch_size, k);
  Minibatch b;
  b.features.resize(static_cast<Eigen::Index>(batch_size), source.feature_dim());
  b.labels.reserve(batch_size);
  b.domains.reserve(batch_size);
  Eigen::Index row = 0;
  for (std::size_t slot = 0; slot < k; ++slot) {
    for (std::size_t n = 0; n < quota[slot]; ++n) {
      const Sample &s = source[state.next_index(slot)];
      b.features.row(row++) = s.features.transpose();
      b.labels.push_back(s.label);
      b.domains.push_back(s.domain);
    }
  }
  return b;
}

/// Feature-level stand-in for an image augmentation policy: additive Gaussian noise.
inline Minibatch augment_jitter(const Minibatch &batch, double strength, Rng &rng) {
  if (!(strength >= 0.0)) throw Error("augment_jitter: strength must be >= 0");
  Minibatch out = batch;
  if (strength == 0.0) return out;
  std::normal_distribution<double> noise(0.0, strength);
  for (Eigen::Index i = 0; i < out.features.rows(); ++i)
    for (Eigen::Index j = 0; j < out.features.cols(); ++j) out.features(i, j) += noise(rng);
  return out;
}

}  // namespace dgadr
