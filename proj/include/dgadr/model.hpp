#pragma once

// Fully connected feature extractor + linear classifier head with hand-written
// backpropagation. The feature vector z is the post-activation output of one
// chosen layer (the penultimate by default); logits are the raw output of the last.

#include "dgadr/common.hpp"
#include "dgadr/data.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace dgadr {

enum class Activation { Tanh, Relu };

inline std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

inline Activation parse_activation(const std::string &s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw Error("unknown activation '" + s + "' (expected tanh or relu)");
}

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

struct Model {
  std::vector<Layer> layers;
  std::vector<Activation> activations;  // one per hidden layer (layers.size() - 1)
  /// Index into the activation stack: 0 is the input, k the output of layer k.
  /// Must lie in [1, layers.size()]; the last value means "logits are the features".
  int feature_layer = 1;
  std::uint64_t init_seed = 0;

  Eigen::Index input_dim() const { return layers.front().in_dim(); }
  Eigen::Index num_classes() const { return layers.back().out_dim(); }
  Eigen::Index feature_dim() const { return layers[static_cast<std::size_t>(feature_layer) - 1].out_dim(); }

  void check() const {
    if (layers.empty()) throw Error("model: no layers");
    if (activations.size() + 1 != layers.size())
      throw Error("model: need one activation per hidden layer");
    if (feature_layer < 1 || feature_layer > static_cast<int>(layers.size()))
      throw Error("model: feature_layer out of range");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].bias.size() != layers[l].out_dim())
        throw Error("model: bias size mismatch at layer " + std::to_string(l));
      if (l > 0 && layers[l].in_dim() != layers[l - 1].out_dim())
        throw Error("model: layer " + std::to_string(l) + " input does not chain");
    }
  }

  bool all_finite() const {
    for (const auto &layer : layers)
      if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
    return true;
  }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto &layer : layers) n += layer.weight.size() + layer.bias.size();
    return n;
  }

  friend bool operator==(const Model &a, const Model &b) {
    if (a.layers.size() != b.layers.size() || a.activations != b.activations ||
        a.feature_layer != b.feature_layer)
      return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
      const auto &x = a.layers[l];
      const auto &y = b.layers[l];
      if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols() ||
          x.weight != y.weight || x.bias != y.bias)
        return false;
    }
    return true;
  }
};

/// Gradients with the same layer shapes as the model they belong to.
struct ParamGrads {
  std::vector<Layer> layers;

  static ParamGrads zeros_like(const Model &m) {
    ParamGrads g;
    for (const auto &layer : m.layers)
      g.layers.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                          Vector::Zero(layer.bias.size())});
    return g;
  }

  bool all_finite() const {
    for (const auto &layer : layers)
      if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
    return true;
  }

  /// Flattened view in the same order as the parameter file (row-major weights, then bias).
  std::vector<double> flatten() const {
    std::vector<double> out;
    for (const auto &layer : layers) {
      out.insert(out.end(), layer.weight.data(), layer.weight.data() + layer.weight.size());
      out.insert(out.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
    }
    return out;
  }
};

struct ForwardTrace {
  std::vector<Matrix> pre;   // pre[l]: M x out_l, before activation
  std::vector<Matrix> acts;  // acts[0] = input, acts[l + 1] = activation(pre[l])
  int feature_layer = 1;

  const Matrix &features() const { return acts[static_cast<std::size_t>(feature_layer)]; }
  const Matrix &logits() const { return acts.back(); }
  Eigen::Index batch_size() const { return acts.front().rows(); }
};

namespace detail {

inline void activate(Activation a, const Matrix &pre, Matrix &out) {
  if (a == Activation::Tanh)
    out = pre.array().tanh().matrix();
  else
    out = pre.cwiseMax(0.0);
}

// d act / d pre, expressed through the stored pre/post values.
inline Matrix activation_derivative(Activation a, const Matrix &pre, const Matrix &post) {
  if (a == Activation::Tanh) return (1.0 - post.array().square()).matrix();
  return (pre.array() > 0.0).cast<double>().matrix();
}

}  // namespace detail

/// Fan-in scaled uniform init: W ~ U(-sqrt(3/fan_in), sqrt(3/fan_in)) gives unit-variance
/// pre-activations for unit-variance inputs. Biases start at zero.
inline Model init_model(const std::vector<int> &dims, Activation activation, std::uint64_t seed,
                        int feature_layer = 0) {
  if (dims.size() < 2) throw Error("init_model: need at least input and output dimensions");
  for (int d : dims)
    if (d < 1) throw Error("init_model: layer dimensions must be >= 1");
  Model m;
  m.init_seed = seed;
  const int num_layers = static_cast<int>(dims.size()) - 1;
  m.activations.assign(static_cast<std::size_t>(num_layers - 1), activation);
  m.feature_layer = feature_layer > 0 ? feature_layer : std::max(1, num_layers - 1);
  Rng rng(seed);
  for (int l = 0; l < num_layers; ++l) {
    const double limit = std::sqrt(3.0 / dims[l]);
    std::uniform_real_distribution<double> u(-limit, limit);
    Layer layer{Matrix(dims[l + 1], dims[l]), Vector::Zero(dims[l + 1])};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = u(rng);
    m.layers.push_back(std::move(layer));
  }
  m.check();
  return m;
}

inline ForwardTrace forward(const Model &model, const Matrix &inputs) {
  if (inputs.cols() != model.input_dim())
    throw Error("forward: batch has " + std::to_string(inputs.cols()) + " features, model expects " +
                std::to_string(model.input_dim()));
  if (!model.all_finite()) throw Error("forward: model parameters contain NaN or Inf");
  ForwardTrace t;
  t.feature_layer = model.feature_layer;
  t.acts.reserve(model.layers.size() + 1);
  t.pre.reserve(model.layers.size());
  t.acts.push_back(inputs);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Layer &layer = model.layers[l];
    Matrix pre = t.acts.back() * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    Matrix post;
    if (l + 1 < model.layers.size())
      detail::activate(model.activations[l], pre, post);
    else
      post = pre;
    t.pre.push_back(std::move(pre));
    t.acts.push_back(std::move(post));
  }
  return t;
}

inline ForwardTrace forward(const Model &model, const Minibatch &batch) {
  return forward(model, batch.features);
}

/// Backpropagates both upstream gradients: the classification gradient enters at the
/// logits, the feature gradient at z. Paths through shared layers accumulate.
inline ParamGrads backward(const Model &model, const ForwardTrace &trace,
                           const Matrix &d_logits, const Matrix &d_features) {
  const Eigen::Index m = trace.batch_size();
  if (d_logits.rows() != m || d_logits.cols() != model.num_classes())
    throw Error("backward: dLoss/dLogits has wrong shape");
  if (d_features.rows() != m || d_features.cols() != model.feature_dim())
    throw Error("backward: dLoss/dFeatures has wrong shape");
  if (trace.acts.size() != model.layers.size() + 1) throw Error("backward: trace/model mismatch");

  ParamGrads g = ParamGrads::zeros_like(model);
  const std::size_t n = model.layers.size();
  // delta = dL/d(output of layer l), first w.r.t. the post-activation, then the pre-activation.
  Matrix delta = d_logits;
  if (static_cast<std::size_t>(model.feature_layer) == n) delta += d_features;
  for (std::size_t l = n; l-- > 0;) {
    if (l + 1 < n) {
      if (static_cast<std::size_t>(model.feature_layer) == l + 1) delta += d_features;
      delta.array() *=
          detail::activation_derivative(model.activations[l], trace.pre[l], trace.acts[l + 1]).array();
    }
    g.layers[l].weight = delta.transpose() * trace.acts[l];
    g.layers[l].bias = delta.colwise().sum().transpose();
    if (l > 0) delta = delta * model.layers[l].weight;
  }
  return g;
}

inline Model sgd_step(Model model, const ParamGrads &grads, double lr) {
  if (!(lr >= 0.0)) throw Error("sgd_step: learning rate must be >= 0");
  if (grads.layers.size() != model.layers.size()) throw Error("sgd_step: gradient shape mismatch");
  if (!grads.all_finite()) throw Error("sgd_step: non-finite gradients");
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto &layer = model.layers[l];
    const auto &gl = grads.layers[l];
    if (gl.weight.rows() != layer.weight.rows() || gl.weight.cols() != layer.weight.cols() ||
        gl.bias.size() != layer.bias.size())
      throw Error("sgd_step: gradient shape mismatch at layer " + std::to_string(l));
    layer.weight -= lr * gl.weight;
    layer.bias -= lr * gl.bias;
  }
  return model;
}

/// Central-difference gradient of an arbitrary scalar function of the parameters.
/// The evaluator must be deterministic.
template <class LossFn>
ParamGrads finite_diff_grad(const Model &model, LossFn &&loss, double epsilon) {
  ParamGrads g = ParamGrads::zeros_like(model);
  Model probe = model;
  auto central = [&](double &param) {
    const double saved = param;
    param = saved + epsilon;
    const double up = loss(static_cast<const Model &>(probe));
    param = saved - epsilon;
    const double down = loss(static_cast<const Model &>(probe));
    param = saved;
    return (up - down) / (2.0 * epsilon);
  };
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    auto &layer = probe.layers[l];
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
      g.layers[l].weight.data()[i] = central(layer.weight.data()[i]);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i)
      g.layers[l].bias[i] = central(layer.bias[i]);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Parameter file (text, one record per line):
//
//   dgadr-params,1
//   layers,<n>
//   activations,<act_1>,...,<act_{n-1}>
//   feature_layer,<k>
//   init_seed,<seed>
//   then for each layer: `shape,<out>,<in>`, <out> weight rows of <in> values, one bias row.
//
// Values are printed with 17 significant digits, so save/load is bit-exact.

inline void write_params(std::ostream &out, const Model &model) {
  model.check();
  out << "dgadr-params,1\n";
  out << "layers," << model.layers.size() << '\n';
  out << "activations";
  for (auto a : model.activations) out << ',' << to_string(a);
  out << '\n';
  out << "feature_layer," << model.feature_layer << '\n';
  out << "init_seed," << model.init_seed << '\n';
  for (const auto &layer : model.layers) {
    out << "shape," << layer.out_dim() << ',' << layer.in_dim() << '\n';
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        out << (c ? "," : "") << format_exact(layer.weight(r, c));
      out << '\n';
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r)
      out << (r ? "," : "") << format_exact(layer.bias[r]);
    out << '\n';
  }
}

inline Model read_params(std::istream &in, const std::string &name = "<stream>") {
  std::string line;
  std::size_t lineno = 0;
  auto next_fields = [&]() {
    if (!std::getline(in, line)) throw Error(name + ": unexpected end of parameter file");
    ++lineno;
    return detail::split_commas(line);
  };
  auto fail = [&](const std::string &what) -> Error {
    return Error(name + ":" + std::to_string(lineno) + ": " + what);
  };
  auto as_int = [&](std::string_view s) {
    long long v = 0;
    if (!detail::parse_int(s, v)) throw fail("expected an integer");
    return v;
  };

  auto f = next_fields();
  if (f.size() != 2 || detail::trim(f[0]) != "dgadr-params" || detail::trim(f[1]) != "1")
    throw fail("not a dgadr parameter file");
  f = next_fields();
  if (f.size() != 2 || detail::trim(f[0]) != "layers") throw fail("expected layers record");
  const long long n = as_int(f[1]);
  if (n < 1) throw fail("layer count must be >= 1");
  Model m;
  f = next_fields();
  if (detail::trim(f[0]) != "activations" || static_cast<long long>(f.size()) != n)
    throw fail("expected activations record with one entry per hidden layer");
  for (std::size_t i = 1; i < f.size(); ++i)
    m.activations.push_back(parse_activation(std::string(detail::trim(f[i]))));
  f = next_fields();
  if (f.size() != 2 || detail::trim(f[0]) != "feature_layer") throw fail("expected feature_layer");
  m.feature_layer = static_cast<int>(as_int(f[1]));
  f = next_fields();
  if (f.size() != 2 || detail::trim(f[0]) != "init_seed") throw fail("expected init_seed");
  {
    const std::string_view text = detail::trim(f[1]);
    const auto res = std::from_chars(text.data(), text.data() + text.size(), m.init_seed);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) throw fail("expected an unsigned seed");
  }

  auto read_row = [&](Eigen::Index expected, double *dst) {
    auto vals = next_fields();
    if (static_cast<Eigen::Index>(vals.size()) != expected)
      throw fail("expected " + std::to_string(expected) + " values");
    for (Eigen::Index i = 0; i < expected; ++i)
      if (!detail::parse_double(vals[static_cast<std::size_t>(i)], dst[i])) throw fail("malformed value");
  };
  for (long long l = 0; l < n; ++l) {
    f = next_fields();
    if (f.size() != 3 || detail::trim(f[0]) != "shape") throw fail("expected shape record");
    const long long out_dim = as_int(f[1]), in_dim = as_int(f[2]);
    if (out_dim < 1 || in_dim < 1) throw fail("layer dimensions must be >= 1");
    Layer layer{Matrix(out_dim, in_dim), Vector(out_dim)};
    for (Eigen::Index r = 0; r < out_dim; ++r) read_row(in_dim, layer.weight.row(r).data());
    read_row(out_dim, layer.bias.data());
    m.layers.push_back(std::move(layer));
  }
  m.check();
  if (!m.all_finite()) throw Error(name + ": parameters contain NaN or Inf");
  return m;
}

inline void save_params(const Model &model, const std::string &path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write parameter file: " + path);
  write_params(out, model);
}

inline Model load_params(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open parameter file: " + path);
  return read_params(in, path);
}

}  // namespace dgadr
