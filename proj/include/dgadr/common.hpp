#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iostream>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dgadr {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Deterministic random engine shared by every stochastic routine. Callers own
/// the state and pass it explicitly; nothing in the library keeps a global one.
using Rng = std::mt19937_64;

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::function<void(const std::string &)> &warning_sink() {
  static std::function<void(const std::string &)> sink = [](const std::string &msg) {
    std::clog << "[dgadr] warning: " << msg << '\n';
  };
  return sink;
}

inline std::mutex &warning_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

/// Replaces the warning sink (stderr by default). Returns the previous sink.
inline std::function<void(const std::string &)> set_warning_handler(
    std::function<void(const std::string &)> handler) {
  std::lock_guard<std::mutex> lock(detail::warning_mutex());
  auto previous = std::move(detail::warning_sink());
  detail::warning_sink() = std::move(handler);
  return previous;
}

inline void warn(const std::string &msg) {
  std::lock_guard<std::mutex> lock(detail::warning_mutex());
  if (detail::warning_sink()) detail::warning_sink()(msg);
}

inline bool all_finite(const Eigen::Ref<const Matrix> &m) { return m.allFinite(); }

/// Formats a double with 17 significant digits so that text round-trips are exact.
inline std::string format_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Fixed-precision formatting used by every CSV report.
inline std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace dgadr
