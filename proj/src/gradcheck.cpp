#include "pdseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

namespace pdseg {

double GradCheckReport::worst() const {
  double w = 0;
  for (double e : max_rel_error) w = std::max(w, e);
  return w;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "pass" : "FAIL") << " worst=" << worst() << " tol=" << tolerance << " per-input=[";
  for (std::size_t i = 0; i < max_rel_error.size(); ++i) os << (i ? ", " : "") << max_rel_error[i];
  os << "] probes=" << probes;
  int u = 0;
  for (int n : unresolved) u += n;
  if (u) os << " unresolved=" << u;
  return os.str();
}

namespace {

double relative_error(double ad, double fd, double floor) {
  return std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), floor});
}

// Fourth-order central difference of a scalar function of the offset.
template <typename F>
double stencil(F& at, double h) {
  return (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
}

// Difference quotient from the largest step whose h, h/2, h/4 stencils agree;
// nullopt when none does down to min_step.
template <typename F>
std::optional<double> derivative(F&& eval_at, const GradCheckOptions& o) {
  // Neighbouring levels share the ±h points; halving is exact in binary.
  std::map<double, double> cache;
  auto at = [&](double d) {
    auto it = cache.find(d);
    if (it == cache.end()) it = cache.emplace(d, eval_at(d)).first;
    return it->second;
  };
  for (double h = o.step; h >= o.min_step * (1 - 1e-9); h /= 10) {
    const double coarse = stencil(at, h);
    const double mid = stencil(at, h / 2);
    const double fine = stencil(at, h / 4);
    if (relative_error(coarse, mid, o.abs_floor) <= 0.1 * o.tolerance &&
        relative_error(mid, fine, o.abs_floor) <= 0.1 * o.tolerance) {
      return fine;
    }
  }
  return std::nullopt;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options) {
  if (!(options.step > 0) || !(options.min_step > 0) || options.min_step > options.step ||
      !(options.tolerance > 0)) {
    throw ConfigError("grad_check: need 0 < min_step <= step and tolerance > 0");
  }
  for (auto& in : inputs) {
    if (!in.requires_grad() || !in.node_ptr()->is_leaf()) {
      throw ConfigError("grad_check inputs must be leaves with requires_grad=true");
    }
    in.zero_grad();
  }
  const Tensor<double> base = fn(inputs);
  if (base.numel() != 1) throw DimensionError("grad_check: fn must return a scalar");
  const double f0 = base.item();
  backward(base);
  std::vector<std::vector<double>> analytic;
  for (const auto& in : inputs) analytic.emplace_back(in.grad().begin(), in.grad().end());

  auto eval = [&]() { return fn(inputs).item(); };
  if (eval() != f0) throw OracleError("grad_check: function is not deterministic across evaluations");

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  report.tolerance = options.tolerance;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_data();
    const auto& g = analytic[k];
    double worst = 0;
    int unresolved = 0;
    auto record = [&](double ad, std::optional<double> fd) {
      ++report.probes;
      if (fd) {
        worst = std::max(worst, relative_error(ad, *fd, options.abs_floor));
      } else {
        ++unresolved;
      }
    };

    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords > 0 &&
        static_cast<std::size_t>(options.max_coords + options.largest_coords) < coords.size()) {
      // Largest-|g| coordinates first, then a random sample of the rest.
      const auto top = static_cast<std::ptrdiff_t>(options.largest_coords);
      std::partial_sort(coords.begin(), coords.begin() + top, coords.end(),
                        [&](std::size_t a, std::size_t b) { return std::abs(g[a]) > std::abs(g[b]); });
      std::shuffle(coords.begin() + top, coords.end(), rng);
      coords.resize(static_cast<std::size_t>(options.max_coords + options.largest_coords));
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = values[i];
      const auto fd = derivative(
          [&](double d) {
            values[i] = saved + d;
            return eval();
          },
          options);
      values[i] = saved;
      record(g[i], fd);
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    for (int d = 0; d < options.directions; ++d) {
      std::vector<double> dir(values.size());
      double norm = 0;
      for (auto& v : dir) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      double ad = 0;
      for (std::size_t i = 0; i < dir.size(); ++i) {
        dir[i] /= norm;
        ad += g[i] * dir[i];
      }
      std::vector<double> saved(values.begin(), values.end());
      const auto fd = derivative(
          [&](double d) {
            for (std::size_t i = 0; i < dir.size(); ++i) values[i] = saved[i] + d * dir[i];
            return eval();
          },
          options);
      std::copy(saved.begin(), saved.end(), values.begin());
      record(ad, fd);
    }
    report.max_rel_error.push_back(worst);
    report.unresolved.push_back(unresolved);
  }
  int unresolved = 0;
  for (int n : report.unresolved) unresolved += n;
  report.passed = report.worst() <= options.tolerance &&
                  unresolved <= options.max_unresolved * report.probes;
  return report;
}

}  // namespace pdseg
