#pragma once

// Local linear regression (LOESS without robustness iterations) with a
// tricube kernel over the k = ceil(span * n) nearest neighbours.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "ffoa/error.hpp"
#include "ffoa/format.hpp"

namespace ffoa {

struct LoessFit {
  std::vector<double> eval_points;
  std::vector<double> fitted_mean;
  std::vector<double> sigma_band;
  // True where the neighbourhood had fewer than two distinct x values and the
  // weighted mean was used instead of a line.
  std::vector<bool> fallback;
  double span = 0.75;
};

inline constexpr double kDefaultSpan = 0.75;

// n evenly spaced points from min(x) to max(x), both ends exact.
inline std::vector<double> linspace_eval_points(std::span<const double> x, std::size_t count = 100) {
  if (x.empty()) throw Error(ErrorKind::empty_input, "no x values", "x");
  if (count < 2) throw Error(ErrorKind::out_of_range, "need at least 2 eval points", "points");
  const auto [lo_it, hi_it] = std::ranges::minmax_element(x);
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> pts(count);
  const double step = (hi - lo) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) pts[i] = lo + static_cast<double>(i) * step;
  pts.back() = hi;
  return pts;
}

namespace detail {

inline double tricube(double u) {
  if (u >= 1.0) return 0.0;
  const double t = 1.0 - u * u * u;
  return t * t * t;
}

struct LocalFit {
  double mean = 0.0;
  double sigma = 0.0;
  bool fallback = false;
};

// `pts` must be sorted by (x, y) so that sums run in a canonical order.
inline LocalFit fit_at(std::span<const std::pair<double, double>> pts, std::size_t k, double x0) {
  const std::size_t n = pts.size();
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = std::abs(pts[i].first - x0);
  std::vector<double> sorted_dist = dist;
  std::nth_element(sorted_dist.begin(), sorted_dist.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   sorted_dist.end());
  const double h = sorted_dist[k - 1];

  // Points at distance exactly h get zero weight, so ties at the boundary do
  // not depend on input order.
  std::vector<std::size_t> members;
  std::vector<double> w;
  for (std::size_t i = 0; i < n; ++i) {
    double wi;
    if (h > 0.0) {
      wi = tricube(dist[i] / h);
    } else {
      wi = dist[i] == 0.0 ? 1.0 : 0.0;
    }
    if (wi > 0.0) {
      members.push_back(i);
      w.push_back(wi);
    }
  }
  if (members.empty()) {
    // Only possible when k == 1 and h > 0 is attained by a single point.
    for (std::size_t i = 0; i < n; ++i) {
      if (dist[i] == h) {
        members.push_back(i);
        w.push_back(1.0);
      }
    }
  }

  const double x_ref = pts[members.front()].first;
  const double y_ref = pts[members.front()].second;
  double sw = 0.0, sx = 0.0, sy = 0.0;
  bool distinct_x = false;
  for (std::size_t j = 0; j < members.size(); ++j) {
    const auto& [xi, yi] = pts[members[j]];
    sw += w[j];
    sx += w[j] * (xi - x_ref);
    sy += w[j] * (yi - y_ref);
    if (xi != x_ref) distinct_x = true;
  }
  const double xbar = x_ref + sx / sw;
  const double ybar = y_ref + sy / sw;

  double sxx = 0.0, sxy = 0.0;
  for (std::size_t j = 0; j < members.size(); ++j) {
    const auto& [xi, yi] = pts[members[j]];
    const double dx = xi - xbar;
    sxx += w[j] * dx * dx;
    sxy += w[j] * dx * (yi - ybar);
  }

  LocalFit fit;
  double slope = 0.0;
  if (!distinct_x || !(sxx > 0.0)) {
    fit.fallback = true;
    fit.mean = ybar;
  } else {
    slope = sxy / sxx;
    fit.mean = ybar + slope * (x0 - xbar);
  }
  double sr = 0.0;
  for (std::size_t j = 0; j < members.size(); ++j) {
    const auto& [xi, yi] = pts[members[j]];
    const double resid = yi - (ybar + slope * (xi - xbar));
    sr += w[j] * resid * resid;
  }
  fit.sigma = std::sqrt(sr / sw);
  return fit;
}

}  // namespace detail

inline LoessFit loess_fit(std::span<const double> x, std::span<const double> y, double span,
                          std::span<const double> eval_points) {
  if (x.size() != y.size()) {
    throw Error(ErrorKind::invalid_argument, "x and y must have equal length", "y");
  }
  if (x.size() < 3) throw Error(ErrorKind::empty_input, "need at least 3 points", "x");
  if (!(span > 0.0 && span <= 1.0)) {
    throw Error(ErrorKind::out_of_range, "span must lie in (0, 1]", "span");
  }
  std::vector<std::pair<double, double>> pts;
  pts.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw Error(ErrorKind::out_of_range, "non-finite input", "x");
    }
    pts.emplace_back(x[i], y[i]);
  }
  std::ranges::sort(pts);
  if (pts.front().first == pts.back().first) {
    throw Error(ErrorKind::invalid_argument, "need at least 2 distinct x values", "x");
  }

  const std::size_t n = pts.size();
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(span * static_cast<double>(n) - 1e-9)), 1, n);

  LoessFit fit;
  fit.span = span;
  fit.eval_points.assign(eval_points.begin(), eval_points.end());
  for (double x0 : eval_points) {
    const auto local = detail::fit_at(pts, k, x0);
    fit.fitted_mean.push_back(local.mean);
    fit.sigma_band.push_back(local.sigma);
    fit.fallback.push_back(local.fallback);
  }
  return fit;
}

inline void write_loess_csv(std::ostream& out, const LoessFit& fit, bool clamp_unit = false) {
  out << "eval_point,fitted_mean,lower,upper,fallback\n";
  auto clamp = [&](double v) { return clamp_unit ? std::clamp(v, 0.0, 1.0) : v; };
  for (std::size_t i = 0; i < fit.eval_points.size(); ++i) {
    const double m = fit.fitted_mean[i];
    const double s = fit.sigma_band[i];
    out << format_double(fit.eval_points[i]) << ',' << format_double(clamp(m)) << ','
        << format_double(clamp(m - s)) << ',' << format_double(clamp(m + s)) << ','
        << (fit.fallback[i] ? "true" : "false") << '\n';
  }
}

}  // namespace ffoa
