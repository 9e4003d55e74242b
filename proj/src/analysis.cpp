#include "coarsen/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "coarsen/io.hpp"

namespace coarsen {

SizeStats collect_stats(const ParticleSystem& sys, const std::vector<double>& initial_sizes) {
  if (initial_sizes.size() != sys.size()) throw AnalysisError("initial sizes do not match system");
  SizeStats s;
  s.time = sys.time();
  double living_mass = 0.0, vanished0 = 0.0;
  for (Index j = 0; j < sys.size(); ++j) {
    const double x = sys.sizes()[j];
    if (x > 0.0) {
      living_mass += x;
      s.max_size = std::max(s.max_size, x);
      ++s.living_count;
    } else {
      vanished0 += initial_sizes[j];
    }
  }
  if (s.living_count > 0) s.mean_size = living_mass / static_cast<double>(s.living_count);
  s.vanished_mass_fraction = vanished0 / static_cast<double>(sys.size());
  return s;
}

RescaledHistogram rescaled_density(const std::vector<double>& sizes, double time, std::size_t bins,
                                   double range_in_means) {
  if (bins == 0 || !(range_in_means > 0.0)) throw AnalysisError("histogram needs bins and a range");
  double sum = 0.0;
  std::size_t n = 0;
  for (double x : sizes)
    if (x > 0.0) {
      sum += x;
      ++n;
    }
  if (n == 0) throw AnalysisError("histogram of a system without living particles");
  RescaledHistogram h;
  h.time = time;
  h.mean = sum / static_cast<double>(n);
  const double w = range_in_means / static_cast<double>(bins);
  h.bin_edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.bin_edges[b] = w * static_cast<double>(b);
  std::vector<std::size_t> count(bins, 0);
  std::size_t inside = 0;
  for (double x : sizes) {
    if (!(x > 0.0)) continue;
    const double r = x / h.mean;
    if (r > range_in_means) continue;
    // The top edge belongs to the last bin.
    const auto b = std::min(bins - 1, static_cast<std::size_t>(r / w));
    ++count[b];
    ++inside;
  }
  h.densities.assign(bins, 0.0);
  if (inside > 0)
    for (std::size_t b = 0; b < bins; ++b)
      h.densities[b] = static_cast<double>(count[b]) / (static_cast<double>(inside) * w);
  return h;
}

RescaledHistogram rescaled_density(const ParticleSystem& sys, std::size_t bins,
                                   double range_in_means) {
  return rescaled_density(sys.sizes(), sys.time(), bins, range_in_means);
}

double l1_distance(const RescaledHistogram& p, const RescaledHistogram& q) {
  if (p.bin_edges != q.bin_edges) throw AnalysisError("histograms use different bins");
  double d = 0.0;
  for (std::size_t b = 0; b < p.densities.size(); ++b)
    d += std::fabs(p.densities[b] - q.densities[b]) * (p.bin_edges[b + 1] - p.bin_edges[b]);
  return d;
}

PowerFit fit_power_law(const std::vector<double>& times, const std::vector<double>& values,
                       double t_lo, double t_hi) {
  if (times.size() != values.size()) throw AnalysisError("fit: length mismatch");
  std::vector<double> lx, ly;
  double tmin = INFINITY, tmax = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i], v = values[i];
    if (!(t >= t_lo && t <= t_hi) || !(t > 0.0) || !(v > 0.0)) continue;
    lx.push_back(std::log(t));
    ly.push_back(std::log(v));
    tmin = std::min(tmin, t);
    tmax = std::max(tmax, t);
  }
  const std::size_t n = lx.size();
  if (n < 10) throw AnalysisError("fit: fewer than 10 samples in range");
  if (tmax < 10.0 * tmin * (1.0 - 1e-12)) throw AnalysisError("fit: samples span less than a decade");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (!(syy > 0.0)) throw AnalysisError("fit: values have zero variance");
  PowerFit f;
  f.samples = n;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  const double rss = std::max(0.0, syy - f.slope * sxy);
  f.stderr_slope = n > 2 ? std::sqrt(rss / static_cast<double>(n - 2) / sxx) : 0.0;
  return f;
}

namespace {

PowerFit fit_series(const std::vector<SizeStats>& series, double t_lo, double t_hi, bool use_max) {
  std::vector<double> t, v;
  for (const auto& s : series) {
    t.push_back(s.time);
    v.push_back(use_max ? s.max_size : s.mean_size);
  }
  return fit_power_law(t, v, t_lo, t_hi);
}

}  // namespace

PowerFit fit_growth_exponent(const std::vector<SizeStats>& series, double t_lo, double t_hi) {
  return fit_series(series, t_lo, t_hi, false);
}

PowerFit fit_max_growth(const std::vector<SizeStats>& series, double t_lo, double t_hi) {
  return fit_series(series, t_lo, t_hi, true);
}

std::optional<std::pair<double, double>> growth_fit_window(const std::vector<SizeStats>& series,
                                                           double beta, double mean0,
                                                           std::size_t min_living) {
  const double t_min = 10.0 * std::pow(mean0, beta + 1.0);
  double lo = INFINITY, hi = 0.0;
  for (const auto& s : series) {
    if (s.time < t_min || s.living_count < min_living) continue;
    lo = std::min(lo, s.time);
    hi = std::max(hi, s.time);
  }
  if (!(hi > lo)) return std::nullopt;
  return std::make_pair(lo, hi);
}

std::optional<double> coarsening_times(const std::vector<SizeStats>& series,
                                       const std::vector<double>& initial_sizes) {
  if (initial_sizes.empty()) throw AnalysisError("coarsening_times: no initial sizes");
  double X = 0.0;
  for (double x : initial_sizes) X += x;
  X /= static_cast<double>(initial_sizes.size());
  const double target = 0.5 * X;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double v = series[i].vanished_mass_fraction;
    if (v < target) continue;
    if (i == 0) return series[0].time;
    const double v0 = series[i - 1].vanished_mass_fraction;
    const double t0 = series[i - 1].time, t1 = series[i].time;
    return t0 + (t1 - t0) * (target - v0) / (v - v0);
  }
  return std::nullopt;
}

double coarsening_time_bound(double beta, double initial_mean) {
  const double bp1 = beta + 1.0;
  return std::pow(initial_mean, bp1) * std::pow(2.0, -bp1) / (2.0 * bp1);
}

double truncation_stability(const std::vector<double>& sizes, const TruncationSpec& spec) {
  if (spec.n_small > spec.n_large) throw AnalysisError("truncation: n_small exceeds n_large");
  if (sizes.size() < 2 * spec.n_large + 1) throw AnalysisError("truncation: data shorter than 2*n_large+1");
  if (spec.window + spec.margin > spec.n_small)
    throw AnalysisError("truncation: window too close to the truncation edge");
  if (spec.samples == 0 || !(spec.t_end > 0.0)) throw AnalysisError("truncation: bad sampling");
  const std::size_t c = sizes.size() / 2;
  auto cut = [&](std::size_t n) {
    return std::vector<double>(sizes.begin() + static_cast<std::ptrdiff_t>(c - n),
                               sizes.begin() + static_cast<std::ptrdiff_t>(c + n + 1));
  };
  ParticleSystem a(spec.beta, cut(spec.n_small), Boundary::Free);
  ParticleSystem b(spec.beta, cut(spec.n_large), Boundary::Free);
  double sup = 0.0;
  for (std::size_t i = 1; i <= spec.samples; ++i) {
    const double t = spec.t_end * static_cast<double>(i) / static_cast<double>(spec.samples);
    advance_to(a, t, spec.ctrl);
    advance_to(b, t, spec.ctrl);
    for (std::size_t k = spec.n_small - spec.window; k <= spec.n_small + spec.window; ++k) {
      const std::size_t kb = k + spec.n_large - spec.n_small;
      sup = std::max(sup, std::fabs(a.sizes()[k] - b.sizes()[kb]));
    }
  }
  return sup;
}

double holder_exponent(const std::vector<std::vector<double>>& samples, double dt,
                       std::size_t max_lag) {
  if (samples.size() < 2 * max_lag || max_lag < 2 || !(dt > 0.0))
    throw AnalysisError("holder_exponent: too few samples for the lags");
  std::vector<double> lags, mod;
  for (std::size_t d = 1; d <= max_lag; d *= 2) {
    double w = 0.0;
    for (std::size_t i = 0; i + d < samples.size(); ++i) {
      const auto& x0 = samples[i];
      const auto& x1 = samples[i + d];
      for (std::size_t j = 0; j < x0.size(); ++j) w = std::max(w, std::fabs(x1[j] - x0[j]));
    }
    if (!(w > 0.0)) throw AnalysisError("holder_exponent: trajectories are constant");
    lags.push_back(std::log(dt * static_cast<double>(d)));
    mod.push_back(std::log(w));
  }
  const std::size_t n = lags.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lags[i];
    my += mod[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lags[i] - mx) * (lags[i] - mx);
    sxy += (lags[i] - mx) * (mod[i] - my);
  }
  return sxy / sxx;
}

void write_stats_csv(std::ostream& out, const std::vector<SizeStats>& series) {
  out << "time,mean,max,living,vanished_fraction\n";
  for (const auto& s : series)
    out << fmt(s.time) << ',' << fmt(s.mean_size) << ',' << fmt(s.max_size) << ',' << s.living_count
        << ',' << fmt(s.vanished_mass_fraction) << '\n';
}

void write_histogram_csv(std::ostream& out, const std::vector<RescaledHistogram>& hists) {
  out << "t,bin_lo,bin_hi,density\n";
  for (const auto& h : hists)
    for (std::size_t b = 0; b < h.densities.size(); ++b)
      out << fmt(h.time) << ',' << fmt(h.bin_edges[b]) << ',' << fmt(h.bin_edges[b + 1]) << ','
          << fmt(h.densities[b]) << '\n';
}

}  // namespace coarsen
