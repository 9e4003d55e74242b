#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "coarsen/dynamics.hpp"
#include "coarsen/lattice.hpp"

namespace coarsen {

struct AnalysisError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SizeStats {
  double time = 0.0;
  double mean_size = 0.0;  // over living particles; 0 when none are left
  double max_size = 0.0;
  std::size_t living_count = 0;
  // Initial mass of the vanished particles divided by the particle count.
  double vanished_mass_fraction = 0.0;
};

SizeStats collect_stats(const ParticleSystem& sys, const std::vector<double>& initial_sizes);

// Density of x/mean over [0, range] in units of the living mean.
// Sum of density * bin width is 1 over the particles that fall in range.
struct RescaledHistogram {
  double time = 0.0;
  double mean = 0.0;
  std::vector<double> bin_edges;
  std::vector<double> densities;
};

RescaledHistogram rescaled_density(const ParticleSystem& sys, std::size_t bins = 50,
                                   double range_in_means = 5.0);
RescaledHistogram rescaled_density(const std::vector<double>& sizes, double time,
                                   std::size_t bins = 50, double range_in_means = 5.0);

// Integral of |p - q| over the common bins.
double l1_distance(const RescaledHistogram& p, const RescaledHistogram& q);

struct PowerFit {
  double slope = 0.0;
  double stderr_slope = 0.0;
  double intercept = 0.0;
  std::size_t samples = 0;
};

// Least squares of log(value) on log(time) over samples with t in [t_lo, t_hi].
// Needs at least 10 samples spanning one decade.
PowerFit fit_power_law(const std::vector<double>& times, const std::vector<double>& values,
                       double t_lo, double t_hi);
PowerFit fit_growth_exponent(const std::vector<SizeStats>& series, double t_lo, double t_hi);
PowerFit fit_max_growth(const std::vector<SizeStats>& series, double t_lo, double t_hi);

// Usable fit range: t >= 10 * mean0^(beta+1) and living_count >= min_living.
// Empty when the series never enters that regime.
std::optional<std::pair<double, double>> growth_fit_window(const std::vector<SizeStats>& series,
                                                           double beta, double mean0,
                                                           std::size_t min_living = 1000);

// First time the vanished fraction reaches half the initial mean, linear in t
// between samples; empty if never reached.
std::optional<double> coarsening_times(const std::vector<SizeStats>& series,
                                       const std::vector<double>& initial_sizes);
// Lower bound X^(beta+1) 2^-(beta+1) / (2(beta+1)) for the time above.
double coarsening_time_bound(double beta, double initial_mean);

struct TruncationSpec {
  double beta = 0.5;
  std::size_t n_small = 50, n_large = 100;  // half-widths of the two truncations
  double t_end = 0.1;
  std::size_t window = 5;   // compare indices center-window .. center+window
  std::size_t margin = 10;  // minimum distance of the window from either edge
  std::size_t samples = 10;
  StepControl ctrl;
};

// Sup over sampled times and the window of |x^small - x^large| for Free-boundary
// truncations of `sizes` around its central index.
double truncation_stability(const std::vector<double>& sizes, const TruncationSpec& spec);

// Fitted exponent of the modulus of continuity w(d) = max_j max_t |x_j(t+d) - x_j(t)|
// over dyadic lags d = dt, 2dt, ..., max_lag*dt on uniformly spaced samples.
double holder_exponent(const std::vector<std::vector<double>>& samples, double dt,
                       std::size_t max_lag = 16);

// CSV: time,mean,max,living,vanished_fraction
void write_stats_csv(std::ostream& out, const std::vector<SizeStats>& series);
// CSV: t,bin_lo,bin_hi,density
void write_histogram_csv(std::ostream& out, const std::vector<RescaledHistogram>& hists);

}  // namespace coarsen
