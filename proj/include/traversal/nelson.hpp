#pragma once

// Nelson stochastic mechanics for a static barrier: Crank-Nicolson wave
// packet propagation, osmotic/current velocity fields, forward and
// backward-in-time Langevin path ensembles, and dwell-time statistics.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <limits>
#include <locale>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "traversal/error.hpp"
#include "traversal/physics.hpp"

namespace traversal::nelson {

// ---------------------------------------------------------------------------
// Specs

struct WavePacketSpec {
  double center = -61.0;   // x0
  double width = 10.0;     // sigma, position-density std is sigma
  double wavenumber = 1.0; // k0

  /// sigma = 10 / k0, x0 = -(d/2 + 6 sigma).
  static WavePacketSpec for_barrier(double energy, double barrier_half_width,
                                    const PhysicalUnits& units = {}) {
    const double k0 = IncidentSpec{energy}.wavenumber(units);
    const double sigma = 10.0 / k0;
    return {-(barrier_half_width + 6.0 * sigma), sigma, k0};
  }
};

struct GridSpec {
  double x_lo = -200.0;
  double x_hi = 200.0;
  int n_x = 4096;
  double dt = 0.01;
  int n_t = 14000;
  int stride = 5;  // CN steps between stored snapshots

  double dx() const { return (x_hi - x_lo) / (n_x - 1); }
  double x(int j) const { return x_lo + j * dx(); }
  double snapshot_dt() const { return dt * stride; }
  int snapshot_count() const { return n_t / stride + 1; }

  void validate() const {
    if (!(x_hi > x_lo) || n_x < 16 || !(dt > 0.0) || n_t < 1 || stride < 1)
      throw Error(ErrorKind::config, "grid needs x_lo < x_hi, n_x >= 16, dt > 0, n_t >= 1, stride >= 1");
    if (n_t % stride != 0) throw Error(ErrorKind::config, "n_t must be a multiple of stride");
  }

  /// Window and duration sized so that after the run the transmitted lobe has
  /// cleared the barrier and no lobe has reached the ends.
  static GridSpec for_run(const WavePacketSpec& packet, double barrier_half_width,
                          const PhysicalUnits& units = {}) {
    const double speed = units.hbar * packet.wavenumber / units.mass;
    GridSpec grid;
    const double travel = -packet.center + barrier_half_width + 8.0 * packet.width;
    grid.n_t = static_cast<int>(std::ceil(travel / speed / grid.dt / grid.stride)) * grid.stride;
    const double duration = grid.n_t * grid.dt;
    const double spread = units.hbar * duration / (2.0 * units.mass * packet.width * packet.width);
    const double final_width = packet.width * std::sqrt(1.0 + spread * spread);
    // Transmitted and reflected lobes end up near +-(speed T + x0).
    const double reach = std::max(speed * duration + packet.center, -packet.center) + 8.0 * final_width;
    const double half = std::ceil(reach / 10.0) * 10.0;
    grid.x_lo = -half;
    grid.x_hi = half;
    return grid;
  }
};

// ---------------------------------------------------------------------------
// Free Gaussian, closed form

/// psi(x, t) for a free packet with initial density N(x0, sigma^2).
inline cplx free_gaussian(const WavePacketSpec& p, double x, double t,
                          const PhysicalUnits& units = {}) {
  const cplx I{0.0, 1.0};
  const double s2 = p.width * p.width;
  const cplx spread = 1.0 + I * (units.hbar * t / (2.0 * units.mass * s2));
  const double speed = units.hbar * p.wavenumber / units.mass;
  const double shifted = x - p.center - speed * t;
  const cplx exponent = -shifted * shifted / (4.0 * s2 * spread) +
                        I * p.wavenumber * (x - p.center) -
                        I * units.hbar * p.wavenumber * p.wavenumber * t / (2.0 * units.mass) +
                        I * p.wavenumber * p.center;
  return std::pow(2.0 * pi * s2, -0.25) / std::sqrt(spread) * std::exp(exponent);
}

// ---------------------------------------------------------------------------
// Wave field

class WaveField {
 public:
  WaveField(GridSpec grid, PhysicalUnits units, std::vector<cplx> data)
      : grid_(grid), units_(units), data_(std::move(data)) {
    if (data_.size() % static_cast<std::size_t>(grid_.n_x) != 0)
      throw Error(ErrorKind::config, "field data does not match the grid");
    norms_.reserve(snapshot_count());
    for (int s = 0; s < snapshot_count(); ++s) norms_.push_back(norm_of(psi(s)));
  }

  const GridSpec& grid() const noexcept { return grid_; }
  const PhysicalUnits& units() const noexcept { return units_; }
  int snapshot_count() const noexcept {
    return static_cast<int>(data_.size() / static_cast<std::size_t>(grid_.n_x));
  }
  double time(int s) const { return s * grid_.snapshot_dt(); }
  double final_time() const { return time(snapshot_count() - 1); }

  std::span<const cplx> psi(int s) const {
    return {data_.data() + static_cast<std::size_t>(s) * grid_.n_x,
            static_cast<std::size_t>(grid_.n_x)};
  }
  std::span<const cplx> raw() const noexcept { return data_; }
  std::span<const double> norms() const noexcept { return norms_; }

  double max_norm_drift() const {
    double drift = 0.0;
    for (double n : norms_) drift = std::max(drift, std::abs(n - 1.0));
    return drift;
  }

  /// Probability to the right of x at snapshot s (rectangle rule on nodes).
  double probability_right_of(double x, int s) const {
    double sum = 0.0;
    const auto p = psi(s);
    for (int j = 0; j < grid_.n_x; ++j)
      if (grid_.x(j) > x) sum += std::norm(p[static_cast<std::size_t>(j)]);
    return sum * grid_.dx();
  }

 private:
  double norm_of(std::span<const cplx> p) const {
    double sum = 0.0;
    for (const cplx& v : p) sum += std::norm(v);
    return sum * grid_.dx();
  }

  GridSpec grid_;
  PhysicalUnits units_;
  std::vector<cplx> data_;
  std::vector<double> norms_;
};

inline constexpr double norm_drift_limit = 1e-6;
inline constexpr double window_density_limit = 1e-10;

/// Potential on the grid; rectangular steps are averaged over each cell so
/// the barrier edges need not fall on nodes.
inline std::vector<double> potential_on_grid(const BarrierSpec& barrier, const GridSpec& grid) {
  std::vector<double> v(static_cast<std::size_t>(grid.n_x));
  const double dx = grid.dx();
  for (int j = 0; j < grid.n_x; ++j) {
    const double x = grid.x(j);
    if (barrier.is_rectangular()) {
      const double half = barrier.rect().width / 2.0;
      const double overlap = std::max(0.0, std::min(x + dx / 2, half) - std::max(x - dx / 2, -half));
      v[static_cast<std::size_t>(j)] = barrier.rect().height * overlap / dx;
    } else {
      v[static_cast<std::size_t>(j)] = barrier.profile()(x);
    }
  }
  return v;
}

/// No barrier at all: a zero profile parked at the right end of the grid.
inline BarrierSpec free_space(const GridSpec& grid) {
  return BarrierSpec::smooth(
      PotentialProfile([](double) { return 0.0; }, grid.x_hi, grid.x_hi + 1.0, "free"));
}

/// Left edge of the static barrier (x1 for smooth profiles at the given energy
/// is computed by the caller; this is the geometric support).
inline double barrier_left_edge(const BarrierSpec& barrier) {
  if (barrier.is_rectangular()) return -barrier.rect().width / 2.0;
  return barrier.profile().x_lo();
}

/// Crank-Nicolson with a three-point Laplacian and psi = 0 beyond the ends.
/// The tridiagonal factorisation is done once; each step is one sweep.
inline WaveField propagate(const WavePacketSpec& packet, const BarrierSpec& barrier,
                           const GridSpec& grid, const PhysicalUnits& units = {}) {
  grid.validate();
  units.validate();
  if (barrier.modulation_amplitude != 0.0)
    throw Error(ErrorKind::config, "wave packet propagation needs a static barrier (V1 = 0)");
  if (!(packet.width > 0.0) || !(packet.wavenumber > 0.0))
    throw Error(ErrorKind::config, "packet needs sigma > 0 and k0 > 0");
  if (packet.center - 4.0 * packet.width < grid.x_lo ||
      packet.center + 4.0 * packet.width > grid.x_hi)
    throw Error(ErrorKind::window, "packet does not fit the grid with 4 sigma margins");
  if (packet.center + 4.0 * packet.width >= barrier_left_edge(barrier))
    throw Error(ErrorKind::config, "packet must start entirely left of the barrier");
  if (grid.dx() > 2.0 * pi / packet.wavenumber / 16.0)
    throw Error(ErrorKind::config, "grid does not resolve the carrier wavelength by 16 points");

  const auto n = static_cast<std::size_t>(grid.n_x);
  const double dx = grid.dx();
  const std::vector<double> potential = potential_on_grid(barrier, grid);

  const cplx r = cplx(0.0, grid.dt / (2.0 * units.hbar));
  const double kinetic = units.hbar * units.hbar / (units.mass * dx * dx);
  const cplx off = -r * (kinetic / 2.0);
  std::vector<cplx> diag(n), scaled_upper(n), pivot(n);
  for (std::size_t j = 0; j < n; ++j) diag[j] = 1.0 + r * (kinetic + potential[j]);
  pivot[0] = diag[0];
  scaled_upper[0] = off / pivot[0];
  for (std::size_t j = 1; j < n; ++j) {
    pivot[j] = diag[j] - off * scaled_upper[j - 1];
    scaled_upper[j] = off / pivot[j];
  }

  std::vector<cplx> psi(n), rhs(n);
  for (std::size_t j = 0; j < n; ++j)
    psi[j] = free_gaussian(packet, grid.x(static_cast<int>(j)), 0.0, units);
  double initial = 0.0;
  for (const cplx& v : psi) initial += std::norm(v);
  const double scale = 1.0 / std::sqrt(initial * dx);
  for (cplx& v : psi) v *= scale;

  std::vector<cplx> data;
  data.reserve(static_cast<std::size_t>(grid.snapshot_count()) * n);
  const auto store = [&](int step) {
    double norm = 0.0;
    for (const cplx& v : psi) norm += std::norm(v);
    norm *= dx;
    if (std::abs(norm - 1.0) > norm_drift_limit)
      throw Error(ErrorKind::stability, "norm drift " + std::to_string(norm - 1.0) + " at step " +
                                            std::to_string(step));
    if (std::norm(psi.front()) > window_density_limit || std::norm(psi.back()) > window_density_limit)
      throw Error(ErrorKind::window, "packet reached the grid ends at step " + std::to_string(step));
    data.insert(data.end(), psi.begin(), psi.end());
  };
  store(0);

  for (int step = 1; step <= grid.n_t; ++step) {
    for (std::size_t j = 0; j < n; ++j) {
      const cplx left = j > 0 ? psi[j - 1] : cplx{};
      const cplx right = j + 1 < n ? psi[j + 1] : cplx{};
      rhs[j] = (2.0 - diag[j]) * psi[j] - off * (left + right);
    }
    rhs[0] /= pivot[0];
    for (std::size_t j = 1; j < n; ++j) rhs[j] = (rhs[j] - off * rhs[j - 1]) / pivot[j];
    psi[n - 1] = rhs[n - 1];
    for (std::size_t j = n - 1; j-- > 0;) psi[j] = rhs[j] - scaled_upper[j] * psi[j + 1];
    if (step % grid.stride == 0) store(step);
  }
  return WaveField(grid, units, std::move(data));
}

// ---------------------------------------------------------------------------
// Velocity fields

struct Velocity {
  double osmotic = 0.0;  // u
  double current = 0.0;  // v
  bool regularized = false;
};

inline constexpr double node_density_floor = 1e-12;  // relative to max |psi|^2
inline constexpr double clamp_speed_factor = 50.0;   // v_max = 50 hbar k0 / m

/// u = Re((hbar/m) d/dx ln psi), v = Im(...) tabulated on the snapshot grid
/// with a five-point centred derivative; bilinear in (x, t) between nodes.
class VelocityField {
 public:
  VelocityField(const WaveField& field, double reference_wavenumber)
      : grid_(field.grid()), snapshots_(field.snapshot_count()) {
    const auto& units = field.units();
    const double v_max = clamp_speed_factor * units.hbar * reference_wavenumber / units.mass;
    const auto n = static_cast<std::size_t>(grid_.n_x);
    const double dx = grid_.dx();
    osmotic_.assign(n * static_cast<std::size_t>(snapshots_), 0.0);
    current_.assign(osmotic_.size(), 0.0);
    floor_.assign(osmotic_.size(), 0);
    for (int s = 0; s < snapshots_; ++s) {
      const auto p = field.psi(s);
      double peak = 0.0;
      for (const cplx& v : p) peak = std::max(peak, std::norm(v));
      const std::size_t base = static_cast<std::size_t>(s) * n;
      for (std::size_t j = 0; j < n; ++j) {
        if (j < 2 || j + 2 >= n || std::norm(p[j]) < node_density_floor * peak) {
          floor_[base + j] = 1;
          ++clamp_events_;
        }
        if (j < 2 || j + 2 >= n) continue;
        const cplx derivative = (-p[j + 2] + 8.0 * p[j + 1] - 8.0 * p[j - 1] + p[j - 2]) / (12.0 * dx);
        const cplx ratio = p[j] == cplx{} ? cplx{} : units.hbar / units.mass * derivative / p[j];
        osmotic_[base + j] = std::clamp(ratio.real(), -v_max, v_max);
        current_[base + j] = std::clamp(ratio.imag(), -v_max, v_max);
      }
    }
  }

  const GridSpec& grid() const noexcept { return grid_; }
  int snapshot_count() const noexcept { return snapshots_; }
  /// Grid nodes where |psi|^2 fell below the floor (or the stencil was cut).
  std::size_t clamp_events() const noexcept { return clamp_events_; }

  /// Snapshot interval s and weight w for time t, clamped to the run.
  std::pair<int, double> locate_time(double t) const {
    const double ts = grid_.snapshot_dt();
    int s = static_cast<int>(std::floor(t / ts));
    s = std::clamp(s, 0, snapshots_ - 2);
    return {s, t / ts - s};
  }

  Velocity at(double x, int s, double wt) const {
    const double dx = grid_.dx();
    const double fx = (x - grid_.x_lo) / dx;
    const int j = std::clamp(static_cast<int>(std::floor(fx)), 0, grid_.n_x - 2);
    const double wx = fx - j;
    const auto n = static_cast<std::size_t>(grid_.n_x);
    const std::size_t a = static_cast<std::size_t>(s) * n + static_cast<std::size_t>(j);
    const std::size_t b = a + n;
    const auto blend = [&](const std::vector<double>& f) {
      const double early = f[a] * (1.0 - wx) + f[a + 1] * wx;
      const double late = f[b] * (1.0 - wx) + f[b + 1] * wx;
      return early * (1.0 - wt) + late * wt;
    };
    return {blend(osmotic_), blend(current_),
            (floor_[a] | floor_[a + 1] | floor_[b] | floor_[b + 1]) != 0};
  }

  Velocity at(double x, double t) const {
    const auto [s, wt] = locate_time(t);
    return at(x, s, wt);
  }

 private:
  GridSpec grid_;
  int snapshots_;
  std::vector<double> osmotic_;
  std::vector<double> current_;
  std::vector<std::uint8_t> floor_;
  std::size_t clamp_events_ = 0;
};

inline Velocity velocities(const VelocityField& field, double x, double t) { return field.at(x, t); }

// ---------------------------------------------------------------------------
// Random streams

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of the independent sub-stream for path `index`.
inline std::uint64_t path_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

/// Wiener increments with variance hbar h / m.
class NoiseSource {
 public:
  NoiseSource(std::uint64_t seed, double step, const PhysicalUnits& units)
      : engine_(seed), scale_(std::sqrt(units.hbar * step / units.mass)) {}

  double operator()() { return scale_ * normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double variance() const { return scale_ * scale_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  double scale_;
};

/// Inverse-CDF sampler for a non-negative density tabulated on grid nodes,
/// linear between nodes.
class GridSampler {
 public:
  GridSampler(const GridSpec& grid, std::span<const double> density) : grid_(grid) {
    cumulative_.resize(density.size());
    cumulative_[0] = 0.0;
    for (std::size_t j = 1; j < density.size(); ++j)
      cumulative_[j] = cumulative_[j - 1] + 0.5 * (density[j] + density[j - 1]);
    total_ = cumulative_.back();
    if (!(total_ > 0.0)) throw Error(ErrorKind::empty_ensemble, "sampling density is zero");
  }

  double total() const noexcept { return total_ * grid_.dx(); }

  double cdf(double x) const {
    const double fx = (x - grid_.x_lo) / grid_.dx();
    if (fx <= 0.0) return 0.0;
    if (fx >= static_cast<double>(cumulative_.size() - 1)) return 1.0;
    const auto j = static_cast<std::size_t>(fx);
    const double w = fx - static_cast<double>(j);
    return (cumulative_[j] * (1.0 - w) + cumulative_[j + 1] * w) / total_;
  }

  double quantile(double u) const {
    const double target = u * total_;
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), target);
    if (it == cumulative_.begin()) return grid_.x_lo;
    if (it == cumulative_.end()) return grid_.x_hi;
    const auto j = static_cast<std::size_t>(it - cumulative_.begin()) - 1;
    const double span = cumulative_[j + 1] - cumulative_[j];
    const double w = span > 0.0 ? (target - cumulative_[j]) / span : 0.0;
    return grid_.x(static_cast<int>(j)) + w * grid_.dx();
  }

 private:
  GridSpec grid_;
  std::vector<double> cumulative_;
  double total_ = 0.0;
};

inline std::vector<double> density(const WaveField& field, int s) {
  std::vector<double> rho;
  rho.reserve(static_cast<std::size_t>(field.grid().n_x));
  for (const cplx& v : field.psi(s)) rho.push_back(std::norm(v));
  return rho;
}

/// Kolmogorov-Smirnov distance between samples and a tabulated CDF.
inline double ks_distance(std::vector<double> samples, const GridSampler& reference) {
  if (samples.empty()) throw Error(ErrorKind::empty_ensemble, "no samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = reference.cdf(samples[i]);
    worst = std::max({worst, std::abs(f - i / n), std::abs((i + 1) / n - f)});
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Path ensembles

struct BarrierRegion {
  double left = -1.0;   // x1
  double right = 1.0;   // x2
};

/// Total residence: steps whose starting sample lies in [x1, x2], times h.
/// The last sample of a trajectory opens no step, so splitting a trajectory
/// at any sample and summing the pieces reproduces the whole.
inline long dwell_steps(std::span<const double> trajectory, BarrierRegion region) {
  long count = 0;
  for (std::size_t i = 0; i + 1 < trajectory.size(); ++i)
    if (trajectory[i] >= region.left && trajectory[i] <= region.right) ++count;
  return count;
}

struct SamplePath {
  std::uint64_t seed = 0;
  bool transmitted = false;
  bool left_grid = false;
  bool regularized = false;  // touched a node-clamped cell
  long dwell_steps = 0;
  double dwell_time = 0.0;
  /// Last departure from x < x1 to final entry into x > x2; NaN if the
  /// path never left region I or never settled in region III.
  double crossing_time = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> trajectory;  // forward-read samples every record_stride steps

  bool excluded() const noexcept { return left_grid || regularized; }
};

struct PathSettings {
  int n_paths = 5000;
  double step = 0.005;           // h; must divide the snapshot interval
  std::uint64_t seed = 1;
  unsigned threads = 1;
  int record_stride = 0;         // 0 keeps no trajectories
};

struct PathEnsemble {
  std::vector<SamplePath> paths;
  BarrierRegion region;
  double step = 0.0;
  double duration = 0.0;
  bool backward = false;
  std::size_t clamp_events = 0;  // node-regularised grid cells in the field

  std::size_t excluded_grid() const {
    return static_cast<std::size_t>(std::count_if(paths.begin(), paths.end(),
                                                  [](const SamplePath& p) { return p.left_grid; }));
  }
  std::size_t excluded_clamp() const {
    return static_cast<std::size_t>(std::count_if(paths.begin(), paths.end(), [](const SamplePath& p) {
      return p.regularized && !p.left_grid;
    }));
  }
  std::size_t used() const {
    return static_cast<std::size_t>(
        std::count_if(paths.begin(), paths.end(), [](const SamplePath& p) { return !p.excluded(); }));
  }
  double transmitted_fraction() const {
    std::size_t t = 0, n = 0;
    for (const auto& p : paths)
      if (!p.excluded()) {
        ++n;
        t += p.transmitted ? 1 : 0;
      }
    if (n == 0) throw Error(ErrorKind::empty_ensemble, "every path was excluded");
    return static_cast<double>(t) / static_cast<double>(n);
  }
};

namespace detail {

inline int substeps(const GridSpec& grid, double step) {
  if (!(step > 0.0)) throw Error(ErrorKind::config, "SDE step must be positive");
  const double ratio = grid.snapshot_dt() / step;
  const int sub = static_cast<int>(std::lround(ratio));
  if (sub < 1 || std::abs(ratio - sub) > 1e-9 * ratio)
    throw Error(ErrorKind::config, "SDE step must evenly divide the snapshot interval");
  return sub;
}

template <class Body>
void parallel_for(int count, unsigned threads, Body&& body) {
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (int i = static_cast<int>(w); i < count; i += static_cast<int>(workers)) body(i);
    });
  for (auto& t : pool) t.join();
}

/// Tracks residence and crossing indices along a path as samples arrive in
/// forward order (index 0 .. total).
struct CrossingTracker {
  BarrierRegion region;
  long total = 0;
  long dwell = 0;
  long last_left = -1;    // last index with x < x1
  long last_not_right = -1;  // last index with x <= x2

  void observe(long index, double x) {
    if (index < total && x >= region.left && x <= region.right) ++dwell;
    if (x < region.left) last_left = std::max(last_left, index);
    if (x <= region.right) last_not_right = std::max(last_not_right, index);
  }
};

inline void finish(SamplePath& path, const CrossingTracker& tr, double step, double final_x) {
  path.dwell_steps = tr.dwell;
  path.dwell_time = static_cast<double>(tr.dwell) * step;
  path.transmitted = final_x > tr.region.right;
  if (path.transmitted && tr.last_left >= 0 && tr.last_not_right >= tr.last_left)
    path.crossing_time = static_cast<double>(tr.last_not_right + 1 - tr.last_left) * step;
}

}  // namespace detail

/// Forward Euler-Maruyama: dx = (u + v) h + dw, starting from |psi(x, 0)|^2.
inline PathEnsemble forward_paths(const WaveField& field, const VelocityField& velocity,
                                  BarrierRegion region, const PathSettings& settings) {
  if (settings.n_paths < 1) throw Error(ErrorKind::config, "need at least one path");
  const GridSpec& grid = field.grid();
  const int sub = detail::substeps(grid, settings.step);
  const long total = static_cast<long>(field.snapshot_count() - 1) * sub;
  const GridSampler start(grid, density(field, 0));
  const double margin_lo = grid.x(2), margin_hi = grid.x(grid.n_x - 3);

  PathEnsemble ensemble;
  ensemble.paths.resize(static_cast<std::size_t>(settings.n_paths));
  ensemble.region = region;
  ensemble.step = settings.step;
  ensemble.duration = static_cast<double>(total) * settings.step;
  ensemble.clamp_events = velocity.clamp_events();

  detail::parallel_for(settings.n_paths, settings.threads, [&](int index) {
    SamplePath& path = ensemble.paths[static_cast<std::size_t>(index)];
    path.seed = path_seed(settings.seed, static_cast<std::uint64_t>(index));
    NoiseSource noise(path.seed, settings.step, field.units());
    double x = start.quantile(noise.uniform());
    detail::CrossingTracker tracker{region, total};
    for (long i = 0; i < total; ++i) {
      tracker.observe(i, x);
      if (settings.record_stride > 0 && i % settings.record_stride == 0) path.trajectory.push_back(x);
      const int s = static_cast<int>(i / sub);
      const double wt = static_cast<double>(i % sub) / sub;
      const Velocity vel = velocity.at(x, s, wt);
      path.regularized = path.regularized || vel.regularized;
      x += (vel.osmotic + vel.current) * settings.step + noise();
      if (x < margin_lo || x > margin_hi) {
        path.left_grid = true;
        x = std::clamp(x, margin_lo, margin_hi);
      }
    }
    tracker.observe(total, x);
    if (settings.record_stride > 0) path.trajectory.push_back(x);
    detail::finish(path, tracker, settings.step, x);
  });
  return ensemble;
}

inline constexpr double minimum_transmitted_weight = 1e-6;

/// Transmitted sub-ensemble by time reversal: end points drawn from
/// |psi(x, T)|^2 restricted to x > x2, then x(t - h) = x(t) - (v - u) h + dw.
inline PathEnsemble backward_transmitted_paths(const WaveField& field,
                                               const VelocityField& velocity,
                                               BarrierRegion region,
                                               const PathSettings& settings) {
  if (settings.n_paths < 1) throw Error(ErrorKind::config, "need at least one path");
  const GridSpec& grid = field.grid();
  const int sub = detail::substeps(grid, settings.step);
  const long total = static_cast<long>(field.snapshot_count() - 1) * sub;
  const int last = field.snapshot_count() - 1;

  std::vector<double> lobe = density(field, last);
  for (int j = 0; j < grid.n_x; ++j)
    if (!(grid.x(j) > region.right)) lobe[static_cast<std::size_t>(j)] = 0.0;
  double weight = 0.0;
  for (double v : lobe) weight += v;
  weight *= grid.dx();
  if (!(weight >= minimum_transmitted_weight))
    throw Error(ErrorKind::insufficient_transmission,
                "transmitted weight " + std::to_string(weight) + " below 1e-6");
  const GridSampler finish_sampler(grid, lobe);
  const double margin_lo = grid.x(2), margin_hi = grid.x(grid.n_x - 3);

  PathEnsemble ensemble;
  ensemble.paths.resize(static_cast<std::size_t>(settings.n_paths));
  ensemble.region = region;
  ensemble.step = settings.step;
  ensemble.duration = static_cast<double>(total) * settings.step;
  ensemble.backward = true;
  ensemble.clamp_events = velocity.clamp_events();

  detail::parallel_for(settings.n_paths, settings.threads, [&](int index) {
    SamplePath& path = ensemble.paths[static_cast<std::size_t>(index)];
    path.seed = path_seed(settings.seed, static_cast<std::uint64_t>(index));
    NoiseSource noise(path.seed, settings.step, field.units());
    // The restricted CDF ramps linearly across the cell holding x2; keep the
    // end point strictly inside region III.
    double x = std::max(finish_sampler.quantile(noise.uniform()),
                        std::nextafter(region.right, std::numeric_limits<double>::infinity()));
    const double final_x = x;
    detail::CrossingTracker tracker{region, total};
    tracker.observe(total, x);
    std::vector<double> reversed;
    if (settings.record_stride > 0) reversed.push_back(x);
    for (long i = total; i > 0; --i) {
      const int s = static_cast<int>((i - 1) / sub);
      const double wt = static_cast<double>(i - static_cast<long>(s) * sub) / sub;
      const Velocity vel = velocity.at(x, s, wt);
      path.regularized = path.regularized || vel.regularized;
      x -= (vel.current - vel.osmotic) * settings.step;
      x += noise();
      if (x < margin_lo || x > margin_hi) {
        path.left_grid = true;
        x = std::clamp(x, margin_lo, margin_hi);
      }
      tracker.observe(i - 1, x);
      if (settings.record_stride > 0 && (i - 1) % settings.record_stride == 0) reversed.push_back(x);
    }
    if (settings.record_stride > 0) path.trajectory.assign(reversed.rbegin(), reversed.rend());
    detail::finish(path, tracker, settings.step, final_x);
  });
  return ensemble;
}

struct DwellStatistics {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n_used = 0;
  double crossing_mean = std::numeric_limits<double>::quiet_NaN();  // diagnostic
};

/// Mean total residence over transmitted, non-excluded paths; standard error
/// uses the n - 1 sample variance and is 0 for a single path.
inline DwellStatistics tau_nelson(const PathEnsemble& ensemble) {
  std::vector<double> dwell, crossing;
  for (const auto& p : ensemble.paths) {
    if (!p.transmitted || p.excluded()) continue;
    dwell.push_back(p.dwell_time);
    if (std::isfinite(p.crossing_time)) crossing.push_back(p.crossing_time);
  }
  if (dwell.empty()) throw Error(ErrorKind::empty_ensemble, "no transmitted paths");
  DwellStatistics stats;
  stats.n_used = dwell.size();
  const double n = static_cast<double>(dwell.size());
  stats.mean = std::accumulate(dwell.begin(), dwell.end(), 0.0) / n;
  if (dwell.size() > 1) {
    double ss = 0.0;
    for (double d : dwell) ss += (d - stats.mean) * (d - stats.mean);
    stats.std_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  if (!crossing.empty())
    stats.crossing_mean =
        std::accumulate(crossing.begin(), crossing.end(), 0.0) / static_cast<double>(crossing.size());
  return stats;
}

// ---------------------------------------------------------------------------
// Persistence

/// Writes stem.bin (little-endian float64 re/im pairs, snapshot-major) and
/// stem.json (grid, stride, units).
inline void save_field(const WaveField& field, const std::string& stem) {
  static_assert(std::endian::native == std::endian::little, "raw field format is little-endian");
  std::ofstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw Error(ErrorKind::io, "cannot write " + stem + ".bin");
  const auto raw = field.raw();
  bin.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(cplx)));
  const auto& g = field.grid();
  nlohmann::json meta = {{"x_lo", g.x_lo},          {"x_hi", g.x_hi},
                         {"n_x", g.n_x},            {"dt", g.dt},
                         {"n_t", g.n_t},            {"stride", g.stride},
                         {"snapshots", field.snapshot_count()},
                         {"mass", field.units().mass}, {"hbar", field.units().hbar},
                         {"format", "float64 little-endian (re, im), snapshot-major"}};
  std::ofstream json(stem + ".json");
  if (!json) throw Error(ErrorKind::io, "cannot write " + stem + ".json");
  json << meta.dump(2) << "\n";
  if (!bin || !json) throw Error(ErrorKind::io, "write failed for " + stem);
}

inline WaveField load_field(const std::string& stem) {
  std::ifstream json(stem + ".json");
  if (!json) throw Error(ErrorKind::io, "cannot read " + stem + ".json");
  nlohmann::json meta;
  try {
    json >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::io, std::string("bad sidecar: ") + e.what());
  }
  GridSpec g{meta.at("x_lo"), meta.at("x_hi"), meta.at("n_x"), meta.at("dt"), meta.at("n_t"),
             meta.at("stride")};
  const PhysicalUnits units{meta.at("mass"), meta.at("hbar")};
  const std::size_t count = static_cast<std::size_t>(meta.at("snapshots").get<int>()) *
                            static_cast<std::size_t>(g.n_x);
  std::vector<cplx> data(count);
  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw Error(ErrorKind::io, "cannot read " + stem + ".bin");
  bin.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(cplx)));
  if (bin.gcount() != static_cast<std::streamsize>(count * sizeof(cplx)))
    throw Error(ErrorKind::io, stem + ".bin is shorter than its sidecar says");
  return WaveField(g, units, std::move(data));
}

/// path_id,seed,transmitted,dwell_time
inline void write_ensemble_csv(const PathEnsemble& ensemble, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out.imbue(std::locale::classic());
  out.precision(17);
  out << "path_id,seed,transmitted,dwell_time\n";
  for (std::size_t i = 0; i < ensemble.paths.size(); ++i) {
    const auto& p = ensemble.paths[i];
    out << i << ',' << p.seed << ',' << (p.transmitted ? 1 : 0) << ',' << p.dwell_time << '\n';
  }
  if (!out) throw Error(ErrorKind::io, "write failed for " + path);
}

/// path_id,t,x for every recorded trajectory sample.
inline void write_trajectory_csv(const PathEnsemble& ensemble, int record_stride,
                                 const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out.imbue(std::locale::classic());
  out.precision(12);
  out << "path_id,t,x\n";
  const long total = std::lround(ensemble.duration / ensemble.step);
  for (std::size_t i = 0; i < ensemble.paths.size(); ++i) {
    const auto& traj = ensemble.paths[i].trajectory;
    for (std::size_t k = 0; k < traj.size(); ++k) {
      const long step = std::min<long>(static_cast<long>(k) * record_stride, total);
      out << i << ',' << static_cast<double>(step) * ensemble.step << ',' << traj[k] << '\n';
    }
  }
  if (!out) throw Error(ErrorKind::io, "write failed for " + path);
}

}  // namespace traversal::nelson
