#pragma once

// Shared physical types and sideband kinematics.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "traversal/error.hpp"

namespace traversal {

using cplx = std::complex<double>;

inline constexpr double pi = 3.14159265358979323846;

struct PhysicalUnits {
  double mass = 1.0;
  double hbar = 1.0;

  void validate() const {
    if (!(mass > 0.0) || !(hbar > 0.0))
      throw Error(ErrorKind::config, "mass and hbar must be positive");
  }
};

/// Geometry of a rectangular barrier centred on the origin.
struct RectangularEdges {
  double height = 0.0;
  double left = 0.0;
  double right = 0.0;
};

/// Static potential V(x) on a finite domain. Outside the domain the profile
/// continues with its end values, so grids larger than the domain are fine.
class PotentialProfile {
 public:
  PotentialProfile(std::function<double(double)> evaluator, double x_lo, double x_hi,
                   std::string name, std::optional<RectangularEdges> edges = std::nullopt)
      : evaluator_(std::move(evaluator)), x_lo_(x_lo), x_hi_(x_hi), name_(std::move(name)),
        edges_(edges) {
    if (!(x_hi_ > x_lo_)) throw Error(ErrorKind::config, "profile domain must satisfy x_lo < x_hi");
    if (!evaluator_) throw Error(ErrorKind::config, "profile evaluator is empty");
  }

  double operator()(double x) const { return evaluator_(std::clamp(x, x_lo_, x_hi_)); }

  double x_lo() const noexcept { return x_lo_; }
  double x_hi() const noexcept { return x_hi_; }
  const std::string& name() const noexcept { return name_; }

  /// Set only for exact step profiles; lets callers skip root finding.
  const std::optional<RectangularEdges>& rectangular_edges() const noexcept { return edges_; }

 private:
  std::function<double(double)> evaluator_;
  double x_lo_;
  double x_hi_;
  std::string name_;
  std::optional<RectangularEdges> edges_;
};

inline PotentialProfile rectangular_profile(double height, double width) {
  const double half = 0.5 * width;
  return PotentialProfile(
      [=](double x) { return (x >= -half && x <= half) ? height : 0.0; }, -half - width,
      half + width, "rectangular", RectangularEdges{height, -half, half});
}

struct RectangularBarrier {
  double height = 1.0;  // V0
  double width = 1.0;   // d, edges at +-d/2
};

struct BarrierSpec {
  std::variant<RectangularBarrier, PotentialProfile> shape = RectangularBarrier{};
  double modulation_amplitude = 0.0;  // V1
  double modulation_frequency = 0.0;  // omega

  static BarrierSpec rectangular(double height, double width, double v1 = 0.0,
                                 double omega = 0.0) {
    BarrierSpec spec{RectangularBarrier{height, width}, v1, omega};
    spec.validate();
    return spec;
  }

  static BarrierSpec smooth(PotentialProfile profile, double v1 = 0.0, double omega = 0.0) {
    BarrierSpec spec{std::move(profile), v1, omega};
    spec.validate();
    return spec;
  }

  bool is_rectangular() const noexcept {
    return std::holds_alternative<RectangularBarrier>(shape);
  }

  const RectangularBarrier& rect() const {
    if (!is_rectangular()) throw Error(ErrorKind::config, "barrier is not rectangular");
    return std::get<RectangularBarrier>(shape);
  }

  PotentialProfile profile() const {
    if (is_rectangular()) return rectangular_profile(rect().height, rect().width);
    return std::get<PotentialProfile>(shape);
  }

  /// Modulation index V1 / (hbar omega); zero for a static barrier.
  double modulation_index(const PhysicalUnits& units) const {
    if (modulation_amplitude == 0.0) return 0.0;
    return modulation_amplitude / (units.hbar * modulation_frequency);
  }

  void validate() const {
    if (const auto* r = std::get_if<RectangularBarrier>(&shape)) {
      if (!(r->height > 0.0) || !(r->width > 0.0))
        throw Error(ErrorKind::config, "rectangular barrier needs V0 > 0 and d > 0");
    }
    if (!(modulation_amplitude >= 0.0))
      throw Error(ErrorKind::config, "modulation amplitude V1 must be >= 0");
    if (modulation_amplitude > 0.0 && !(modulation_frequency > 0.0))
      throw Error(ErrorKind::config, "modulation frequency must be > 0 when V1 > 0");
  }
};

struct IncidentSpec {
  double energy = 0.5;

  double wavenumber(const PhysicalUnits& units) const {
    return std::sqrt(2.0 * units.mass * energy) / units.hbar;
  }

  void validate() const {
    if (!(energy > 0.0)) throw Error(ErrorKind::config, "incident energy must be positive");
  }
};

// ---------------------------------------------------------------------------
// Kinematics

inline double sideband_energy(double energy, int order, double omega,
                              const PhysicalUnits& units = {}) {
  return energy + order * units.hbar * omega;
}

struct ChannelWavenumber {
  cplx value;
  bool open = true;
};

/// Free-space wavenumber of a channel. Negative energies return the
/// evanescent value i*sqrt(2m|E|)/hbar flagged closed.
inline ChannelWavenumber wavenumber(double energy, const PhysicalUnits& units = {}) {
  if (energy == 0.0)
    throw Error(ErrorKind::degenerate_channel, "wavenumber requested at zero energy");
  const double magnitude = std::sqrt(2.0 * units.mass * std::abs(energy)) / units.hbar;
  if (energy > 0.0) return {cplx(magnitude, 0.0), true};
  return {cplx(0.0, magnitude), false};
}

/// Decay constant inside a barrier of height V0. Above the barrier the
/// analytic continuation -i*sqrt(2m(E-V0))/hbar is returned, so that
/// exp(-kappa x) = exp(+i|k~|x) propagates to the right.
inline cplx decay_constant(double energy, double height, const PhysicalUnits& units = {}) {
  const double gap = height - energy;
  if (gap == 0.0)
    throw Error(ErrorKind::branch_point, "decay constant requested at E = V0");
  const double magnitude = std::sqrt(2.0 * units.mass * std::abs(gap)) / units.hbar;
  if (gap > 0.0) return {magnitude, 0.0};
  return {0.0, -magnitude};
}

/// Integer-order Bessel function of the first kind, any sign of order.
inline double bessel_j(int order, double x) {
  const unsigned n = static_cast<unsigned>(order < 0 ? -order : order);
  const double value = std::cyl_bessel_j(static_cast<double>(n), x);
  return (order < 0 && (n % 2 == 1)) ? -value : value;
}

/// Smallest N with |J_N(beta)| < 1e-12 |J_0(beta)|; 0 for beta = 0.
inline int adaptive_truncation(double beta, double tolerance = 1e-12, int cap = 200) {
  if (beta == 0.0) return 0;
  const double reference = std::abs(bessel_j(0, beta));
  for (int n = 1; n <= cap; ++n)
    if (std::abs(bessel_j(n, beta)) < tolerance * reference) return n;
  return cap;
}

// ---------------------------------------------------------------------------
// Channel sets

struct Channel {
  int order = 0;
  double energy = 0.0;
  cplx k;
  cplx kappa;
  bool open = true;
};

class ChannelSet {
 public:
  /// Sidebands closer than this (relative) to kappa = 0 or k = 0 count as
  /// sitting on a branch point.
  static constexpr double branch_tolerance = 1e-10;
  /// Relative upward shift of the incident energy applied in that case.
  static constexpr double branch_shift = 1e-9;

  /// Builds channels |n| <= n_eff for a rectangular barrier. When a retained
  /// sideband lands on kappa = 0 or k = 0 the incident energy is raised by
  /// 1e-9 relative and perturbed() reports it.
  static ChannelSet build(double energy, const BarrierSpec& barrier,
                          const PhysicalUnits& units = {},
                          std::optional<int> n_eff = std::nullopt) {
    units.validate();
    barrier.validate();
    IncidentSpec{energy}.validate();
    const double height = barrier.rect().height;
    const int order_max = n_eff ? *n_eff : adaptive_truncation(barrier.modulation_index(units));
    if (order_max < 0) throw Error(ErrorKind::config, "n_eff must be non-negative");
    const double quantum = units.hbar * barrier.modulation_frequency;
    if (order_max > 0 && !(quantum > 0.0))
      throw Error(ErrorKind::config, "sidebands need a positive modulation frequency");

    const double scale = std::max(height, energy);
    bool on_branch = false;
    for (int n = -order_max; n <= order_max; ++n) {
      const double en = energy + n * quantum;
      if (std::abs(en - height) <= branch_tolerance * scale ||
          std::abs(en) <= branch_tolerance * scale)
        on_branch = true;
    }

    ChannelSet set;
    set.requested_energy_ = energy;
    set.energy_ = on_branch ? energy * (1.0 + branch_shift) : energy;
    set.perturbed_ = on_branch;
    set.height_ = height;
    set.n_eff_ = order_max;
    for (int n = -order_max; n <= order_max; ++n) {
      Channel c;
      c.order = n;
      c.energy = set.energy_ + n * quantum;
      if (c.energy <= 0.0) {
        c.open = false;
        if (c.energy < 0.0) c.k = wavenumber(c.energy, units).value;
      } else {
        c.k = wavenumber(c.energy, units).value;
      }
      c.kappa = decay_constant(c.energy, height, units);
      set.channels_.push_back(c);
    }
    return set;
  }

  int n_eff() const noexcept { return n_eff_; }
  double energy() const noexcept { return energy_; }
  double requested_energy() const noexcept { return requested_energy_; }
  double barrier_height() const noexcept { return height_; }
  bool perturbed() const noexcept { return perturbed_; }

  std::span<const Channel> all() const noexcept { return channels_; }

  std::vector<Channel> open() const {
    std::vector<Channel> out;
    std::copy_if(channels_.begin(), channels_.end(), std::back_inserter(out),
                 [](const Channel& c) { return c.open; });
    return out;
  }

  const Channel* find(int order) const noexcept {
    if (order < -n_eff_ || order > n_eff_) return nullptr;
    return &channels_[static_cast<std::size_t>(order + n_eff_)];
  }

  const Channel& open_channel(int order) const {
    const Channel* c = find(order);
    if (c == nullptr || !c->open)
      throw Error(ErrorKind::channel_closed,
                  "sideband " + std::to_string(order) + " is closed or not retained");
    return *c;
  }

 private:
  double requested_energy_ = 0.0;
  double energy_ = 0.0;
  double height_ = 0.0;
  int n_eff_ = 0;
  bool perturbed_ = false;
  std::vector<Channel> channels_;
};

}  // namespace traversal
