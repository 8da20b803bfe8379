#pragma once

// WKB traversal time and visibility for a single smooth barrier: turning
// points, penetration integrals, damping factors and the sideband ratios
// that set the transmitted-current contrast.

#include <math.h>  // pchip.hpp calls unqualified isnan
#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <locale>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "traversal/error.hpp"
#include "traversal/physics.hpp"

namespace traversal::wkb {

// ---------------------------------------------------------------------------
// Built-in profiles

/// V0 exp(-x^2 / (2 a^2)).
inline PotentialProfile gaussian(double height, double scale) {
  if (!(height > 0.0) || !(scale > 0.0))
    throw Error(ErrorKind::config, "gaussian profile needs V0 > 0 and a > 0");
  return PotentialProfile(
      [=](double x) { return height * std::exp(-x * x / (2.0 * scale * scale)); },
      -12.0 * scale, 12.0 * scale, "gaussian");
}

/// V0 / cosh^2(x / a).
inline PotentialProfile eckart(double height, double scale) {
  if (!(height > 0.0) || !(scale > 0.0))
    throw Error(ErrorKind::config, "eckart profile needs V0 > 0 and a > 0");
  return PotentialProfile(
      [=](double x) {
        const double c = std::cosh(x / scale);
        return height / (c * c);
      },
      -20.0 * scale, 20.0 * scale, "eckart");
}

/// Monotone cubic interpolation of (x, V) samples.
inline PotentialProfile from_samples(std::vector<double> xs, std::vector<double> vs,
                                     std::string name = "sampled") {
  if (xs.size() != vs.size() || xs.size() < 4)
    throw Error(ErrorKind::config, "profile samples need matching x and V columns, at least 4 rows");
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (!(xs[i] > xs[i - 1])) throw Error(ErrorKind::config, "profile x must be strictly increasing");
  for (double v : vs)
    if (!std::isfinite(v)) throw Error(ErrorKind::config, "profile V must be finite");
  const double lo = xs.front(), hi = xs.back();
  boost::math::interpolators::pchip<std::vector<double>> spline(std::move(xs), std::move(vs));
  return PotentialProfile([spline](double x) { return spline(x); }, lo, hi, std::move(name));
}

/// Reads a two-column "x,V" table; a non-numeric first line is taken as a header.
inline PotentialProfile load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open profile table " + path);
  std::vector<double> xs, vs;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    fields.imbue(std::locale::classic());
    double x = 0.0, v = 0.0;
    if (!(fields >> x >> v)) {
      if (xs.empty() && row == 1) continue;
      throw Error(ErrorKind::config, path + ":" + std::to_string(row) + ": expected x,V");
    }
    xs.push_back(x);
    vs.push_back(v);
  }
  return from_samples(std::move(xs), std::move(vs), path);
}

// ---------------------------------------------------------------------------
// Turning points

struct TurningPoints {
  double left = 0.0;   // x1
  double right = 0.0;  // x2
};

inline TurningPoints turning_points(const PotentialProfile& profile, double energy,
                                    int samples = 8192) {
  if (const auto& edges = profile.rectangular_edges()) {
    if (!(energy < edges->height))
      throw Error(ErrorKind::unsupported_topology, "energy is not below the barrier top");
    return {edges->left, edges->right};
  }

  const double lo = profile.x_lo(), hi = profile.x_hi();
  const auto excess = [&](double x) { return profile(x) - energy; };
  if (!(excess(lo) < 0.0) || !(excess(hi) < 0.0))
    throw Error(ErrorKind::unsupported_topology,
                "potential must lie below the energy at both domain ends");

  const double step = (hi - lo) / samples;
  std::vector<std::pair<double, double>> rising, falling;
  double prev_x = lo, prev = excess(lo);
  for (int i = 1; i <= samples; ++i) {
    const double x = (i == samples) ? hi : lo + i * step;
    const double value = excess(x);
    if (prev <= 0.0 && value > 0.0) rising.emplace_back(prev_x, x);
    if (prev > 0.0 && value <= 0.0) falling.emplace_back(prev_x, x);
    prev_x = x;
    prev = value;
  }
  if (rising.size() != 1 || falling.size() != 1)
    throw Error(ErrorKind::unsupported_topology,
                std::to_string(rising.size()) + " classically forbidden intervals (need exactly 1)");

  const double tolerance = 1e-10 * std::abs(energy);
  const auto root = [&](std::pair<double, double> bracket) {
    std::uintmax_t iterations = 200;
    const auto stop = [&](double a, double b) {
      return std::abs(b - a) <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(a));
    };
    const auto [a, b] = boost::math::tools::toms748_solve(excess, bracket.first, bracket.second,
                                                          stop, iterations);
    const double x = std::abs(excess(a)) <= std::abs(excess(b)) ? a : b;
    if (std::abs(excess(x)) > tolerance)
      throw Error(ErrorKind::accuracy, "turning point residual " + std::to_string(excess(x)));
    return x;
  };
  return {root(rising.front()), root(falling.front())};
}

// ---------------------------------------------------------------------------
// Penetration integrals

inline constexpr double quadrature_tolerance = 1e-8;

namespace detail {

struct Quadrature {
  double value = 0.0;
  double error = 0.0;
};

/// Adaptive Gauss-Kronrod on [0, pi/2]. Deep bisection near the turning
/// points ends up resolving rounding noise in V(x) - E, which inflates the
/// error estimate, so several requested tolerances are tried and the
/// smallest reported error wins.
template <class F>
Quadrature integrate_theta(F&& integrand) {
  Quadrature best{0.0, std::numeric_limits<double>::infinity()};
  for (double requested : {1e-12, 1e-11, 1e-10, 1e-9}) {
    double error = 0.0;
    const double value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        integrand, 0.0, pi / 2.0, 10, requested, &error);
    if (std::isfinite(value) && error < best.error) best = {value, error};
  }
  return best;
}

}  // namespace detail

/// Integral of g(x) over [x1, x2] with x = x1 + (x2 - x1) sin^2(theta), which
/// turns square-root endpoint behaviour into a smooth integrand.
template <class G>
double forbidden_integral(G&& g, TurningPoints tp) {
  const double length = tp.right - tp.left;
  const auto q = detail::integrate_theta([&](double theta) {
    const double s = std::sin(theta), c = std::cos(theta);
    return g(tp.left + length * s * s) * 2.0 * length * s * c;
  });
  // The integral sits in an exponent, so its absolute error is the relative
  // error of the damping factor.
  if (!(q.error <= quadrature_tolerance))
    throw Error(ErrorKind::accuracy, "quadrature error estimate " + std::to_string(q.error) +
                                         " on exponent " + std::to_string(q.value));
  return q.value;
}

/// Local decay constant sqrt(2m(V(x) - E))/hbar, zero outside the forbidden region.
inline double local_decay(const PotentialProfile& profile, double energy, double x,
                          const PhysicalUnits& units) {
  const double gap = profile(x) - energy;
  return gap > 0.0 ? std::sqrt(2.0 * units.mass * gap) / units.hbar : 0.0;
}

/// exp(-integral of kappa_n over [x1, x2]).
inline double damping_factor(const PotentialProfile& profile, double energy, TurningPoints tp,
                             const PhysicalUnits& units = {}) {
  if (const auto& edges = profile.rectangular_edges()) {
    const double kappa = std::sqrt(2.0 * units.mass * (edges->height - energy)) / units.hbar;
    return std::exp(-kappa * (tp.right - tp.left));
  }
  return std::exp(-forbidden_integral(
      [&](double x) { return local_decay(profile, energy, x, units); }, tp));
}

/// (m / hbar) times the integral of dx / kappa_0 over the forbidden region.
inline double wkb_traversal_time(const PotentialProfile& profile, double energy,
                                 const PhysicalUnits& units = {}) {
  IncidentSpec{energy}.validate();
  const TurningPoints tp = turning_points(profile, energy);
  if (const auto& edges = profile.rectangular_edges()) {
    const double kappa = std::sqrt(2.0 * units.mass * (edges->height - energy)) / units.hbar;
    return units.mass * (tp.right - tp.left) / (units.hbar * kappa);
  }
  // 1/kappa diverges like 1/sqrt at smooth turning points. Writing
  // V - E = (x - x1)(x2 - x) h(x) = L^2 sin^2 cos^2 h, the Jacobian cancels
  // the singularity exactly and the integrand becomes 2 / sqrt(2 m h) * hbar.
  const double length = tp.right - tp.left;
  const auto q = detail::integrate_theta([&](double theta) {
    const double s = std::sin(theta), c = std::cos(theta);
    const double x = tp.left + length * s * s;
    const double shape = std::abs(profile(x) - energy) / (length * length * s * s * c * c);
    return 2.0 * units.hbar / std::sqrt(2.0 * units.mass * shape);
  });
  if (!(q.error <= quadrature_tolerance * std::abs(q.value)))
    throw Error(ErrorKind::accuracy, "quadrature error estimate " + std::to_string(q.error));
  const double value = q.value;
  return units.mass / units.hbar * value;
}

// ---------------------------------------------------------------------------
// Sideband ratios and visibility

/// Sampled barrier maximum; the step height for rectangular profiles.
inline double profile_top(const PotentialProfile& profile, int samples = 8192) {
  if (const auto& edges = profile.rectangular_edges()) return edges->height;
  double top = profile(profile.x_lo());
  const double step = (profile.x_hi() - profile.x_lo()) / samples;
  for (int i = 1; i <= samples; ++i) top = std::max(top, profile(profile.x_lo() + i * step));
  return top;
}

struct SigmaPair {
  double plus = 1.0;   // Sigma_{+1}
  double minus = 1.0;  // Sigma_{-1}
};

inline SigmaPair sigma_factors(double s0, double s_plus, double s_minus) {
  const auto sigma = [s0](double s) { return (4.0 + s0 * s0) / (4.0 + s * s) * (s / s0); };
  return {sigma(s_plus), sigma(s_minus)};
}

struct WkbSolution {
  TurningPoints turning;            // at the incident energy
  std::map<int, double> damping;    // S_n, n in {-1, 0, +1}
  SigmaPair sigma;
  double tau = 0.0;                 // tau_WKB
  std::optional<double> visibility; // |2 (J1/J0)(Sigma_-1 - Sigma_+1)|; absent if a sideband is closed
  double opaque_visibility = 0.0;   // (V1 / hbar omega) 2 sinh(omega tau)
  std::vector<std::string> warnings;
};

inline constexpr double opaque_warning_threshold = 0.1;
inline constexpr double modulation_warning_threshold = 0.2;

inline WkbSolution wkb_visibility(const PotentialProfile& profile, double energy, double v1,
                                  double omega, const PhysicalUnits& units = {}) {
  units.validate();
  IncidentSpec{energy}.validate();
  if (!(v1 >= 0.0)) throw Error(ErrorKind::config, "V1 must be >= 0");
  if (v1 > 0.0 && !(omega > 0.0)) throw Error(ErrorKind::config, "omega must be > 0 when V1 > 0");

  WkbSolution sol;
  sol.turning = turning_points(profile, energy);
  sol.damping[0] = damping_factor(profile, energy, sol.turning, units);
  sol.tau = wkb_traversal_time(profile, energy, units);
  if (sol.damping[0] > opaque_warning_threshold)
    sol.warnings.push_back("barrier not opaque: S0 > 0.1");
  if (v1 == 0.0) {
    sol.damping[1] = sol.damping[-1] = sol.damping[0];
    sol.visibility = 0.0;
    return sol;
  }

  const double beta = v1 / (units.hbar * omega);
  if (beta > modulation_warning_threshold)
    sol.warnings.push_back("modulation not small: V1/hbar omega > 0.2");
  sol.opaque_visibility = beta * 2.0 * std::sinh(omega * sol.tau);
  bool complete = true;
  for (int n : {-1, 1}) {
    const double en = sideband_energy(energy, n, omega, units);
    if (!(en > 0.0)) {
      sol.warnings.push_back("sideband " + std::to_string(n) + " closed: Sigma form unavailable");
      complete = false;
      continue;
    }
    if (!(en < profile_top(profile))) {
      // No forbidden interval left at this energy: the wave is undamped.
      sol.damping[n] = 1.0;
      sol.warnings.push_back("sideband " + std::to_string(n) + " at or above the barrier top");
      continue;
    }
    sol.damping[n] = damping_factor(profile, en, turning_points(profile, en), units);
  }
  if (!complete) return sol;
  if (!(sol.damping[-1] <= sol.damping[0] && sol.damping[0] <= sol.damping[1]))
    throw Error(ErrorKind::accuracy, "damping factors violate S-1 <= S0 <= S+1");

  sol.sigma = sigma_factors(sol.damping[0], sol.damping[1], sol.damping[-1]);
  sol.visibility =
      std::abs(2.0 * bessel_j(1, beta) / bessel_j(0, beta) * (sol.sigma.minus - sol.sigma.plus));
  return sol;
}

struct WkbTau {
  double tau_low_frequency = 0.0;  // hbar I / (2 V1)
  double tau = 0.0;                // asinh inversion; equals the above when omega = 0
};

inline WkbTau wkb_tau_from_visibility(double visibility, double v1, double omega = 0.0,
                                      const PhysicalUnits& units = {}) {
  if (v1 == 0.0) throw Error(ErrorKind::division, "V1 = 0: visibility carries no time scale");
  if (!(visibility >= 0.0) || !(v1 > 0.0) || !(omega >= 0.0))
    throw Error(ErrorKind::config, "need visibility >= 0, V1 > 0, omega >= 0");
  WkbTau out;
  out.tau_low_frequency = units.hbar * visibility / (2.0 * v1);
  out.tau = omega > 0.0 ? std::asinh(units.hbar * omega * visibility / (2.0 * v1)) / omega
                        : out.tau_low_frequency;
  return out;
}

}  // namespace traversal::wkb
