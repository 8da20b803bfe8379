#pragma once

// Floquet sideband scattering off a rectangular barrier whose height
// oscillates as V0 + V1 cos(omega t): static and leading-order amplitudes,
// the full truncated matching solve, the transmitted current and its
// visibility, and the traversal time read off from it.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "traversal/error.hpp"
#include "traversal/physics.hpp"

namespace traversal::sideband {

inline constexpr cplx I{0.0, 1.0};

/// det(k, kappa) = 2(kappa^2 - k^2) sinh(kappa d) - 4 i k kappa cosh(kappa d).
inline cplx barrier_determinant(cplx k, cplx kappa, double width) {
  return 2.0 * (kappa * kappa - k * k) * std::sinh(kappa * width) -
         4.0 * I * k * kappa * std::cosh(kappa * width);
}

struct StaticCoefficients {
  cplx reflection;    // A0
  cplx transmission;  // D0
};

inline StaticCoefficients static_coefficients(double energy, const BarrierSpec& barrier,
                                              const PhysicalUnits& units = {}) {
  const auto& rect = barrier.rect();
  IncidentSpec{energy}.validate();
  const cplx k = wavenumber(energy, units).value;
  const cplx kappa = decay_constant(energy, rect.height, units);
  const double d = rect.width;
  const cplx det = barrier_determinant(k, kappa, d);
  const cplx phase = std::exp(-I * k * d);
  return {-2.0 * (k * k + kappa * kappa) * std::sinh(kappa * d) * phase / det,
          -4.0 * I * k * kappa * phase / det};
}

enum class Method { leading_order, full_matching };

struct ScatteringSolution {
  ChannelSet channels;
  BarrierSpec barrier;
  PhysicalUnits units;
  Method method = Method::full_matching;
  std::map<int, cplx> reflection;        // A_n
  std::map<int, cplx> transmission;      // D_n
  std::map<int, cplx> interior_growing;  // B_m, coefficient of exp(+kappa_m x)
  std::map<int, cplx> interior_decaying; // C_m, coefficient of exp(-kappa_m x)
  double condition = 1.0;
  std::vector<std::string> warnings;

  bool has(int order) const { return transmission.count(order) != 0; }

  cplx A(int order) const { return lookup(reflection, order); }
  cplx D(int order) const { return lookup(transmission, order); }

  double k0() const { return channels.open_channel(0).k.real(); }

  /// Sum over open channels of (k_n/k_0)(|A_n|^2 + |D_n|^2); one for an
  /// exact solution.
  double flux_sum() const {
    double sum = 0.0;
    for (const auto& [n, d] : transmission) {
      const double ratio = channels.open_channel(n).k.real() / k0();
      sum += ratio * (std::norm(d) + std::norm(reflection.at(n)));
    }
    return sum;
  }

 private:
  static cplx lookup(const std::map<int, cplx>& m, int order) {
    const auto it = m.find(order);
    if (it == m.end())
      throw Error(ErrorKind::channel_closed,
                  "no amplitude for sideband " + std::to_string(order));
    return it->second;
  }
};

struct SidebandAmplitudes {
  cplx reflection;    // A_n
  cplx transmission;  // D_n
};

/// First-order closed forms for sideband n != 0. The transmitted amplitude
/// follows the standard published expression; the reflected one uses the
/// re-derived brace (factor 2 D_0, +k_n k_0 in the first term and
/// cosh*cosh - 1 in the third), which is what the matching equations give.
inline SidebandAmplitudes leading_order_amplitudes(int order, const ChannelSet& channels,
                                                   const BarrierSpec& barrier,
                                                   const PhysicalUnits& units = {}) {
  if (order == 0)
    throw Error(ErrorKind::config, "n = 0 is the static channel; use static_coefficients");
  if (!(barrier.modulation_amplitude > 0.0))
    throw Error(ErrorKind::config, "leading-order sidebands need V1 > 0");
  const Channel& c0 = channels.open_channel(0);
  const Channel& cn = channels.open_channel(order);
  const double d = barrier.rect().width;
  const double beta = barrier.modulation_index(units);

  const cplx d0 = static_coefficients(channels.energy(), barrier, units).transmission;
  const cplx k0 = c0.k, q0 = c0.kappa, kn = cn.k, qn = cn.kappa;
  const cplx sn = std::sinh(qn * d), cn_ = std::cosh(qn * d);
  const cplx s0 = std::sinh(q0 * d), c0_ = std::cosh(q0 * d);

  const cplx prefactor = (bessel_j(order, beta) / bessel_j(0, beta)) * 2.0 * d0 *
                         std::exp(I * (k0 - kn) * d / 2.0) / barrier_determinant(kn, qn, d);

  const cplx transmitted = (qn * qn - kn * k0) * sn - (q0 * q0 - kn * k0) * (qn / q0) * s0 +
                           I * qn * (kn + k0) * (c0_ - cn_);
  const cplx reflected = (qn * qn + kn * k0) * sn * c0_ -
                         (q0 * q0 + kn * k0) * (qn / q0) * cn_ * s0 +
                         I * qn * (k0 - kn) * (cn_ * c0_ - 1.0) -
                         I * (k0 * qn * qn / q0 - kn * q0) * sn * s0;
  return {prefactor * reflected, prefactor * transmitted};
}

/// Static n = 0 amplitudes plus leading-order sidebands for every open
/// retained channel.
inline ScatteringSolution leading_order_solution(const ChannelSet& channels,
                                                 const BarrierSpec& barrier,
                                                 const PhysicalUnits& units = {}) {
  ScatteringSolution sol{channels, barrier, units, Method::leading_order, {}, {}, {}, {}, 1.0, {}};
  const auto stat = static_coefficients(channels.energy(), barrier, units);
  sol.reflection[0] = stat.reflection;
  sol.transmission[0] = stat.transmission;
  for (const Channel& c : channels.all()) {
    if (c.order == 0 || !c.open) continue;
    const auto amp = leading_order_amplitudes(c.order, channels, barrier, units);
    sol.reflection[c.order] = amp.reflection;
    sol.transmission[c.order] = amp.transmission;
  }
  return sol;
}

/// Solves the truncated matching problem exactly. Unknowns per open channel
/// are A_n, D_n and the interior pair; the interior columns use the scaled
/// basis exp(kappa(x - d/2)), exp(-kappa(x + d/2)) so that every column is
/// O(1) on the barrier, and are converted back to the exp(+-kappa x) pair on
/// return.
inline ScatteringSolution full_matching_solve(const ChannelSet& channels,
                                              const BarrierSpec& barrier,
                                              const PhysicalUnits& units = {}) {
  const double d = barrier.rect().width;
  const double beta = barrier.modulation_index(units);
  const std::vector<Channel> open = channels.open();
  const auto m = static_cast<Eigen::Index>(open.size());
  if (m == 0 || channels.find(0) == nullptr || !channels.find(0)->open)
    throw Error(ErrorKind::channel_closed, "incident channel is not open");

  ScatteringSolution sol{channels, barrier, units, Method::full_matching, {}, {}, {}, {}, 1.0, {}};
  if (channels.perturbed())
    sol.warnings.push_back("incident energy raised by 1e-9 relative to avoid a branch point");
  for (const Channel& c : channels.all())
    if (!c.open)
      sol.warnings.push_back("closed sideband " + std::to_string(c.order) + " dropped");

  using Matrix = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<cplx, Eigen::Dynamic, 1>;
  Matrix a = Matrix::Zero(4 * m, 4 * m);
  Vector rhs = Vector::Zero(4 * m);
  const auto col_a = [](Eigen::Index i) { return i; };
  const auto col_d = [m](Eigen::Index i) { return m + i; };
  const auto col_b = [m](Eigen::Index i) { return 2 * m + i; };
  const auto col_c = [m](Eigen::Index i) { return 3 * m + i; };

  for (Eigen::Index i = 0; i < m; ++i) {
    const Channel& cn = open[static_cast<std::size_t>(i)];
    const cplx alpha = cn.k * d / 2.0;
    const cplx out = std::exp(I * alpha);
    const Eigen::Index r = 4 * i;

    a(r, col_a(i)) = out;
    a(r + 1, col_a(i)) = -I * cn.k * out;
    a(r + 2, col_d(i)) = out;
    a(r + 3, col_d(i)) = I * cn.k * out;
    if (cn.order == 0) {
      const cplx in = std::exp(-I * alpha);
      rhs(r) = -in;
      rhs(r + 1) = -I * cn.k * in;
    }

    for (Eigen::Index j = 0; j < m; ++j) {
      const Channel& cm = open[static_cast<std::size_t>(j)];
      const double coupling = bessel_j(cn.order - cm.order, beta);
      if (coupling == 0.0) continue;
      const cplx q = cm.kappa;
      const cplx grow_left = std::exp(-q * d), grow_right = 1.0;
      const cplx decay_left = 1.0, decay_right = std::exp(-q * d);
      a(r, col_b(j)) -= coupling * grow_left;
      a(r, col_c(j)) -= coupling * decay_left;
      a(r + 1, col_b(j)) -= coupling * q * grow_left;
      a(r + 1, col_c(j)) += coupling * q * decay_left;
      a(r + 2, col_b(j)) -= coupling * grow_right;
      a(r + 2, col_c(j)) -= coupling * decay_right;
      a(r + 3, col_b(j)) -= coupling * q * grow_right;
      a(r + 3, col_c(j)) += coupling * q * decay_right;
    }
  }

  Eigen::PartialPivLU<Matrix> lu(a);
  const double rcond = lu.rcond();
  sol.condition = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
  if (!(rcond > 1e3 * std::numeric_limits<double>::epsilon()))
    throw Error(ErrorKind::singular_system,
                "matching system is singular (condition estimate " +
                    std::to_string(sol.condition) + ")");
  const Vector x = lu.solve(rhs);

  for (Eigen::Index i = 0; i < m; ++i) {
    const Channel& c = open[static_cast<std::size_t>(i)];
    const cplx unscale = std::exp(-c.kappa * d / 2.0);
    sol.reflection[c.order] = x(col_a(i));
    sol.transmission[c.order] = x(col_d(i));
    sol.interior_growing[c.order] = x(col_b(i)) * unscale;
    sol.interior_decaying[c.order] = x(col_c(i)) * unscale;
  }
  return sol;
}

/// Convenience: channel set plus full solve for a rectangular barrier.
inline ScatteringSolution solve(double energy, const BarrierSpec& barrier,
                                const PhysicalUnits& units = {},
                                std::optional<int> n_eff = std::nullopt) {
  return full_matching_solve(ChannelSet::build(energy, barrier, units, n_eff), barrier, units);
}

/// Time-averaged transmission: sum over every retained open sideband,
/// negative orders included.
inline double time_averaged_transmission(const ScatteringSolution& sol) {
  double sum = 0.0;
  for (const auto& [n, d] : sol.transmission)
    sum += sol.channels.open_channel(n).k.real() / sol.k0() * std::norm(d);
  return sum;
}

inline double default_observation_point(const ScatteringSolution& sol) {
  return sol.barrier.rect().width / 2.0 + 10.0 / sol.k0();
}

/// Transmitted current at x = L, time t, from the n = 0, +-1 waves,
/// normalised to the incident current.
inline double transmitted_current(const ScatteringSolution& sol, double position, double time) {
  const double k0 = sol.k0();
  const double omega = sol.barrier.modulation_frequency;
  cplx weighted = 0.0, plain = 0.0;
  for (int n = -1; n <= 1; ++n) {
    if (!sol.has(n)) continue;
    const double kn = sol.channels.open_channel(n).k.real();
    // The common factor exp(i(k0 L - E0 t)) cancels in the product.
    const cplx wave = sol.D(n) * std::exp(I * ((kn - k0) * position - n * omega * time));
    weighted += kn * wave;
    plain += wave;
  }
  return (std::conj(weighted) * plain).real() / k0;
}

struct VisibilityReading {
  double visibility = 0.0;   // from the extrema
  double closed_form = 0.0;  // amplitude expression
  double t_max = 0.0;        // current maximum
  double t_min = 0.0;        // current minimum
  double phase = 0.0;        // phi(L), radians
  double position = 0.0;     // L
};

namespace detail {

template <class F>
double refine_extremum(F&& f, double t, double step) {
  const double ym = f(t - step), y0 = f(t), yp = f(t + step);
  const double curvature = ym - 2.0 * y0 + yp;
  if (curvature == 0.0) return y0;
  const double offset = std::clamp(0.5 * (ym - yp) / curvature, -1.0, 1.0);
  const double refined = f(t + offset * step);
  // Keep whichever is more extreme in the direction of the curvature.
  return curvature < 0.0 ? std::max(refined, y0) : std::min(refined, y0);
}

}  // namespace detail

inline VisibilityReading visibility(const ScatteringSolution& sol,
                                    std::optional<double> position = std::nullopt,
                                    int samples = 2048) {
  VisibilityReading reading;
  reading.position = position ? *position : default_observation_point(sol);
  const double omega = sol.barrier.modulation_frequency;

  if (sol.has(1) || sol.has(-1)) {
    const double k0 = sol.k0();
    const cplx d0 = sol.D(0);
    double closed = 0.0;
    for (int n : {-1, 1})
      if (sol.has(n))
        closed += (k0 + sol.channels.open_channel(n).k.real()) * std::abs(sol.D(n) / d0);
    reading.closed_form = closed / k0;
  }

  if (!(omega > 0.0)) {
    const double value = transmitted_current(sol, reading.position, 0.0);
    reading.t_max = reading.t_min = value;
  } else {
    const double period = 2.0 * pi / omega;
    const double step = period / samples;
    auto current = [&](double t) { return transmitted_current(sol, reading.position, t); };
    int i_max = 0, i_min = 0;
    std::vector<double> values(static_cast<std::size_t>(samples));
    cplx harmonic = 0.0;
    for (int i = 0; i < samples; ++i) {
      const double t = i * step;
      values[static_cast<std::size_t>(i)] = current(t);
      harmonic += values[static_cast<std::size_t>(i)] * std::exp(I * omega * t);
      if (values[static_cast<std::size_t>(i)] > values[static_cast<std::size_t>(i_max)]) i_max = i;
      if (values[static_cast<std::size_t>(i)] < values[static_cast<std::size_t>(i_min)]) i_min = i;
    }
    reading.t_max = detail::refine_extremum(current, i_max * step, step);
    reading.t_min = detail::refine_extremum(current, i_min * step, step);
    reading.phase = std::arg(harmonic);
  }

  const double sum = reading.t_max + reading.t_min;
  if (sum == 0.0) throw Error(ErrorKind::degenerate, "T_max + T_min vanishes");
  reading.visibility = (reading.t_max - reading.t_min) / sum;
  return reading;
}

struct TauEstimate {
  double tau = 0.0;                // asinh inversion
  double tau_low_frequency = 0.0;  // hbar I / (2 V1)
  bool low_frequency_unreliable = false;  // omega * tau > 0.3
};

inline TauEstimate traversal_time_from_visibility(double visibility, double v1, double omega,
                                                  const PhysicalUnits& units = {}) {
  if (v1 == 0.0) throw Error(ErrorKind::division, "V1 = 0: visibility carries no time scale");
  if (!(visibility >= 0.0) || !(v1 > 0.0) || !(omega > 0.0))
    throw Error(ErrorKind::config, "need visibility >= 0, V1 > 0, omega > 0");
  TauEstimate est;
  est.tau = std::asinh(units.hbar * omega * visibility / (2.0 * v1)) / omega;
  est.tau_low_frequency = units.hbar * visibility / (2.0 * v1);
  est.low_frequency_unreliable = omega * est.tau > 0.3;
  return est;
}

/// (k_-1 T_+1 - k_+1 T_-1) / (k_-1 T_+1 + k_+1 T_-1); tends to tanh(omega tau)
/// for an opaque barrier.
inline double sideband_asymmetry(const ScatteringSolution& sol) {
  const double k0 = sol.k0();
  const double kp = sol.channels.open_channel(1).k.real();
  const double km = sol.channels.open_channel(-1).k.real();
  const double tp = kp / k0 * std::norm(sol.D(1));
  const double tm = km / k0 * std::norm(sol.D(-1));
  const double den = km * tp + kp * tm;
  if (den == 0.0) throw Error(ErrorKind::degenerate, "both sidebands carry no current");
  return (km * tp - kp * tm) / den;
}

}  // namespace traversal::sideband
