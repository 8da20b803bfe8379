#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "traversal/nelson.hpp"
#include "traversal/sideband.hpp"

using namespace traversal;
using namespace traversal::nelson;

namespace {

const WavePacketSpec free_packet{-10.0, 4.0, 1.0};

GridSpec free_grid() {
  GridSpec g;
  g.x_lo = -40.0;
  g.x_hi = 40.0;
  g.n_x = 4096;
  g.dt = 0.005;
  g.n_t = 2000;
  g.stride = 10;
  return g;
}

const WaveField& free_field() {
  static const WaveField field = propagate(free_packet, free_space(free_grid()), free_grid());
  return field;
}

struct BarrierRun {
  WavePacketSpec packet;
  GridSpec grid;
  WaveField field;
  VelocityField velocity;
};

const BarrierRun& barrier_run() {
  static const BarrierRun run = [] {
    const auto packet = WavePacketSpec::for_barrier(0.5, 1.0);
    const auto grid = GridSpec::for_run(packet, 1.0);
    auto field = propagate(packet, BarrierSpec::rectangular(1.0, 2.0), grid);
    VelocityField velocity(field, packet.wavenumber);
    return BarrierRun{packet, grid, std::move(field), std::move(velocity)};
  }();
  return run;
}

}  // namespace

TEST(FreeGaussian, NormalisedAtStart) {
  double sum = 0.0;
  for (double x = -60.0; x < 40.0; x += 0.01) sum += std::norm(free_gaussian(free_packet, x, 0.0)) * 0.01;
  EXPECT_NEAR(sum, 1.0, 1e-10);
}

TEST(Propagate, FreePacketMatchesClosedForm) {
  const auto& field = free_field();
  double worst = 0.0;
  for (int s = 0; s < field.snapshot_count(); s += 20) {
    const auto p = field.psi(s);
    for (int j = 0; j < field.grid().n_x; ++j)
      worst = std::max(worst, std::abs(p[static_cast<std::size_t>(j)] -
                                       free_gaussian(free_packet, field.grid().x(j), field.time(s))));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Propagate, FreePacketCentreMovesAtGroupVelocity) {
  const auto& field = free_field();
  const int last = field.snapshot_count() - 1;
  double mean = 0.0;
  const auto p = field.psi(last);
  for (int j = 0; j < field.grid().n_x; ++j)
    mean += field.grid().x(j) * std::norm(p[static_cast<std::size_t>(j)]) * field.grid().dx();
  const double moved = mean - free_packet.center;
  EXPECT_NEAR(moved / field.final_time(), 1.0, 1e-3);
}

TEST(Propagate, NormConserved) {
  EXPECT_LE(free_field().max_norm_drift(), 1e-8);
  EXPECT_LE(barrier_run().field.max_norm_drift(), 1e-8);
}

TEST(Propagate, TransmittedProbabilityNearStationaryValue) {
  const auto& run = barrier_run();
  const double transmitted = run.field.probability_right_of(1.0, run.field.snapshot_count() - 1);
  const double stationary = 1.0 / std::pow(std::cosh(2.0), 2);
  EXPECT_NEAR(transmitted / stationary, 1.0, 0.15);
}

TEST(Propagate, Errors) {
  auto grid = free_grid();
  grid.x_lo = -20.0;
  grid.x_hi = 20.0;
  try {
    propagate(free_packet, free_space(grid), grid);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::window);
  }
  EXPECT_THROW(propagate(free_packet, BarrierSpec::rectangular(1.0, 2.0, 0.1, 0.1), free_grid()), Error);
  EXPECT_THROW(propagate(WavePacketSpec{-2.0, 4.0, 1.0}, BarrierSpec::rectangular(1.0, 2.0), free_grid()),
               Error);
  auto coarse = free_grid();
  coarse.n_x = 32;
  EXPECT_THROW(propagate(free_packet, free_space(coarse), coarse), Error);
}

TEST(Propagate, BoundaryContactIsWindowError) {
  GridSpec grid = free_grid();
  grid.x_hi = 12.0;
  grid.n_x = 2048;
  grid.n_t = 4000;  // the packet reaches x = 10 and keeps going
  try {
    propagate(free_packet, free_space(grid), grid);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::window);
  }
}

TEST(Velocities, InitialGaussian) {
  const auto& field = free_field();
  const VelocityField vel(field, free_packet.wavenumber);
  for (double x : {-18.0, -10.0, -4.0}) {
    const auto v = velocities(vel, x, 0.0);
    EXPECT_NEAR(v.current, 1.0, 1e-5);
    EXPECT_NEAR(v.osmotic, -(x - free_packet.center) / (2.0 * 16.0), 1e-5);
    EXPECT_FALSE(v.regularized);
  }
}

TEST(Velocities, SpreadingGaussianMatchesClosedForm) {
  const auto& field = free_field();
  const VelocityField vel(field, free_packet.wavenumber);
  const cplx I{0.0, 1.0};
  double worst = 0.0;
  for (double t : {2.5, 5.0, 9.0}) {
    const double tau = t / (2.0 * 16.0);
    const double centre = free_packet.center + t;
    const double width = 4.0 * std::sqrt(1.0 + tau * tau);
    for (double x = centre - 3.0 * width; x <= centre + 3.0 * width; x += 0.137) {
      const cplx log_derivative = -(x - centre) / (2.0 * 16.0 * (1.0 + I * tau)) + I;
      const auto v = velocities(vel, x, t);
      worst = std::max({worst, std::abs(v.osmotic - log_derivative.real()),
                        std::abs(v.current - log_derivative.imag())});
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Velocities, PlaneWaveRegion) {
  // Far to the right of a wide packet the wave is locally a plane wave.
  const WavePacketSpec wide{0.0, 40.0, 1.0};
  GridSpec g;
  g.x_lo = -400.0;
  g.x_hi = 400.0;
  g.n_x = 8192;
  g.dt = 0.01;
  g.n_t = 10;
  g.stride = 10;
  const auto field = propagate(wide, free_space(g), g);
  const VelocityField vel(field, 1.0);
  const auto v = velocities(vel, 0.0, 0.05);
  EXPECT_NEAR(v.current, 1.0, 1e-4);
  EXPECT_NEAR(v.osmotic, 0.0, 1e-4);
}

TEST(Noise, Moments) {
  const double h = 0.01;
  NoiseSource noise(path_seed(42, 0), h, {});
  const int n = 1000000;
  std::vector<double> draws(n);
  for (auto& d : draws) d = noise();
  double mean = 0.0;
  for (double d : draws) mean += d;
  mean /= n;
  double var = 0.0, lag = 0.0;
  for (int i = 0; i < n; ++i) var += (draws[i] - mean) * (draws[i] - mean);
  var /= n - 1;
  for (int i = 1; i < n; ++i) lag += (draws[i] - mean) * (draws[i - 1] - mean);
  const double rho = lag / ((n - 1) * var);
  EXPECT_LE(std::abs(mean), 3.0 * std::sqrt(h / n));
  EXPECT_NEAR(var / h, 1.0, 0.01);
  EXPECT_LE(std::abs(rho), 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Noise, SubstreamsDiffer) {
  EXPECT_NE(path_seed(1, 0), path_seed(1, 1));
  EXPECT_NE(path_seed(1, 0), path_seed(2, 0));
  EXPECT_EQ(path_seed(7, 3), path_seed(7, 3));
}

TEST(Dwell, Definitions) {
  const BarrierRegion region{-1.0, 1.0};
  const std::vector<double> traj{-2.0, -0.5, 0.0, 0.9, 2.0, 3.0};
  EXPECT_EQ(dwell_steps(traj, region), 3);
  EXPECT_NEAR(dwell_steps(traj, region) * 0.01, 0.03, 1e-15);
  for (std::size_t cut = 0; cut < traj.size(); ++cut) {
    const std::span<const double> all(traj);
    EXPECT_EQ(dwell_steps(all.first(cut + 1), region) + dwell_steps(all.subspan(cut), region),
              dwell_steps(all, region));
  }
}

TEST(Dwell, Statistics) {
  PathEnsemble single;
  SamplePath p;
  p.transmitted = true;
  p.dwell_steps = 3;
  p.dwell_time = 0.03;
  single.paths = {p};
  const auto one = tau_nelson(single);
  EXPECT_DOUBLE_EQ(one.mean, 0.03);
  EXPECT_EQ(one.std_error, 0.0);
  EXPECT_EQ(one.n_used, 1u);

  PathEnsemble pair;
  SamplePath a = p, b = p;
  a.dwell_time = 1.0;
  b.dwell_time = 3.0;
  pair.paths = {a, b};
  const auto two = tau_nelson(pair);
  EXPECT_DOUBLE_EQ(two.mean, 2.0);
  EXPECT_DOUBLE_EQ(two.std_error, 1.0);

  PathEnsemble none;
  p.transmitted = false;
  none.paths = {p};
  try {
    tau_nelson(none);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_ensemble);
  }
}

TEST(ForwardPaths, TrackFreeDensity) {
  const auto& field = free_field();
  const VelocityField vel(field, 1.0);
  PathSettings settings;
  settings.n_paths = 20000;
  settings.step = 0.01;
  settings.seed = 11;
  settings.record_stride = 500;
  const auto ensemble = forward_paths(field, vel, {100.0, 101.0}, settings);
  EXPECT_EQ(ensemble.used(), 20000u);
  for (std::size_t k = 0; k < ensemble.paths.front().trajectory.size(); ++k) {
    std::vector<double> xs;
    for (const auto& p : ensemble.paths) xs.push_back(p.trajectory[k]);
    const int snapshot = static_cast<int>(k * 500 * 0.01 / field.grid().snapshot_dt() + 0.5);
    EXPECT_LE(ks_distance(xs, GridSampler(field.grid(), density(field, snapshot))), 0.02) << k;
  }
}

TEST(ForwardPaths, DeterministicAcrossThreadCounts) {
  const auto& field = free_field();
  const VelocityField vel(field, 1.0);
  PathSettings settings;
  settings.n_paths = 64;
  settings.step = 0.01;
  settings.seed = 5;
  settings.record_stride = 100;
  const auto a = forward_paths(field, vel, {-1.0, 1.0}, settings);
  settings.threads = 3;
  const auto b = forward_paths(field, vel, {-1.0, 1.0}, settings);
  for (std::size_t i = 0; i < a.paths.size(); ++i) {
    EXPECT_EQ(a.paths[i].trajectory, b.paths[i].trajectory);
    EXPECT_EQ(a.paths[i].dwell_steps, b.paths[i].dwell_steps);
  }
}

TEST(ForwardPaths, StepMustDivideSnapshots) {
  const auto& field = free_field();
  const VelocityField vel(field, 1.0);
  PathSettings settings;
  settings.step = 0.03;
  EXPECT_THROW(forward_paths(field, vel, {-1.0, 1.0}, settings), Error);
}

TEST(ForwardPaths, BarrierTransmissionMatchesField) {
  const auto& run = barrier_run();
  PathSettings settings;
  settings.n_paths = 4000;
  settings.step = 0.01;
  settings.seed = 3;
  const auto ensemble = forward_paths(run.field, run.velocity, {-1.0, 1.0}, settings);
  const double fraction = ensemble.transmitted_fraction();
  const double expected = run.field.probability_right_of(1.0, run.field.snapshot_count() - 1);
  const double se = std::sqrt(expected * (1.0 - expected) / static_cast<double>(ensemble.used()));
  EXPECT_NEAR(fraction, expected, 3.0 * se);
  EXPECT_EQ(ensemble.excluded_grid(), 0u);
}

TEST(BackwardPaths, EndpointsFollowTransmittedLobe) {
  const auto& field = free_field();
  const VelocityField vel(field, 1.0);
  PathSettings settings;
  settings.n_paths = 50000;
  settings.step = 0.05;
  settings.seed = 9;
  settings.record_stride = 1000000;  // keeps only the two ends
  const BarrierRegion region{-3.0, -1.0};
  const auto ensemble = backward_transmitted_paths(field, vel, region, settings);
  std::vector<double> ends;
  for (const auto& p : ensemble.paths) {
    ends.push_back(p.trajectory.back());
    EXPECT_TRUE(p.transmitted);
  }
  std::vector<double> lobe = density(field, field.snapshot_count() - 1);
  for (int j = 0; j < field.grid().n_x; ++j)
    if (!(field.grid().x(j) > region.right)) lobe[static_cast<std::size_t>(j)] = 0.0;
  EXPECT_LE(ks_distance(ends, GridSampler(field.grid(), lobe)), 0.01);
}

TEST(BackwardPaths, InsufficientTransmission) {
  const auto& field = free_field();
  const VelocityField vel(field, 1.0);
  try {
    backward_transmitted_paths(field, vel, {30.0, 35.0}, PathSettings{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::insufficient_transmission);
  }
}

TEST(BackwardPaths, BarrierDwellIsPositiveAndFinite) {
  const auto& run = barrier_run();
  PathSettings settings;
  settings.n_paths = 500;
  settings.seed = 17;
  const auto stats = tau_nelson(backward_transmitted_paths(run.field, run.velocity, {-1.0, 1.0}, settings));
  EXPECT_GT(stats.mean, 0.0);
  EXPECT_TRUE(std::isfinite(stats.mean));
  EXPECT_GT(stats.crossing_mean, 0.0);
  EXPECT_LT(stats.crossing_mean, stats.mean);
}

TEST(Persistence, FieldRoundTrip) {
  GridSpec g = free_grid();
  g.n_t = 20;
  const auto field = propagate(free_packet, free_space(g), g);
  const std::string stem = testing::TempDir() + "field";
  save_field(field, stem);
  const auto back = load_field(stem);
  ASSERT_EQ(back.raw().size(), field.raw().size());
  EXPECT_TRUE(std::equal(back.raw().begin(), back.raw().end(), field.raw().begin()));
  EXPECT_EQ(back.grid().stride, g.stride);
  std::ifstream bin(stem + ".bin", std::ios::binary | std::ios::ate);
  EXPECT_EQ(static_cast<std::size_t>(bin.tellg()), field.raw().size() * 16);
  std::remove((stem + ".bin").c_str());
  std::remove((stem + ".json").c_str());
  EXPECT_THROW(load_field(stem), Error);
}

TEST(Persistence, EnsembleCsv) {
  const auto& field = free_field();
  const VelocityField vel(field, 1.0);
  PathSettings settings;
  settings.n_paths = 3;
  settings.step = 0.05;
  settings.record_stride = 50;
  const auto ensemble = forward_paths(field, vel, {-12.0, -8.0}, settings);
  const std::string path = testing::TempDir() + "ensemble.csv";
  write_ensemble_csv(ensemble, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "path_id,seed,transmitted,dwell_time");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 3);
  write_trajectory_csv(ensemble, 50, path);
  std::ifstream traj(path);
  std::getline(traj, header);
  EXPECT_EQ(header, "path_id,t,x");
  std::remove(path.c_str());
}
