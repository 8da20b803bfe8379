// traversal_lab: scans, current traces, time-averaged transmission, single
// Nelson runs and the acceptance suite from one binary.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "traversal/acceptance.hpp"
#include "traversal/harness.hpp"

namespace fs = std::filesystem;
using namespace traversal;

namespace {

struct GlobalFlags {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  bool verbose = false;
};

harness::Config load_config(const GlobalFlags& flags) {
  harness::Config cfg;
  if (!flags.config.empty()) cfg = harness::Config::load(flags.config);
  cfg.require_known(harness::known_keys());
  return cfg;
}

fs::path output_dir(const GlobalFlags& flags) {
  const fs::path dir(flags.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorKind::io, "cannot create output directory " + flags.out);
  return dir;
}

std::string stem_of(const GlobalFlags& flags, const std::string& fallback) {
  return flags.config.empty() ? fallback : fs::path(flags.config).stem().string();
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out.imbue(std::locale::classic());
  out.precision(12);
  return out;
}

int run_scan(const GlobalFlags& flags) {
  const auto cfg = load_config(flags);
  auto spec = harness::scan_from(cfg);
  if (flags.seed) spec.fixed.nelson.seed = *flags.seed;
  const auto rows = harness::run_scan(spec, harness::resolve_threads(flags.threads));
  const auto dir = output_dir(flags);
  const std::string stem = stem_of(flags, "scan");
  harness::emit_csv(rows, (dir / (stem + ".csv")).string());
  harness::emit_plot_script(rows, (dir / (stem + ".gp")).string(), stem + ".csv", spec.axis);
  std::cout << "wrote " << (dir / (stem + ".csv")).string() << " and " << stem << ".gp (" << rows.size()
            << " rows)\n";
  if (flags.verbose)
    for (const auto& r : rows)
      if (!r.flags.empty()) std::cout << "  axis " << r.axis << ": " << r.flags << '\n';
  return 0;
}

int run_current(const GlobalFlags& flags) {
  const auto cfg = load_config(flags);
  const auto f = harness::fixed_from(cfg);
  const int samples = static_cast<int>(cfg.integer("current.samples", 256));
  if (samples < 2) throw Error(ErrorKind::config, "current.samples must be >= 2");
  const auto sol = sideband::solve(f.energy, BarrierSpec::rectangular(f.height, f.width, f.v1, f.omega), f.units,
                                   f.n_eff);
  const auto reading = sideband::visibility(sol);
  const double period = 2.0 * pi / f.omega;
  const auto path = output_dir(flags) / (stem_of(flags, "current") + "_current.csv");
  auto out = open_csv(path);
  out << "t,T\n";
  for (int i = 0; i <= samples; ++i) {
    const double t = period * i / samples;
    out << t << ',' << sideband::transmitted_current(sol, reading.position, t) << '\n';
  }
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
  const auto tau = sideband::traversal_time_from_visibility(reading.visibility, f.v1, f.omega, f.units);
  std::cout << "L " << reading.position << "  T_max " << reading.t_max << "  T_min " << reading.t_min
            << "  I_vis " << reading.visibility << "  tau_vis " << tau.tau << "\nwrote " << path.string()
            << '\n';
  if (flags.verbose)
    for (const auto& w : sol.warnings) std::cout << "  warning: " << w << '\n';
  return 0;
}

int run_tbar(const GlobalFlags& flags) {
  const auto cfg = load_config(flags);
  const auto f = harness::fixed_from(cfg);
  const double lo = cfg.number("tbar.omega_lo", 0.01), hi = cfg.number("tbar.omega_hi", 0.5);
  const int n = static_cast<int>(cfg.integer("tbar.n", 50));
  if (!(lo > 0.0 && lo < hi) || n < 2) throw Error(ErrorKind::config, "tbar needs 0 < omega_lo < omega_hi, n >= 2");
  const double static_t =
      std::norm(sideband::static_coefficients(f.energy, BarrierSpec::rectangular(f.height, f.width), f.units)
                    .transmission);
  const auto path = output_dir(flags) / (stem_of(flags, "tbar") + "_tbar.csv");
  auto out = open_csv(path);
  out << "omega,T_bar,T_static,flags\n";
  for (int i = 0; i < n; ++i) {
    const double omega = lo + (hi - lo) * i / (n - 1);
    out << omega << ',';
    try {
      const auto sol =
          sideband::solve(f.energy, BarrierSpec::rectangular(f.height, f.width, f.v1, omega), f.units, f.n_eff);
      out << sideband::time_averaged_transmission(sol) << ',' << static_t << ','
          << (sol.channels.perturbed() ? "energy-perturbed" : "") << '\n';
    } catch (const Error& e) {
      out << ',' << static_t << ",error:" << to_string(e.kind()) << '\n';
    }
  }
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
  std::cout << "wrote " << path.string() << '\n';
  return 0;
}

int run_nelson(const GlobalFlags& flags) {
  const auto cfg = load_config(flags);
  const auto f = harness::fixed_from(cfg);
  const auto& s = f.nelson;
  const std::uint64_t seed = flags.seed ? *flags.seed : s.seed;
  const int dump = static_cast<int>(cfg.integer("nelson.dump_paths", 10));
  const bool save = cfg.integer("nelson.save_field", 0) != 0;

  auto packet = nelson::WavePacketSpec::for_barrier(f.energy, f.width / 2.0, f.units);
  if (s.sigma) {
    packet.width = *s.sigma;
    packet.center = -(f.width / 2.0 + 6.0 * packet.width);
  }
  auto grid = nelson::GridSpec::for_run(packet, f.width / 2.0, f.units);
  const double duration = grid.n_t * grid.dt;
  grid.n_x = s.n_x;
  grid.dt = s.dt;
  grid.stride = s.stride;
  grid.n_t = static_cast<int>(std::ceil(duration / (s.dt * s.stride))) * s.stride;
  const auto field = nelson::propagate(packet, BarrierSpec::rectangular(f.height, f.width), grid, f.units);
  const nelson::VelocityField velocity(field, packet.wavenumber);
  const nelson::BarrierRegion region{-f.width / 2.0, f.width / 2.0};

  nelson::PathSettings settings;
  settings.n_paths = s.paths;
  settings.step = s.step;
  settings.seed = seed;
  settings.threads = harness::resolve_threads(flags.threads);
  const auto ensemble = nelson::backward_transmitted_paths(field, velocity, region, settings);
  const auto stats = nelson::tau_nelson(ensemble);

  const auto dir = output_dir(flags);
  const std::string stem = stem_of(flags, "nelson");
  nelson::write_ensemble_csv(ensemble, (dir / (stem + "_paths.csv")).string());
  if (dump > 0) {
    // Path i depends only on (seed, i), so a short rerun reproduces the first paths.
    auto sample = settings;
    sample.n_paths = std::min(dump, s.paths);
    sample.record_stride = 20;
    const auto traced = nelson::backward_transmitted_paths(field, velocity, region, sample);
    nelson::write_trajectory_csv(traced, sample.record_stride, (dir / (stem + "_trajectories.csv")).string());
  }
  if (save) nelson::save_field(field, (dir / (stem + "_field")).string());

  std::cout << "tau_Nelson " << stats.mean << " +- " << stats.std_error << " (" << stats.n_used << " of "
            << ensemble.paths.size() << " paths used, seed " << seed << ")\n"
            << "final-crossing time " << stats.crossing_mean << "\n"
            << "transmitted probability " << field.probability_right_of(region.right, field.snapshot_count() - 1)
            << "\nwrote " << (dir / (stem + "_paths.csv")).string() << '\n';
  if (flags.verbose)
    std::cout << "  excluded (grid) " << ensemble.excluded_grid() << ", excluded (node clamp) "
              << ensemble.excluded_clamp() << ", clamped cells " << ensemble.clamp_events << ", norm drift "
              << field.max_norm_drift() << '\n';
  return 0;
}

int run_check(const GlobalFlags& flags, const std::string& only) {
  if (!flags.config.empty()) load_config(flags);
  acceptance::Options options;
  options.threads = harness::resolve_threads(flags.threads);
  if (flags.seed) options.seed_offset = *flags.seed;
  const auto ids = acceptance::parse_selection(only);
  return acceptance::run_suite(ids, options, std::cout, flags.verbose) == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"traversal_lab: tunnelling traversal-time scans and checks"};
  app.require_subcommand(1);
  GlobalFlags flags;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  auto* seed_opt = app.add_option("--seed", seed, "master seed (U64)");
  auto* threads_opt = app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--config", flags.config, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--out", flags.out, "output directory");
  app.add_flag("-v,--verbose", flags.verbose, "more output");
  app.fallthrough();

  auto* scan = app.add_subcommand("scan", "run a parameter scan, write CSV and gnuplot script");
  auto* current = app.add_subcommand("current", "transmitted current over one period");
  auto* tbar = app.add_subcommand("tbar", "time-averaged transmission versus omega");
  auto* nelson_cmd = app.add_subcommand("nelson", "single Nelson run with trajectory dump");
  auto* check = app.add_subcommand("check", "run the acceptance suite");
  std::string only;
  check->add_option("--only", only, "criteria, e.g. 1,2,3 or 7-9");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (*seed_opt) flags.seed = seed;
  if (*threads_opt) flags.threads = threads;

  try {
    if (*scan) return run_scan(flags);
    if (*current) return run_current(flags);
    if (*tbar) return run_tbar(flags);
    if (*nelson_cmd) return run_nelson(flags);
    if (*check) return run_check(flags, only);
  } catch (const Error& e) {
    std::cerr << "traversal_lab: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "traversal_lab: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
