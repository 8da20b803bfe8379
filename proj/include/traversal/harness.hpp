#pragma once

// Configuration, parameter scans over the three traversal-time estimates,
// and CSV / gnuplot emission.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <locale>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "traversal/error.hpp"
#include "traversal/nelson.hpp"
#include "traversal/physics.hpp"
#include "traversal/sideband.hpp"
#include "traversal/wkb.hpp"

namespace traversal::harness {

// ---------------------------------------------------------------------------
// Config: flat "section.key = value" lines, '#' comments.

class Config {
 public:
  static Config parse(std::istream& in, const std::string& origin = "<config>") {
    Config cfg;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
      ++row;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw Error(ErrorKind::config, origin + ":" + std::to_string(row) + ": expected key = value");
      const auto key = trim(trimmed.substr(0, eq));
      const auto value = trim(trimmed.substr(eq + 1));
      if (key.empty()) throw Error(ErrorKind::config, origin + ":" + std::to_string(row) + ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read config " + path);
    return parse(in, path);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  double number(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : to_number(key, it->second);
  }
  std::optional<double> number(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return to_number(key, it->second);
  }
  long integer(const std::string& key, long fallback) const {
    const double v = number(key, static_cast<double>(fallback));
    if (v != std::floor(v)) throw Error(ErrorKind::config, key + " must be an integer");
    return static_cast<long>(v);
  }
  std::uint64_t unsigned64(const std::string& key, std::uint64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_u64(key, it->second);
  }
  static std::uint64_t parse_u64(const std::string& key, const std::string& text) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      if (text.empty() || text[0] == '-') throw std::invalid_argument(text);
      v = std::stoull(text, &used, 10);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != text.size())
      throw Error(ErrorKind::config, key + " = '" + text + "' is not an unsigned 64-bit integer");
    return v;
  }
  std::string text(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  /// Rejects keys outside `known` so typos do not silently fall back to defaults.
  void require_known(const std::set<std::string>& known) const {
    for (const auto& [key, value] : values_)
      if (!known.count(key)) throw Error(ErrorKind::config, "unknown config key '" + key + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static double to_number(const std::string& key, const std::string& text) {
    std::istringstream in(text);
    in.imbue(std::locale::classic());
    double v = 0.0;
    if (!(in >> v) || !(in >> std::ws).eof())
      throw Error(ErrorKind::config, key + " = '" + text + "' is not a number");
    return v;
  }

  std::map<std::string, std::string> values_;
};

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "units.mass",      "units.hbar",       "incident.E",       "barrier.V0",
      "barrier.d",       "barrier.V1",       "barrier.omega",    "sideband.n_eff",
      "scan.axis",       "scan.lo",          "scan.hi",          "scan.n",
      "scan.methods",    "nelson.paths",     "nelson.step",      "nelson.seed",
      "nelson.n_x",      "nelson.dt",        "nelson.stride",    "nelson.sigma",
      "nelson.budget_seconds", "nelson.dump_paths", "nelson.save_field",
      "current.samples", "tbar.omega_lo",    "tbar.omega_hi",    "tbar.n"};
  return keys;
}

// ---------------------------------------------------------------------------
// Scan specification

enum class Axis { width, height_ratio, frequency };

inline Axis parse_axis(const std::string& s) {
  if (s == "width") return Axis::width;
  if (s == "height_ratio") return Axis::height_ratio;
  if (s == "frequency") return Axis::frequency;
  throw Error(ErrorKind::config, "scan.axis must be width, height_ratio or frequency, got '" + s + "'");
}

struct Methods {
  bool vis = false;
  bool wkb = false;
  bool nelson = false;
  bool asymmetry = false;

  bool any() const { return vis || wkb || nelson || asymmetry; }
};

inline Methods parse_methods(const std::string& list) {
  Methods m;
  std::stringstream in(list);
  for (std::string item; std::getline(in, item, ',');) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (item.empty()) continue;
    if (item == "vis") m.vis = true;
    else if (item == "wkb") m.wkb = true;
    else if (item == "nelson") m.nelson = true;
    else if (item == "asymmetry") m.asymmetry = true;
    else throw Error(ErrorKind::config, "unknown method '" + item + "'");
  }
  return m;
}

struct NelsonSettings {
  int paths = 5000;
  double step = 0.005;
  std::uint64_t seed = 1;
  int n_x = 4096;
  double dt = 0.01;
  int stride = 5;
  std::optional<double> sigma;   // default 10 / k0
  double budget_seconds = 0.0;   // 0: no budget
};

/// Everything held fixed while one axis varies.
struct FixedParameters {
  PhysicalUnits units;
  double energy = 0.5;
  double height = 1.0;   // V0
  double width = 2.0;    // d
  double v1 = 0.01;
  double omega = 0.05;
  std::optional<int> n_eff;
  NelsonSettings nelson;
};

struct ScanSpec {
  Axis axis = Axis::width;
  double lo = 0.5;
  double hi = 4.0;
  int n_points = 8;
  FixedParameters fixed;
  Methods methods;

  double value(int i) const { return lo + (hi - lo) * i / (n_points - 1); }

  void validate() const {
    if (!methods.any()) throw Error(ErrorKind::config, "scan requests no methods");
    if (!(lo < hi) || n_points < 2) throw Error(ErrorKind::config, "scan needs lo < hi and n >= 2");
    fixed.units.validate();
    if (!(fixed.energy > 0.0)) throw Error(ErrorKind::config, "incident.E must be positive");
    if (!(fixed.height > 0.0) || !(fixed.width > 0.0))
      throw Error(ErrorKind::config, "barrier.V0 and barrier.d must be positive");
    if ((methods.vis || methods.asymmetry) &&
        !(fixed.v1 > 0.0 && (fixed.omega > 0.0 || axis == Axis::frequency)))
      throw Error(ErrorKind::config, "vis/asymmetry need barrier.V1 > 0 and barrier.omega > 0");
    if (axis == Axis::frequency && !(lo > 0.0))
      throw Error(ErrorKind::config, "frequency scans need lo > 0");
    if (axis == Axis::height_ratio && !(lo > 0.0))
      throw Error(ErrorKind::config, "height_ratio scans need lo > 0");
    if (axis == Axis::width && !(lo > 0.0)) throw Error(ErrorKind::config, "width scans need lo > 0");
    if (methods.nelson && fixed.nelson.paths < 1)
      throw Error(ErrorKind::config, "nelson.paths must be positive");
  }
};

inline FixedParameters fixed_from(const Config& cfg) {
  FixedParameters f;
  f.units = {cfg.number("units.mass", 1.0), cfg.number("units.hbar", 1.0)};
  f.energy = cfg.number("incident.E", f.energy);
  f.height = cfg.number("barrier.V0", f.height);
  f.width = cfg.number("barrier.d", f.width);
  f.v1 = cfg.number("barrier.V1", f.v1);
  f.omega = cfg.number("barrier.omega", f.omega);
  if (cfg.has("sideband.n_eff")) f.n_eff = static_cast<int>(cfg.integer("sideband.n_eff", 0));
  auto& n = f.nelson;
  n.paths = static_cast<int>(cfg.integer("nelson.paths", n.paths));
  n.step = cfg.number("nelson.step", n.step);
  n.seed = cfg.unsigned64("nelson.seed", n.seed);
  n.n_x = static_cast<int>(cfg.integer("nelson.n_x", n.n_x));
  n.dt = cfg.number("nelson.dt", n.dt);
  n.stride = static_cast<int>(cfg.integer("nelson.stride", n.stride));
  n.sigma = cfg.number("nelson.sigma");
  n.budget_seconds = cfg.number("nelson.budget_seconds", 0.0);
  return f;
}

inline ScanSpec scan_from(const Config& cfg) {
  cfg.require_known(known_keys());
  ScanSpec spec;
  spec.axis = parse_axis(cfg.text("scan.axis", "width"));
  spec.lo = cfg.number("scan.lo", spec.lo);
  spec.hi = cfg.number("scan.hi", spec.hi);
  spec.n_points = static_cast<int>(cfg.integer("scan.n", spec.n_points));
  spec.methods = parse_methods(cfg.text("scan.methods", "vis,wkb,asymmetry"));
  spec.fixed = fixed_from(cfg);
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Scan rows

struct ScanRow {
  double axis = 0.0;
  std::optional<double> tau_vis;
  std::optional<double> tau_wkb;
  std::optional<double> tau_nelson;
  std::optional<double> tau_nelson_stderr;
  std::optional<double> i_vis;
  std::optional<double> t_bar;
  std::optional<double> asymmetry;
  std::string flags;

  void flag(const std::string& token) {
    if (!flags.empty()) flags += ';';
    flags += token;
  }
};

/// Parameters at one scan point.
struct PointParameters {
  double energy, height, width, v1, omega;
};

inline PointParameters point_at(const ScanSpec& spec, double value) {
  const auto& f = spec.fixed;
  PointParameters p{f.energy, f.height, f.width, f.v1, f.omega};
  switch (spec.axis) {
    case Axis::width: p.width = value; break;
    case Axis::height_ratio: p.height = value * f.energy; break;
    case Axis::frequency: p.omega = value; break;
  }
  return p;
}

/// Backward-method tau_Nelson for a static rectangular barrier.
inline nelson::DwellStatistics nelson_point(const PointParameters& p, const NelsonSettings& s,
                                            const PhysicalUnits& units, std::uint64_t seed) {
  auto packet = nelson::WavePacketSpec::for_barrier(p.energy, p.width / 2.0, units);
  if (s.sigma) {
    packet.width = *s.sigma;
    packet.center = -(p.width / 2.0 + 6.0 * packet.width);
  }
  auto grid = nelson::GridSpec::for_run(packet, p.width / 2.0, units);
  grid.n_x = s.n_x;
  grid.dt = s.dt;
  grid.stride = s.stride;
  const auto reference = nelson::GridSpec::for_run(packet, p.width / 2.0, units);
  grid.n_t = static_cast<int>(std::ceil(reference.n_t * reference.dt / (s.dt * s.stride))) * s.stride;
  const auto field = nelson::propagate(packet, BarrierSpec::rectangular(p.height, p.width), grid, units);
  const nelson::VelocityField velocity(field, packet.wavenumber);
  nelson::PathSettings settings;
  settings.n_paths = s.paths;
  settings.step = s.step;
  settings.seed = seed;
  return nelson::tau_nelson(nelson::backward_transmitted_paths(
      field, velocity, {-p.width / 2.0, p.width / 2.0}, settings));
}

inline std::string error_flag(const std::string& method, const Error& e) {
  return method + "-error:" + std::string(to_string(e.kind()));
}

inline ScanRow scan_point(const ScanSpec& spec, int index,
                          std::chrono::steady_clock::time_point deadline, bool has_deadline) {
  const double value = spec.value(index);
  const auto p = point_at(spec, value);
  const auto& units = spec.fixed.units;
  ScanRow row;
  row.axis = value;

  if (spec.methods.vis || spec.methods.asymmetry) {
    try {
      const auto barrier = BarrierSpec::rectangular(p.height, p.width, p.v1, p.omega);
      const auto sol = sideband::solve(p.energy, barrier, units, spec.fixed.n_eff);
      if (sol.channels.perturbed()) row.flag("energy-perturbed");
      row.t_bar = sideband::time_averaged_transmission(sol);
      if (spec.methods.vis) {
        const auto reading = sideband::visibility(sol);
        const auto tau = sideband::traversal_time_from_visibility(reading.visibility, p.v1, p.omega, units);
        row.i_vis = reading.visibility;
        row.tau_vis = tau.tau;
        if (tau.low_frequency_unreliable) row.flag("low-frequency-form-unreliable");
      }
      if (spec.methods.asymmetry) row.asymmetry = sideband::sideband_asymmetry(sol);
    } catch (const Error& e) {
      row.flag(error_flag("vis", e));
    }
  }

  if (spec.methods.wkb) {
    try {
      const auto profile = rectangular_profile(p.height, p.width);
      row.tau_wkb = wkb::wkb_traversal_time(profile, p.energy, units);
      const auto w = wkb::wkb_visibility(profile, p.energy, p.v1, p.omega, units);
      if (w.damping.at(0) > wkb::opaque_warning_threshold) row.flag("not-opaque");
      if (p.v1 / (units.hbar * p.omega) > wkb::modulation_warning_threshold) row.flag("large-modulation");
    } catch (const Error& e) {
      row.flag(error_flag("wkb", e));
    }
  }

  if (spec.methods.nelson) {
    if (has_deadline && std::chrono::steady_clock::now() > deadline) {
      row.flag("nelson-skipped:budget");
    } else {
      try {
        const auto stats = nelson_point(p, spec.fixed.nelson, units,
                                        nelson::path_seed(spec.fixed.nelson.seed,
                                                          static_cast<std::uint64_t>(index)));
        row.tau_nelson = stats.mean;
        row.tau_nelson_stderr = stats.std_error;
      } catch (const Error& e) {
        row.flag(error_flag("nelson", e));
      }
    }
  }
  return row;
}

/// Thread count from an explicit value, else TRAVERSAL_LAB_THREADS, else 1.
inline unsigned resolve_threads(std::optional<unsigned> requested) {
  if (requested && *requested > 0) return *requested;
  if (const char* env = std::getenv("TRAVERSAL_LAB_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return 1;
}

inline std::vector<ScanRow> run_scan(const ScanSpec& spec, unsigned threads = 1) {
  spec.validate();
  std::vector<ScanRow> rows(static_cast<std::size_t>(spec.n_points));
  const bool has_deadline = spec.fixed.nelson.budget_seconds > 0.0;
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(spec.fixed.nelson.budget_seconds));
  nelson::detail::parallel_for(spec.n_points, threads, [&](int i) {
    rows[static_cast<std::size_t>(i)] = scan_point(spec, i, deadline, has_deadline);
  });

  if (spec.axis == Axis::width && spec.methods.wkb)
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i].tau_wkb && rows[i - 1].tau_wkb && !(*rows[i].tau_wkb > *rows[i - 1].tau_wkb))
        throw Error(ErrorKind::accuracy, "tau_wkb is not increasing along the width scan");
  return rows;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* csv_header =
    "axis,tau_vis,tau_wkb,tau_nelson,tau_nelson_stderr,I_vis,T_bar,asymmetry,flags";

inline std::string format_number(double v) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out.precision(12);
  out << v;
  return out.str();
}

inline std::string to_csv(const std::vector<ScanRow>& rows) {
  std::string text = std::string(csv_header) + "\n";
  const auto cell = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  for (const auto& r : rows) {
    text += format_number(r.axis) + ',' + cell(r.tau_vis) + ',' + cell(r.tau_wkb) + ',' +
            cell(r.tau_nelson) + ',' + cell(r.tau_nelson_stderr) + ',' + cell(r.i_vis) + ',' +
            cell(r.t_bar) + ',' + cell(r.asymmetry) + ',';
    if (r.flags.find_first_of(",\"\n") != std::string::npos) {
      std::string quoted = "\"";
      for (char c : r.flags) quoted += (c == '"') ? std::string("\"\"") : std::string(1, c);
      text += quoted + "\"";
    } else {
      text += r.flags;
    }
    text += '\n';
  }
  return text;
}

inline void emit_csv(const std::vector<ScanRow>& rows, const std::string& path) {
  if (rows.empty()) throw Error(ErrorKind::config, "no rows to write");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out << to_csv(rows);
  if (!out) throw Error(ErrorKind::io, "write failed for " + path);
}

inline std::vector<ScanRow> parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != csv_header)
    throw Error(ErrorKind::io, "scan CSV header mismatch");
  std::vector<ScanRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cell += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        cells.push_back(cell);
        cell.clear();
      } else {
        cell += c;
      }
    }
    cells.push_back(cell);
    if (cells.size() != 9) throw Error(ErrorKind::io, "scan CSV row has " + std::to_string(cells.size()) + " fields");
    const auto number = [](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      std::istringstream is(s);
      is.imbue(std::locale::classic());
      double v = 0.0;
      if (!(is >> v)) throw Error(ErrorKind::io, "bad number '" + s + "' in scan CSV");
      return v;
    };
    ScanRow r;
    r.axis = number(cells[0]).value();
    r.tau_vis = number(cells[1]);
    r.tau_wkb = number(cells[2]);
    r.tau_nelson = number(cells[3]);
    r.tau_nelson_stderr = number(cells[4]);
    r.i_vis = number(cells[5]);
    r.t_bar = number(cells[6]);
    r.asymmetry = number(cells[7]);
    r.flags = cells[8];
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Plot script

inline std::string axis_label(Axis axis) {
  switch (axis) {
    case Axis::width: return "barrier width d";
    case Axis::height_ratio: return "V0 / E0";
    case Axis::frequency: return "omega";
  }
  return "axis";
}

/// gnuplot script overlaying the tau columns present in `rows`, with error
/// bars on tau_Nelson.
inline std::string plot_script(const std::vector<ScanRow>& rows, const std::string& csv_name,
                               Axis axis) {
  const auto present = [&](auto member) {
    return std::any_of(rows.begin(), rows.end(), [&](const ScanRow& r) { return (r.*member).has_value(); });
  };
  std::vector<std::string> series;
  if (present(&ScanRow::tau_vis))
    series.push_back("'" + csv_name + "' every ::1 using 1:2 with linespoints title 'tau_vis'");
  if (present(&ScanRow::tau_wkb))
    series.push_back("'" + csv_name + "' every ::1 using 1:3 with linespoints title 'tau_WKB'");
  if (present(&ScanRow::tau_nelson))
    series.push_back("'" + csv_name + "' every ::1 using 1:4:5 with yerrorbars title 'tau_Nelson'");
  std::string text = "# gnuplot script; run with: gnuplot <this file>\n"
                     "set datafile separator ','\n"
                     "set key top left\n"
                     "set xlabel '" + axis_label(axis) + "'\n"
                     "set ylabel 'traversal time'\n"
                     "set terminal png size 800,600\n"
                     "set output '" + csv_name.substr(0, csv_name.rfind('.')) + ".png'\n";
  if (series.empty()) return text + "# no traversal-time columns to plot\n";
  text += "plot ";
  for (std::size_t i = 0; i < series.size(); ++i) text += (i ? ", \\\n     " : "") + series[i];
  return text + "\n";
}

inline void emit_plot_script(const std::vector<ScanRow>& rows, const std::string& path,
                             const std::string& csv_name, Axis axis) {
  if (rows.empty()) throw Error(ErrorKind::config, "no rows to plot");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out << plot_script(rows, csv_name, axis);
  if (!out) throw Error(ErrorKind::io, "write failed for " + path);
}

}  // namespace traversal::harness
