#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace traversal {

enum class ErrorKind {
  degenerate_channel,
  branch_point,
  channel_closed,
  singular_system,
  degenerate,
  division,
  unsupported_topology,
  accuracy,
  stability,
  window,
  insufficient_transmission,
  empty_ensemble,
  config,
  io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::degenerate_channel: return "degenerate-channel";
    case ErrorKind::branch_point: return "branch-point";
    case ErrorKind::channel_closed: return "channel-closed";
    case ErrorKind::singular_system: return "singular-system";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::division: return "division";
    case ErrorKind::unsupported_topology: return "unsupported-topology";
    case ErrorKind::accuracy: return "accuracy";
    case ErrorKind::stability: return "stability";
    case ErrorKind::window: return "window";
    case ErrorKind::insufficient_transmission: return "insufficient-transmission";
    case ErrorKind::empty_ensemble: return "empty-ensemble";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind so the
/// scan driver can turn it into a row flag instead of aborting.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace traversal
