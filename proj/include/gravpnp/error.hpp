#pragma once

#include <stdexcept>
#include <string>

namespace gravpnp {

enum class ErrorCode {
  invalid_argument,
  degenerate_factorization,
  behind_camera,
  degenerate_epipolar,
  degenerate_line,
  unsupported_configuration,
  parallel_rays,
  insufficient_data,
  degenerate_geometry,
  ambiguous_yaw,
  degenerate_sample,
  consensus_failure,
  stream_order,
  unreliable_sample,
  io_failure,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::degenerate_factorization: return "degenerate_factorization";
    case ErrorCode::behind_camera: return "behind_camera";
    case ErrorCode::degenerate_epipolar: return "degenerate_epipolar";
    case ErrorCode::degenerate_line: return "degenerate_line";
    case ErrorCode::unsupported_configuration: return "unsupported_configuration";
    case ErrorCode::parallel_rays: return "parallel_rays";
    case ErrorCode::insufficient_data: return "insufficient_data";
    case ErrorCode::degenerate_geometry: return "degenerate_geometry";
    case ErrorCode::ambiguous_yaw: return "ambiguous_yaw";
    case ErrorCode::degenerate_sample: return "degenerate_sample";
    case ErrorCode::consensus_failure: return "consensus_failure";
    case ErrorCode::stream_order: return "stream_order";
    case ErrorCode::unreliable_sample: return "unreliable_sample";
    case ErrorCode::io_failure: return "io_failure";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gravpnp
