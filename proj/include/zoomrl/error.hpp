// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace zoomrl {

enum class Errc {
  InvalidArgument,
  AppendAfterTerminal,
  ObservationWithoutCall,
  InvalidSegment,
  NotTerminal,
  UnknownTool,
  DegenerateBox,
  UnsupportedAngle,
  GroupTooSmall,
  TransportError,
  ProtocolError,
  Timeout,
  JudgeUnavailable,
  MissingGtBox,
  UnmappableChoice,
  EmptyStratum,
  NonFiniteGradient,
  ConfigError,
  DataError,
  ImageError,
  IoError,
};

constexpr std::string_view to_string(Errc c) noexcept {
  switch (c) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::AppendAfterTerminal: return "AppendAfterTerminal";
    case Errc::ObservationWithoutCall: return "ObservationWithoutCall";
    case Errc::InvalidSegment: return "InvalidSegment";
    case Errc::NotTerminal: return "NotTerminal";
    case Errc::UnknownTool: return "UnknownTool";
    case Errc::DegenerateBox: return "DegenerateBox";
    case Errc::UnsupportedAngle: return "UnsupportedAngle";
    case Errc::GroupTooSmall: return "GroupTooSmall";
    case Errc::TransportError: return "TransportError";
    case Errc::ProtocolError: return "ProtocolError";
    case Errc::Timeout: return "Timeout";
    case Errc::JudgeUnavailable: return "JudgeUnavailable";
    case Errc::MissingGtBox: return "MissingGtBox";
    case Errc::UnmappableChoice: return "UnmappableChoice";
    case Errc::EmptyStratum: return "EmptyStratum";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::ConfigError: return "ConfigError";
    case Errc::DataError: return "DataError";
    case Errc::ImageError: return "ImageError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable error class.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Transport-level failures (connection, 5xx, timeouts) that a rollout degrades to Malformed.
inline bool is_transport_class(Errc c) noexcept {
  return c == Errc::TransportError || c == Errc::Timeout || c == Errc::ProtocolError;
}

}  // namespace zoomrl
