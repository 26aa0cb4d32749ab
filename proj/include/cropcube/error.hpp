#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cropcube {

enum class ErrorCode {
  // raster_io
  UnsupportedProfile,
  MalformedFilename,
  CorruptFile,
  NotAPolygon,
  MissingPlotId,
  InvalidDate,
  InvalidPlot,
  BadMagic,
  VersionMismatch,
  TruncatedPayload,
  SidecarMissing,
  IoError,
  // season_calendar
  DuplicateSeasonName,
  NonPositiveDuration,
  UnknownSeason,
  OutOfWindow,
  InvalidConfig,
  // cube_builder
  GridMismatch,
  BandMismatch,
  EmptyBandSelection,
  UnassignableSeason,
  // spectral
  MissingBand,
  ShapeMismatch,
  SeasonMismatch,
  InvalidWindow,
  // predictors
  EmptyPlotMask,
  DegenerateSystem,
  DimensionMismatch,
  SingleClassData,
  TooFewSamples,
  SchemaMismatch,
  ExternalTimeout,
  ProtocolError,
  // pipeline
  CenterOutOfBounds,
  NoScenes,
  ModelMissing,
  // metrics
  AllUnknown,
  LengthMismatch,
  EmptyInput,
  NonPositiveMean,
  UnsortedBreakpoints,
  // synth
  RegionTooSmall,
  // cli
  UsageError,
  OutputExists,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one ErrorCode; the CLI prints
/// its name as the single-line error class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace cropcube
