#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fusionshot {

enum class ErrorKind {
  MissingFile,
  ParseError,
  MisalignedEpisodes,
  InconsistentK,
  InvalidManifest,
  UnknownSplit,
  InvalidMask,
  FocalNeverFails,
  FocalNotInMask,
  WeightsNotConvex,
  EmptyResult,
  VictimNotInPool,
  RowNotNormalized,
  NotEnoughEpisodes,
  ShapeMismatch,
  NonFiniteLoss,
  BatchTooSmall,
  InfeasibleSpec,
  KindMismatch,
  InvalidArgument,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::MisalignedEpisodes: return "MisalignedEpisodes";
    case ErrorKind::InconsistentK: return "InconsistentK";
    case ErrorKind::InvalidManifest: return "InvalidManifest";
    case ErrorKind::UnknownSplit: return "UnknownSplit";
    case ErrorKind::InvalidMask: return "InvalidMask";
    case ErrorKind::FocalNeverFails: return "FocalNeverFails";
    case ErrorKind::FocalNotInMask: return "FocalNotInMask";
    case ErrorKind::WeightsNotConvex: return "WeightsNotConvex";
    case ErrorKind::EmptyResult: return "EmptyResult";
    case ErrorKind::VictimNotInPool: return "VictimNotInPool";
    case ErrorKind::RowNotNormalized: return "RowNotNormalized";
    case ErrorKind::NotEnoughEpisodes: return "NotEnoughEpisodes";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::BatchTooSmall: return "BatchTooSmall";
    case ErrorKind::InfeasibleSpec: return "InfeasibleSpec";
    case ErrorKind::KindMismatch: return "KindMismatch";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Data or contract error raised by the library. The CLI maps these to exit
/// code 1; `kind()` lets callers branch without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised by ingest when a model's episode sequence diverges from the reference model.
class MisalignedEpisodes : public Error {
 public:
  MisalignedEpisodes(std::string model_id, unsigned long long episode_id)
      : Error(ErrorKind::MisalignedEpisodes,
              "model '" + model_id + "' diverges at episode " + std::to_string(episode_id)),
        model_id_(std::move(model_id)),
        episode_id_(episode_id) {}

  const std::string& model_id() const noexcept { return model_id_; }
  unsigned long long episode_id() const noexcept { return episode_id_; }

 private:
  std::string model_id_;
  unsigned long long episode_id_;
};

/// CSV parse failure with the 1-based line number of the offending row.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(ErrorKind::ParseError, file + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace fusionshot
