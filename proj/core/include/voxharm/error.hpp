#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace voxharm {

/// Broad failure categories; the CLI prints these as stable machine-readable codes.
enum class ErrorKind {
  invalid_argument,
  geometry_mismatch,
  empty_input,
  io,
  format,
  unsupported,
  out_of_range,
  numeric,
  config,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised by the pipeline; carries the stage and case that failed.
class StageError : public Error {
 public:
  StageError(ErrorKind kind, std::string stage, std::string case_id, const std::string& what)
      : Error(kind, what), stage_(std::move(stage)), case_id_(std::move(case_id)) {}

  const std::string& stage() const noexcept { return stage_; }
  const std::string& case_id() const noexcept { return case_id_; }

 private:
  std::string stage_;
  std::string case_id_;
};

}  // namespace voxharm
