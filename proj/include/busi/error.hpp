#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace busi {

enum class ErrorKind {
  kIngest,
  kStratification,
  kState,
  kParse,
  kDecode,
  kShape,
  kStream,
  kResource,
  kSpec,
  kDiverged,
  kLoad,
  kInput,
  kDegenerateInput,
  kUndefinedInput,
  kIo,
  kConfig,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; `kind()` says which contract failed.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace busi
