#include "busi/error.hpp"

namespace busi {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIngest: return "ingest";
    case ErrorKind::kStratification: return "stratification";
    case ErrorKind::kState: return "state";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kDecode: return "decode";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kStream: return "stream";
    case ErrorKind::kResource: return "resource";
    case ErrorKind::kSpec: return "spec";
    case ErrorKind::kDiverged: return "diverged";
    case ErrorKind::kLoad: return "load";
    case ErrorKind::kInput: return "input";
    case ErrorKind::kDegenerateInput: return "degenerate_input";
    case ErrorKind::kUndefinedInput: return "undefined_input";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kConfig: return "config";
  }
  return "unknown";
}

}  // namespace busi
