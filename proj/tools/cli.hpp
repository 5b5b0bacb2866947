#pragma once

#include <ostream>

namespace volcnn::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericError = 4,
  kIoError = 5,
};

/// Entry point of the `volcnn` tool: `volcnn <train|eval|ablate|saliency|gradcheck|synth> [options]`.
/// Every configuration key is accepted as `--key value`; `--config FILE` loads
/// a key = value file first.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace volcnn::cli
