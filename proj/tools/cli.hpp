#pragma once

#include <iosfwd>

namespace linkfold::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitInfeasible = 3;
inline constexpr int kExitUsage = 64;

/// Runs one `linkfold` invocation. Artifacts go to `--out` when given,
/// otherwise to `out`; diagnostics go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace linkfold::cli
