#pragma once

#include <iosfwd>

namespace lmvae::trainer {

/// Exit codes: 0 success, 1 runtime error, 2 configuration or usage error.
int cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lmvae::trainer
