#pragma once

namespace rgmdt::cli {

// Exit codes: 0 success, 2 validation error, 3 certification failure, 1 anything else.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitCertify = 3;

int run(int argc, char** argv);

} // namespace rgmdt::cli
