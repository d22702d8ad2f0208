#pragma once

namespace vmfnet {

// Entry point of the vmfnet tool; returns the process exit code.
// 0 success, 2 usage error, 3 configuration error, 4 I/O or dataset error,
// 1 any other failure.
int run_cli(int argc, const char* const* argv);

}  // namespace vmfnet
