#pragma once

namespace gsedit {

/// Exit codes: 0 success, 2 validation, 3 I/O or format, 4 guidance transport.
int run_cli(int argc, char** argv);

}  // namespace gsedit
