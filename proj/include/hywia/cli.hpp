#pragma once

namespace hywia {

// Entry point shared by the binary and the tests. Exit codes: 0 success,
// 2 usage errors, 1 runtime failures (message on stderr, tagged with the
// failing stage).
int cli_main(int argc, char** argv);

}  // namespace hywia
