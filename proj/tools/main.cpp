#include "hywia/cli.hpp"

int main(int argc, char** argv) { return hywia::cli_main(argc, argv); }
