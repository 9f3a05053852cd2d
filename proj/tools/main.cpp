#include "cli/cli.hpp"

int main(int argc, char** argv) { return cxr::cli::run(argc, argv); }
