#include "dercfr/cli.hpp"

int main(int argc, char** argv) { return dercfr::cli::run(argc, argv); }
