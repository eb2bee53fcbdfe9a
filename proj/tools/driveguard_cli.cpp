#include "driveguard_cli.hpp"

int main(int argc, char** argv) { return driveguard::cli::run(argc, argv); }
