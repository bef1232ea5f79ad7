#include "cli_app.hpp"

int main(int argc, char** argv) { return fph::cli::run_cli(argc, argv); }
