#include "ferrobnn/commands.hpp"

int main(int argc, char** argv) { return ferrobnn::cli::run_cli(argc, argv); }
