#include "mvmv/cli.hpp"

int main(int argc, char** argv) { return mvmv::cli::run(argc, argv); }
