#include "eigmeta/cli.hpp"

int main(int argc, char** argv) { return eigmeta::cli::run(argc, argv); }
