#include "dilie/cli.hpp"

int main(int argc, char** argv) { return dilie::cli::run(argc, argv); }
