#include "cli.hpp"

int main(int argc, char** argv) { return flowgs::cli::run(argc, argv); }
