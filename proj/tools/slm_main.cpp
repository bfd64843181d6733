#include "slm/cli.hpp"

int main(int argc, char** argv) { return slm::cli_main(argc, argv); }
