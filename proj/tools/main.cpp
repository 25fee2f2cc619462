#include "gsedit/cli.hpp"

int main(int argc, char** argv) { return gsedit::run_cli(argc, argv); }
