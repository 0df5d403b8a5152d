#include "qmri/cli.hpp"

int main(int argc, char** argv) { return qmri::cli_main(argc, argv); }
