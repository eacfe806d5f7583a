#include "certkit/cli.hpp"

int main(int argc, char ** argv) { return certkit::cli::main_entry(argc, argv); }
