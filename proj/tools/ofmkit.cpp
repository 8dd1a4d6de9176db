#include "ofmkit/cli.hpp"

int main(int argc, char** argv) { return ofmkit::cli::run(argc, argv); }
