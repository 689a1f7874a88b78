#include "longclip/cli/app.hpp"

int main(int argc, char** argv) { return longclip::cli::run(argc, argv); }
