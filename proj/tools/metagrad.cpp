#include "metagrad/cli/commands.hpp"

int main(int argc, char** argv) { return metagrad::cli::run(argc, argv); }
