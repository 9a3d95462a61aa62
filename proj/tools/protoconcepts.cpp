#include "protoconcepts/cli.hpp"

int main(int argc, char** argv) { return protoconcepts::run_cli(argc, argv); }
