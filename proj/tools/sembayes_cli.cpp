#include "sembayes/cli.hpp"

int main(int argc, char** argv) { return sembayes::run_cli(argc, argv); }
