#include <iostream>

#include "jaipw/run_config.hpp"

int main(int argc, char** argv) { return jaipw::run_cli(argc, argv, std::cout, std::cerr); }
