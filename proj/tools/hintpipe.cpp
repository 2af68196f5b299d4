#include "hintpipe/cli.hpp"

#include <iostream>

int
main(int argc, char **argv)
{
	return hintpipe::run_command(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
