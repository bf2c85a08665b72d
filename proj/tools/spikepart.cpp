#include <string>
#include <vector>

#include "spikepart/cli.hpp"

int main(int argc, char** argv)
{
	std::vector<std::string> args(argv + 1, argv + argc);
	return spikepart::run_cli(args);
}
