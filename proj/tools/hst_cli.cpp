#include "hst/cli.hpp"

int main(int argc, char** argv) { return hst::dispatch(argc, argv); }
