#include "pointillist/run.hpp"

int main(int argc, char** argv) { return pointillist::cli_main(argc, argv); }
