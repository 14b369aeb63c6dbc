#include "gpdit/harness.hpp"

int main(int argc, char** argv) { return gpdit::cli_dispatch(argc, argv); }
