// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "uformer/cli.hpp"

int main(int argc, char** argv) { return uformer::run_cli(argc, argv); }
