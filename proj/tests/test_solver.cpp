#include <catch2/catch_amalgamated.hpp>
#include "qmri/solver.hpp"
TEST_CASE("placeholder solver") { CHECK(true); }
