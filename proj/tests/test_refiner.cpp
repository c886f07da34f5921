#include <catch2/catch_amalgamated.hpp>
#include "tcv/session.hpp"
