#pragma once

#include "retro/adam.hpp"
#include "retro/common.hpp"
#include "retro/gradcheck.hpp"
#include "retro/matrix.hpp"
#include "retro/nn.hpp"
#include "retro/tape.hpp"
