#pragma once

#include "siva/error.hpp"
#include "siva/nn.hpp"
#include "siva/physics.hpp"
#include "siva/signal.hpp"
#include "siva/sim.hpp"
#include "siva/train.hpp"
#include "siva/uq.hpp"
#include "siva/sindy.hpp"
#include "siva/io.hpp"
#include "siva/commands.hpp"
