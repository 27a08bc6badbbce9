#pragma once

#include "gravpnp/error.hpp"
#include "gravpnp/geometry.hpp"
#include "gravpnp/stereo.hpp"
#include "gravpnp/pnp4dof.hpp"
#include "gravpnp/consensus.hpp"
#include "gravpnp/five_point.hpp"
#include "gravpnp/fusion.hpp"
#include "gravpnp/sim.hpp"
#include "gravpnp/bench.hpp"
