#pragma once

#include "vdist/agent.hpp"
#include "vdist/bellman.hpp"
#include "vdist/envs.hpp"
#include "vdist/eqr.hpp"
#include "vdist/error.hpp"
#include "vdist/experiment.hpp"
#include "vdist/io.hpp"
#include "vdist/mdp.hpp"
#include "vdist/oracle.hpp"
#include "vdist/posterior.hpp"
#include "vdist/quantdist.hpp"
#include "vdist/random.hpp"
