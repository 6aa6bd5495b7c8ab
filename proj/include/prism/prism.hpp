#pragma once

#include "prism/bootstrap.hpp"
#include "prism/ctree.hpp"
#include "prism/data.hpp"
#include "prism/enet.hpp"
#include "prism/error.hpp"
#include "prism/forest.hpp"
#include "prism/mob.hpp"
#include "prism/param.hpp"
#include "prism/pipeline.hpp"
#include "prism/report.hpp"
#include "prism/rng.hpp"
#include "prism/sim.hpp"
#include "prism/stats.hpp"
#include "prism/study.hpp"
#include "prism/tree.hpp"
