#pragma once

#include "xea/attack.hpp"
#include "xea/data.hpp"
#include "xea/error.hpp"
#include "xea/experiment.hpp"
#include "xea/explain.hpp"
#include "xea/gbdt.hpp"
#include "xea/mlp.hpp"
#include "xea/oracle.hpp"
#include "xea/pefile.hpp"
#include "xea/random.hpp"
#include "xea/rank.hpp"
