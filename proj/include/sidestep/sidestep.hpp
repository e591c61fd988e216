#pragma once

#include "sidestep/address_space.hpp"
#include "sidestep/common.hpp"
#include "sidestep/der.hpp"
#include "sidestep/engine.hpp"
#include "sidestep/matcher.hpp"
#include "sidestep/region_map.hpp"
#include "sidestep/scenarios.hpp"
#include "sidestep/trace.hpp"
#include "sidestep/where_expr.hpp"
