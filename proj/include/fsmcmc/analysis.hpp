#pragma once

#include "fsmcmc/analysis/concentration.hpp"
#include "fsmcmc/analysis/efficiency.hpp"
#include "fsmcmc/analysis/ess.hpp"
