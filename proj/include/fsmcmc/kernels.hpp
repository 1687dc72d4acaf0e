#pragma once

#include "fsmcmc/kernels/common.hpp"
#include "fsmcmc/kernels/drmh.hpp"
#include "fsmcmc/kernels/elliptical.hpp"
#include "fsmcmc/kernels/nuts.hpp"
#include "fsmcmc/kernels/slice.hpp"
