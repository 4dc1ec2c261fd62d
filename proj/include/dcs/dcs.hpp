#pragma once

#include "dcs/config.hpp"
#include "dcs/error.hpp"
#include "dcs/experiment.hpp"
#include "dcs/nam.hpp"
#include "dcs/normal.hpp"
#include "dcs/operators.hpp"
#include "dcs/prior.hpp"
#include "dcs/rng.hpp"
#include "dcs/samplers.hpp"
#include "dcs/schedule.hpp"
#include "dcs/selftest.hpp"
