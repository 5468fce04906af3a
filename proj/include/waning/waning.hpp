#pragma once

#include "waning/bounds.hpp"
#include "waning/errors.hpp"
#include "waning/format.hpp"
#include "waning/normal.hpp"
#include "waning/parallel.hpp"
#include "waning/power_study.hpp"
#include "waning/resample.hpp"
#include "waning/rng.hpp"
#include "waning/strata_sim.hpp"
#include "waning/stratified.hpp"
#include "waning/svg.hpp"
#include "waning/trial_data.hpp"
#include "waning/waning_test.hpp"
