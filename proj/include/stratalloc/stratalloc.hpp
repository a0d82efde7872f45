#pragma once

#include "stratalloc/errors.hpp"
#include "stratalloc/matcalc.hpp"
#include "stratalloc/strata_model.hpp"
#include "stratalloc/estimators.hpp"
#include "stratalloc/distributions.hpp"
#include "stratalloc/solvers.hpp"
#include "stratalloc/simulator.hpp"
#include "stratalloc/report_json.hpp"
