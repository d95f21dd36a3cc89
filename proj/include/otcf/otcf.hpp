#pragma once

#include "otcf/dataset.hpp"
#include "otcf/discrete_ot.hpp"
#include "otcf/error.hpp"
#include "otcf/estimators.hpp"
#include "otcf/gaussian.hpp"
#include "otcf/parallel.hpp"
#include "otcf/random.hpp"
#include "otcf/resampling.hpp"
#include "otcf/sem.hpp"
#include "otcf/smoothers.hpp"
#include "otcf/types.hpp"
#include "otcf/univariate.hpp"
