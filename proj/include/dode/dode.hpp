#pragma once

#include "dode/aggregation.hpp"
#include "dode/benchmark.hpp"
#include "dode/csv.hpp"
#include "dode/dar.hpp"
#include "dode/dnl.hpp"
#include "dode/error.hpp"
#include "dode/estimator.hpp"
#include "dode/io.hpp"
#include "dode/metrics.hpp"
#include "dode/network.hpp"
#include "dode/observation.hpp"
#include "dode/paths.hpp"
#include "dode/route_choice.hpp"
#include "dode/scenario.hpp"
#include "dode/synthetic.hpp"
#include "dode/tensor.hpp"
