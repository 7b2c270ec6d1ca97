#pragma once

// Umbrella header.

#include "stp/builtins.hpp"
#include "stp/config.hpp"
#include "stp/csv.hpp"
#include "stp/embedding.hpp"
#include "stp/errors.hpp"
#include "stp/model.hpp"
#include "stp/operators.hpp"
#include "stp/parallel.hpp"
#include "stp/pde.hpp"
#include "stp/perron.hpp"
#include "stp/policy.hpp"
#include "stp/problem_file.hpp"
#include "stp/sde.hpp"
#include "stp/test_function.hpp"
#include "stp/tree.hpp"
#include "stp/validate.hpp"
