#pragma once

#include "mpr/config.hpp"
#include "mpr/csv.hpp"
#include "mpr/errors.hpp"
#include "mpr/linalg.hpp"
#include "mpr/ode.hpp"
#include "mpr/problem.hpp"
#include "mpr/recipe.hpp"
#include "mpr/riccati.hpp"
#include "mpr/semigroup.hpp"
#include "mpr/verify.hpp"
