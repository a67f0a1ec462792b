#pragma once

#include "cit/data.hpp"
#include "cit/design.hpp"
#include "cit/error.hpp"
#include "cit/estimators.hpp"
#include "cit/glm.hpp"
#include "cit/io.hpp"
#include "cit/parallel.hpp"
#include "cit/prune.hpp"
#include "cit/rng.hpp"
#include "cit/select.hpp"
#include "cit/simulate.hpp"
#include "cit/tree.hpp"
