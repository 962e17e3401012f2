#pragma once

// Everything except the scenario layer (which needs nlohmann/json).

#include "lyapan/errors.hpp"
#include "lyapan/projlin.hpp"
#include "lyapan/atomic_measure.hpp"
#include "lyapan/measures.hpp"
#include "lyapan/random.hpp"
#include "lyapan/parallel.hpp"
#include "lyapan/projective_grid.hpp"
#include "lyapan/markov_operator.hpp"
#include "lyapan/contraction.hpp"
#include "lyapan/orbit.hpp"
#include "lyapan/lyapunov.hpp"
#include "lyapan/analyticity.hpp"
#include "lyapan/markov_cocycle.hpp"
