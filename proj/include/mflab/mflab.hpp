#pragma once

#include "mflab/assignment.hpp"
#include "mflab/common.hpp"
#include "mflab/gaussian.hpp"
#include "mflab/matrix.hpp"
#include "mflab/moments.hpp"
#include "mflab/particles.hpp"
#include "mflab/problem.hpp"
#include "mflab/random.hpp"
#include "mflab/ratefit.hpp"
#include "mflab/scenario.hpp"
#include "mflab/stability.hpp"
#include "mflab/symmetric.hpp"
#include "mflab/wasserstein.hpp"
