#pragma once

// Convenience umbrella: pulls in the whole library.

#include "strlab/algorithms.hpp"
#include "strlab/constants.hpp"
#include "strlab/dataset.hpp"
#include "strlab/envs.hpp"
#include "strlab/experiment.hpp"
#include "strlab/fqe.hpp"
#include "strlab/io.hpp"
#include "strlab/mdp.hpp"
#include "strlab/policy_update.hpp"
#include "strlab/rng.hpp"
#include "strlab/theory.hpp"
