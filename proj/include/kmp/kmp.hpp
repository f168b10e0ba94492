#pragma once

#include "kmp/baselines.hpp"
#include "kmp/box_ls.hpp"
#include "kmp/dataset.hpp"
#include "kmp/fixed_design.hpp"
#include "kmp/harness.hpp"
#include "kmp/io.hpp"
#include "kmp/kernel.hpp"
#include "kmp/model.hpp"
#include "kmp/parallel.hpp"
#include "kmp/partition.hpp"
#include "kmp/plm.hpp"
#include "kmp/posterior.hpp"
#include "kmp/priors.hpp"
#include "kmp/random.hpp"
#include "kmp/sampler.hpp"
#include "kmp/sieve_mle.hpp"
