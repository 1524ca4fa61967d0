#pragma once

#include "shapprune/attribution.hpp"
#include "shapprune/checkpoint.hpp"
#include "shapprune/codebook.hpp"
#include "shapprune/container.hpp"
#include "shapprune/data.hpp"
#include "shapprune/error.hpp"
#include "shapprune/imputation.hpp"
#include "shapprune/model.hpp"
#include "shapprune/parallel.hpp"
#include "shapprune/pruner.hpp"
#include "shapprune/rng.hpp"
#include "shapprune/synthetic.hpp"
#include "shapprune/train.hpp"
