#pragma once

// Umbrella header for the probex weight-space learning toolkit.

#include "probex/dense.hpp"
#include "probex/embedding_table.hpp"
#include "probex/errors.hpp"
#include "probex/eval.hpp"
#include "probex/expert.hpp"
#include "probex/hash.hpp"
#include "probex/linalg.hpp"
#include "probex/moe.hpp"
#include "probex/parallel.hpp"
#include "probex/rng.hpp"
#include "probex/router.hpp"
#include "probex/statnn.hpp"
#include "probex/target_net.hpp"
#include "probex/tensor_io.hpp"
#include "probex/trainer.hpp"
#include "probex/zoo.hpp"
