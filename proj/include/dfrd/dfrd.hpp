#pragma once

// Umbrella header: the whole library.

#include "dfrd/config.hpp"
#include "dfrd/error.hpp"
#include "dfrd/eval.hpp"
#include "dfrd/gradcheck.hpp"
#include "dfrd/kt.hpp"
#include "dfrd/mlp.hpp"
#include "dfrd/net.hpp"
#include "dfrd/report.hpp"
#include "dfrd/rng.hpp"
#include "dfrd/rrf.hpp"
#include "dfrd/samplers.hpp"
#include "dfrd/scenario.hpp"
#include "dfrd/wire.hpp"
