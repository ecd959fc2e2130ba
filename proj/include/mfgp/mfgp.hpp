#pragma once

// Everything in one include.

#include "mfgp/bench.hpp"
#include "mfgp/data.hpp"
#include "mfgp/errors.hpp"
#include "mfgp/featsel.hpp"
#include "mfgp/gp.hpp"
#include "mfgp/log.hpp"
#include "mfgp/model.hpp"
#include "mfgp/multifidelity.hpp"
#include "mfgp/numerics.hpp"
#include "mfgp/optimize.hpp"
#include "mfgp/random.hpp"
#include "mfgp/synthetic.hpp"
#include "mfgp/version.hpp"
