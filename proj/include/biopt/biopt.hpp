#pragma once

#include "biopt/tensor.hpp"
#include "biopt/ops.hpp"
#include "biopt/rng.hpp"
#include "biopt/embed.hpp"
#include "biopt/proto.hpp"
#include "biopt/initmod.hpp"
#include "biopt/inner.hpp"
#include "biopt/netpbm.hpp"
#include "biopt/episodes.hpp"
#include "biopt/pipeline.hpp"
#include "biopt/outer.hpp"
#include "biopt/eval.hpp"
#include "biopt/checkpoint.hpp"
#include "biopt/config.hpp"
#include "biopt/commands.hpp"
