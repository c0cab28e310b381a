#pragma once

#include "nestopt/affine.hpp"
#include "nestopt/errors.hpp"
#include "nestopt/interp.hpp"
#include "nestopt/ir.hpp"
#include "nestopt/nnet.hpp"
#include "nestopt/search.hpp"
#include "nestopt/transforms.hpp"
