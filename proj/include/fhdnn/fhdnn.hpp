#pragma once

#include "fhdnn/cost.hpp"
#include "fhdnn/errors.hpp"
#include "fhdnn/harness.hpp"
#include "fhdnn/hdc.hpp"
#include "fhdnn/io.hpp"
#include "fhdnn/pesim.hpp"
#include "fhdnn/rng.hpp"
#include "fhdnn/tensor.hpp"
#include "fhdnn/vgg16.hpp"
#include "fhdnn/wclust.hpp"
