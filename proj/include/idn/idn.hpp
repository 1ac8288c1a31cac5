#pragma once

#include "idn/cells.hpp"
#include "idn/checkpoint.hpp"
#include "idn/datagen.hpp"
#include "idn/errors.hpp"
#include "idn/gradcheck.hpp"
#include "idn/losses.hpp"
#include "idn/metrics.hpp"
#include "idn/network.hpp"
#include "idn/numerics.hpp"
#include "idn/train.hpp"
