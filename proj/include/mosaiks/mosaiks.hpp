#pragma once

// Umbrella header.

#include "mosaiks/config.hpp"
#include "mosaiks/csv.hpp"
#include "mosaiks/featurize.hpp"
#include "mosaiks/grid.hpp"
#include "mosaiks/image.hpp"
#include "mosaiks/image_io.hpp"
#include "mosaiks/multisensor.hpp"
#include "mosaiks/patch_bank.hpp"
#include "mosaiks/ridge.hpp"
#include "mosaiks/spatial.hpp"
#include "mosaiks/superres.hpp"
#include "mosaiks/synth.hpp"
