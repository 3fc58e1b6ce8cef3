#pragma once

// Umbrella header for the one-shot landmark detection toolkit.

#include "osld/augment.hpp"
#include "osld/checkpoint.hpp"
#include "osld/config.hpp"
#include "osld/dataset.hpp"
#include "osld/geometry.hpp"
#include "osld/image_io.hpp"
#include "osld/loader.hpp"
#include "osld/metrics.hpp"
#include "osld/nn/adam.hpp"
#include "osld/nn/model.hpp"
#include "osld/ssl.hpp"
#include "osld/synth.hpp"
#include "osld/trainer.hpp"
