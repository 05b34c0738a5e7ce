#pragma once

// Umbrella header for the mambo library: hybrid SSM-attention sequence
// backbones with a training and evaluation toolkit for audio anti-spoofing.

#include "mambo/backbone.hpp"
#include "mambo/checkpoint.hpp"
#include "mambo/config.hpp"
#include "mambo/data.hpp"
#include "mambo/matrix.hpp"
#include "mambo/metrics.hpp"
#include "mambo/mixers.hpp"
#include "mambo/rng.hpp"
#include "mambo/scans.hpp"
#include "mambo/tape.hpp"
#include "mambo/training.hpp"
