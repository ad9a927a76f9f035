#pragma once

// Neuron-activation-pattern OOD monitor: everything in one include.

#include "napmon/activations.hpp"
#include "napmon/bench.hpp"
#include "napmon/calibration.hpp"
#include "napmon/error.hpp"
#include "napmon/extraction.hpp"
#include "napmon/index.hpp"
#include "napmon/io.hpp"
#include "napmon/metrics.hpp"
#include "napmon/monitor.hpp"
#include "napmon/odtest.hpp"
#include "napmon/pattern.hpp"
#include "napmon/store.hpp"
#include "napmon/synthetic.hpp"
