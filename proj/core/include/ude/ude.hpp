#pragma once

#include "ude/aggregation.hpp"
#include "ude/checkpoint.hpp"
#include "ude/config.hpp"
#include "ude/data.hpp"
#include "ude/embedding.hpp"
#include "ude/encoder.hpp"
#include "ude/error.hpp"
#include "ude/io.hpp"
#include "ude/koopman.hpp"
#include "ude/topology.hpp"
#include "ude/training.hpp"
