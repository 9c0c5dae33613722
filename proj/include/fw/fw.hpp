#pragma once

#include "fw/bounded_queue.hpp"
#include "fw/error.hpp"
#include "fw/features.hpp"
#include "fw/inference.hpp"
#include "fw/metrics.hpp"
#include "fw/model.hpp"
#include "fw/patch.hpp"
#include "fw/quantize.hpp"
#include "fw/simd.hpp"
#include "fw/source.hpp"
#include "fw/trainer.hpp"
#include "fw/transfer.hpp"
