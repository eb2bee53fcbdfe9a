#pragma once

#include "driveguard/architectures.hpp"
#include "driveguard/data.hpp"
#include "driveguard/degradation.hpp"
#include "driveguard/eval.hpp"
#include "driveguard/filters.hpp"
#include "driveguard/gradcheck.hpp"
#include "driveguard/image_io.hpp"
#include "driveguard/losses.hpp"
#include "driveguard/metrics.hpp"
#include "driveguard/ops.hpp"
#include "driveguard/rng.hpp"
#include "driveguard/segmenter.hpp"
#include "driveguard/ssim.hpp"
#include "driveguard/synthetic.hpp"
#include "driveguard/tape.hpp"
#include "driveguard/tensor.hpp"
#include "driveguard/training.hpp"
#include "driveguard/weights_io.hpp"
