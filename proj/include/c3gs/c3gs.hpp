// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "c3gs/binary_io.hpp"
#include "c3gs/camera.hpp"
#include "c3gs/cda.hpp"
#include "c3gs/config.hpp"
#include "c3gs/cost_volume.hpp"
#include "c3gs/fpn_cga.hpp"
#include "c3gs/gaussians.hpp"
#include "c3gs/image_io.hpp"
#include "c3gs/kernels.hpp"
#include "c3gs/loss_metrics.hpp"
#include "c3gs/parallel.hpp"
#include "c3gs/pipeline.hpp"
#include "c3gs/rasterizer.hpp"
#include "c3gs/rng.hpp"
#include "c3gs/scene.hpp"
#include "c3gs/tensor.hpp"
#include "c3gs/weights.hpp"
