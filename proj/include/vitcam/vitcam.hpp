#pragma once

#include "vitcam/checkpoint.hpp"
#include "vitcam/config.hpp"
#include "vitcam/error.hpp"
#include "vitcam/evaluation.hpp"
#include "vitcam/explain.hpp"
#include "vitcam/ingestion.hpp"
#include "vitcam/kernels.hpp"
#include "vitcam/postprocess.hpp"
#include "vitcam/tensor.hpp"
#include "vitcam/vit.hpp"
#include "vitcam/weights.hpp"
