#pragma once

#include "tjlab/binary_io.hpp"
#include "tjlab/checkpoint.hpp"
#include "tjlab/config.hpp"
#include "tjlab/dataset.hpp"
#include "tjlab/error.hpp"
#include "tjlab/mask.hpp"
#include "tjlab/metrics.hpp"
#include "tjlab/mitigate.hpp"
#include "tjlab/network.hpp"
#include "tjlab/pipeline.hpp"
#include "tjlab/poison.hpp"
#include "tjlab/report.hpp"
#include "tjlab/rng.hpp"
#include "tjlab/scan.hpp"
#include "tjlab/synth.hpp"
#include "tjlab/tensor_set.hpp"
#include "tjlab/train.hpp"
