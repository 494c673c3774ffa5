#pragma once

#include "camulenet/ad/adam.hpp"
#include "camulenet/ad/checkpoint.hpp"
#include "camulenet/ad/nn.hpp"
#include "camulenet/ad/ops.hpp"
#include "camulenet/ad/tensor.hpp"
#include "camulenet/crossval.hpp"
#include "camulenet/dataset.hpp"
#include "camulenet/dsp/audio.hpp"
#include "camulenet/dsp/spectral.hpp"
#include "camulenet/dsp/wav.hpp"
#include "camulenet/encoders.hpp"
#include "camulenet/features.hpp"
#include "camulenet/fusion.hpp"
#include "camulenet/heads.hpp"
#include "camulenet/metrics.hpp"
#include "camulenet/model.hpp"
#include "camulenet/pipeline.hpp"
#include "camulenet/synth.hpp"
#include "camulenet/tensor_file.hpp"
#include "camulenet/training.hpp"
