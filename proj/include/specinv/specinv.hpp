#pragma once

#include "specinv/common.hpp"
#include "specinv/fft.hpp"
#include "specinv/stft.hpp"
#include "specinv/wav.hpp"
#include "specinv/phase_features.hpp"
#include "specinv/solver.hpp"
#include "specinv/tensor.hpp"
#include "specinv/cnn.hpp"
#include "specinv/siw.hpp"
#include "specinv/training.hpp"
#include "specinv/pipeline.hpp"
#include "specinv/bench.hpp"
