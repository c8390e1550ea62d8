#ifndef FLOWR_FLOWR_HPP
#define FLOWR_FLOWR_HPP

#include "flowr/autodiff.hpp"
#include "flowr/baselines.hpp"
#include "flowr/checkpoint.hpp"
#include "flowr/config.hpp"
#include "flowr/core.hpp"
#include "flowr/crp.hpp"
#include "flowr/dataset.hpp"
#include "flowr/encoder.hpp"
#include "flowr/episodes.hpp"
#include "flowr/experiment.hpp"
#include "flowr/gaussian.hpp"
#include "flowr/meta_train.hpp"
#include "flowr/metrics.hpp"
#include "flowr/model.hpp"
#include "flowr/pretrain.hpp"
#include "flowr/verification.hpp"

#endif  // FLOWR_FLOWR_HPP
