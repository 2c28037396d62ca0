#pragma once

#include "transgcn/autodiff.hpp"
#include "transgcn/checkpoint.hpp"
#include "transgcn/config.hpp"
#include "transgcn/encoder.hpp"
#include "transgcn/error.hpp"
#include "transgcn/evaluator.hpp"
#include "transgcn/kg.hpp"
#include "transgcn/log.hpp"
#include "transgcn/matrix.hpp"
#include "transgcn/objective.hpp"
#include "transgcn/optim.hpp"
#include "transgcn/parallel.hpp"
#include "transgcn/toy.hpp"
#include "transgcn/trainer.hpp"
#include "transgcn/transform.hpp"
