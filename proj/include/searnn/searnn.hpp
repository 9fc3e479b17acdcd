#pragma once

#include "searnn/autodiff.hpp"
#include "searnn/costs.hpp"
#include "searnn/datasets.hpp"
#include "searnn/engine.hpp"
#include "searnn/error.hpp"
#include "searnn/harness.hpp"
#include "searnn/losses.hpp"
#include "searnn/model.hpp"
#include "searnn/policies.hpp"
#include "searnn/tensor.hpp"
