#pragma once

#include "glfm/common.hpp"
#include "glfm/estimator.hpp"
#include "glfm/inference.hpp"
#include "glfm/init.hpp"
#include "glfm/io.hpp"
#include "glfm/model.hpp"
#include "glfm/normalize.hpp"
#include "glfm/predict.hpp"
#include "glfm/selection.hpp"
#include "glfm/simulate.hpp"
