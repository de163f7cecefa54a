#pragma once

#include "ecborrow/calibration.hpp"
#include "ecborrow/data_model.hpp"
#include "ecborrow/error.hpp"
#include "ecborrow/estimators.hpp"
#include "ecborrow/multisource.hpp"
#include "ecborrow/nuisance.hpp"
#include "ecborrow/pipeline.hpp"
#include "ecborrow/random.hpp"
#include "ecborrow/selection.hpp"
#include "ecborrow/simulation.hpp"
#include "ecborrow/version.hpp"
