#pragma once

#include "dgadr/analysis.hpp"
#include "dgadr/common.hpp"
#include "dgadr/config.hpp"
#include "dgadr/data.hpp"
#include "dgadr/gradcheck.hpp"
#include "dgadr/losses.hpp"
#include "dgadr/metrics.hpp"
#include "dgadr/model.hpp"
#include "dgadr/trainer.hpp"
