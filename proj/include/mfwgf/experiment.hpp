#pragma once

#include "mfwgf/experiment/check.hpp"
#include "mfwgf/experiment/compare.hpp"
#include "mfwgf/experiment/config.hpp"
#include "mfwgf/experiment/flowlab_cmd.hpp"
#include "mfwgf/experiment/output.hpp"
#include "mfwgf/experiment/problem.hpp"
#include "mfwgf/experiment/run.hpp"
#include "mfwgf/experiment/sweep.hpp"
