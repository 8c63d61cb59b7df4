// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fbsnn/allocator.hpp"
#include "fbsnn/checkpoint.hpp"
#include "fbsnn/commands.hpp"
#include "fbsnn/config.hpp"
#include "fbsnn/errors.hpp"
#include "fbsnn/evaluation.hpp"
#include "fbsnn/net.hpp"
#include "fbsnn/optimizer.hpp"
#include "fbsnn/paths.hpp"
#include "fbsnn/problems.hpp"
#include "fbsnn/random.hpp"
#include "fbsnn/tape.hpp"
#include "fbsnn/tensor.hpp"
#include "fbsnn/trainer.hpp"
