#pragma once

#include "core.hpp"
#include "decoder.hpp"
#include "encoder.hpp"
#include "eval.hpp"
#include "grouper.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "pipeline.hpp"
