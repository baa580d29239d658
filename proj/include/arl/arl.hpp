#pragma once

#include "arl/ambiguity.hpp"
#include "arl/config.hpp"
#include "arl/corpus.hpp"
#include "arl/encoder.hpp"
#include "arl/eval.hpp"
#include "arl/gradcheck.hpp"
#include "arl/losses.hpp"
#include "arl/similarity.hpp"
#include "arl/trainer.hpp"
