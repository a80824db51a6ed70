#pragma once

// Umbrella header.

#include "kgs2s/adam.hpp"
#include "kgs2s/checkpoint.hpp"
#include "kgs2s/common.hpp"
#include "kgs2s/config.hpp"
#include "kgs2s/decode.hpp"
#include "kgs2s/eval.hpp"
#include "kgs2s/graph.hpp"
#include "kgs2s/mat.hpp"
#include "kgs2s/model.hpp"
#include "kgs2s/rng.hpp"
#include "kgs2s/train.hpp"
#include "kgs2s/trie.hpp"
#include "kgs2s/verbalize.hpp"
#include "kgs2s/vocab.hpp"
