#pragma once

// byte-level language identification: residual convolution blocks over byte
// embeddings, a bidirectional GRU encoder, and a softmax classifier, plus
// the training, data and evaluation machinery around them.

#include "resident/data.hpp"
#include "resident/gradcheck.hpp"
#include "resident/graph.hpp"
#include "resident/layers.hpp"
#include "resident/metrics.hpp"
#include "resident/model.hpp"
#include "resident/ops.hpp"
#include "resident/optimizer.hpp"
#include "resident/serialize.hpp"
#include "resident/tensor.hpp"
#include "resident/train.hpp"
