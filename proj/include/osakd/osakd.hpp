#ifndef OSAKD_OSAKD_HPP
#define OSAKD_OSAKD_HPP

#include "osakd/data.hpp"
#include "osakd/flops.hpp"
#include "osakd/knn.hpp"
#include "osakd/loss.hpp"
#include "osakd/model.hpp"
#include "osakd/ops.hpp"
#include "osakd/tape.hpp"
#include "osakd/tensor.hpp"
#include "osakd/train.hpp"

#endif
