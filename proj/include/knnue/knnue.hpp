#pragma once

#include "knnue/core.hpp"
#include "knnue/binary_io.hpp"
#include "knnue/datastore.hpp"
#include "knnue/optim.hpp"
#include "knnue/ann/neighborhood.hpp"
#include "knnue/ann/kmeans.hpp"
#include "knnue/ann/pca.hpp"
#include "knnue/ann/pq.hpp"
#include "knnue/ann/index.hpp"
#include "knnue/calibration/softmax.hpp"
#include "knnue/calibration/temperature.hpp"
#include "knnue/calibration/density.hpp"
#include "knnue/calibration/dac.hpp"
#include "knnue/calibration/knn_ue.hpp"
#include "knnue/calibration/entity.hpp"
#include "knnue/metrics.hpp"
#include "knnue/synthetic.hpp"
