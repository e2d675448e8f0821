#pragma once

#include "rfae/decode/greedy.hpp"
#include "rfae/decode/ilp.hpp"
#include "rfae/decode/knn.hpp"
#include "rfae/decode/lasso.hpp"
#include "rfae/decode/relabel.hpp"
#include "rfae/decode/synthetic.hpp"
