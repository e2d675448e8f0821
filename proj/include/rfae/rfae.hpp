#pragma once

#include "rfae/bundle.hpp"
#include "rfae/core.hpp"
#include "rfae/data.hpp"
#include "rfae/decode.hpp"
#include "rfae/forest.hpp"
#include "rfae/kdtree.hpp"
#include "rfae/kernel.hpp"
#include "rfae/lanczos.hpp"
#include "rfae/metrics.hpp"
#include "rfae/pipeline.hpp"
#include "rfae/region.hpp"
#include "rfae/spectral.hpp"
