#pragma once

#include "bico/error.hpp"
#include "bico/numlin.hpp"
#include "bico/parallel.hpp"
#include "bico/dataset.hpp"
#include "bico/kernels.hpp"
#include "bico/inner.hpp"
#include "bico/hypergrad.hpp"
#include "bico/coreset.hpp"
#include "bico/expdesign.hpp"
#include "bico/streaming.hpp"
#include "bico/harness.hpp"
#include "bico/io.hpp"
#include "bico/checks.hpp"
