#pragma once

#include "dkit/dataset.hpp"
#include "dkit/denoiser.hpp"
#include "dkit/distill.hpp"
#include "dkit/jacobian.hpp"
#include "dkit/metrics.hpp"
#include "dkit/plugin.hpp"
#include "dkit/report.hpp"
#include "dkit/sampler.hpp"
#include "dkit/toy.hpp"
#include "dkit/verify.hpp"
