#pragma once

#include "gdcm/core.hpp"
#include "gdcm/error.hpp"
#include "gdcm/estimate.hpp"
#include "gdcm/exact.hpp"
#include "gdcm/gof.hpp"
#include "gdcm/io.hpp"
#include "gdcm/math.hpp"
#include "gdcm/matrix.hpp"
#include "gdcm/parallel.hpp"
#include "gdcm/report.hpp"
#include "gdcm/rng.hpp"
#include "gdcm/simulate.hpp"
#include "gdcm/study.hpp"
