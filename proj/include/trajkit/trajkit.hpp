#pragma once

#include "trajkit/chebyshev.hpp"
#include "trajkit/integrate.hpp"
#include "trajkit/nlp.hpp"
#include "trajkit/ocp.hpp"
#include "trajkit/packing.hpp"
#include "trajkit/problems.hpp"
#include "trajkit/smoothing.hpp"
#include "trajkit/transcribe.hpp"
#include "trajkit/verify.hpp"
