#pragma once

#include "qnnv/activation_lut.hpp"
#include "qnnv/bundled.hpp"
#include "qnnv/domains.hpp"
#include "qnnv/error.hpp"
#include "qnnv/executor.hpp"
#include "qnnv/fixed_point.hpp"
#include "qnnv/float32.hpp"
#include "qnnv/interval.hpp"
#include "qnnv/ir.hpp"
#include "qnnv/lower.hpp"
#include "qnnv/network.hpp"
#include "qnnv/nnet.hpp"
#include "qnnv/passes.hpp"
#include "qnnv/property.hpp"
#include "qnnv/rational.hpp"
#include "qnnv/smtlib.hpp"
#include "qnnv/solver.hpp"
#include "qnnv/verifier.hpp"
