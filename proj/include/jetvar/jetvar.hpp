#pragma once

#include "jetvar/symexpr.hpp"
#include "jetvar/grid.hpp"
#include "jetvar/jetcalc.hpp"
#include "jetvar/forms.hpp"
#include "jetvar/formalisms.hpp"
#include "jetvar/verifier.hpp"
#include "jetvar/model_dsl.hpp"
#include "jetvar/report.hpp"
