#pragma once

#include "panelkit/errors.hpp"
#include "panelkit/panel.hpp"
#include "panelkit/result.hpp"
#include "panelkit/regression.hpp"
#include "panelkit/diagnostics.hpp"
#include "panelkit/instrument.hpp"
#include "panelkit/simulation.hpp"
#include "panelkit/reporting.hpp"
#include "panelkit/json_io.hpp"
