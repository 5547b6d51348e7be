#pragma once

#include "ufg/errors.hpp"
#include "ufg/expr.hpp"
#include "ufg/fields.hpp"
#include "ufg/flow.hpp"
#include "ufg/geometry.hpp"
#include "ufg/chart.hpp"
#include "ufg/dynamics.hpp"
#include "ufg/malliavin.hpp"
#include "ufg/diagnostics.hpp"
#include "ufg/catalog.hpp"
#include "ufg/io.hpp"
