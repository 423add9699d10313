#pragma once
// Umbrella header.

#include "qbsde/bsde.hpp"
#include "qbsde/config.hpp"
#include "qbsde/control.hpp"
#include "qbsde/fixtures.hpp"
#include "qbsde/forward.hpp"
#include "qbsde/gradient.hpp"
#include "qbsde/horizon.hpp"
#include "qbsde/io.hpp"
#include "qbsde/linalg.hpp"
#include "qbsde/mild.hpp"
#include "qbsde/model.hpp"
#include "qbsde/oracle.hpp"
#include "qbsde/regression.hpp"
#include "qbsde/report.hpp"
#include "qbsde/rng.hpp"
