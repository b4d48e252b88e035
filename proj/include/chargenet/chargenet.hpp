#pragma once

#include "chargenet/error.hpp"
#include "chargenet/model.hpp"
#include "chargenet/market.hpp"
#include "chargenet/chargeflow.hpp"
#include "chargenet/queues.hpp"
#include "chargenet/economics.hpp"
#include "chargenet/nlp.hpp"
#include "chargenet/optimizer.hpp"
#include "chargenet/bound.hpp"
#include "chargenet/simcheck.hpp"
#include "chargenet/queuecheck.hpp"
#include "chargenet/report.hpp"
#include "chargenet/planner.hpp"
#include "chargenet/trips.hpp"
