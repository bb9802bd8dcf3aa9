#pragma once

#include "fusionshot/consensus.hpp"
#include "fusionshot/diversity.hpp"
#include "fusionshot/error.hpp"
#include "fusionshot/fusion.hpp"
#include "fusionshot/logitstore.hpp"
#include "fusionshot/mask.hpp"
#include "fusionshot/pruner.hpp"
#include "fusionshot/report.hpp"
#include "fusionshot/synth.hpp"
