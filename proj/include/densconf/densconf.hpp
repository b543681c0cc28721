#pragma once

#include "densconf/adversarial.hpp"
#include "densconf/confidence.hpp"
#include "densconf/data.hpp"
#include "densconf/distortions.hpp"
#include "densconf/error.hpp"
#include "densconf/experiments.hpp"
#include "densconf/math.hpp"
#include "densconf/netcore.hpp"
#include "densconf/rng.hpp"
