#pragma once

#include "mhsaem/diagnostics.hpp"
#include "mhsaem/errors.hpp"
#include "mhsaem/experiment.hpp"
#include "mhsaem/family.hpp"
#include "mhsaem/flow.hpp"
#include "mhsaem/gaussian.hpp"
#include "mhsaem/gradient.hpp"
#include "mhsaem/io.hpp"
#include "mhsaem/mh.hpp"
#include "mhsaem/mixture.hpp"
#include "mhsaem/proposal.hpp"
#include "mhsaem/rng.hpp"
#include "mhsaem/schedule.hpp"
#include "mhsaem/selection.hpp"
#include "mhsaem/synthgen.hpp"
#include "mhsaem/trainer.hpp"
