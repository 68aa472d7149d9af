#pragma once

// Complete-case (CC) and non-responder imputation (NRI) Emax fits.

#include "emaxem/em_engine.hpp"

namespace emaxem {

/// Drops records with a missing outcome and fits the Emax model.
FitReport fit_cc(DataSpan data, bool firth = false, const NewtonControls& controls = {},
                 double level = 0.95);

/// Imputes every missing outcome as a failure (0) and fits the Emax model.
FitReport fit_nri(DataSpan data, bool firth = false, const NewtonControls& controls = {},
                  double level = 0.95);

/// The dataset with missing outcomes replaced by 0.
std::vector<TrialRecord> impute_nonresponders(DataSpan data);

}  // namespace emaxem
