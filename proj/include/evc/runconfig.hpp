#pragma once

#include "evc/config.hpp"
#include "evc/curriculum.hpp"
#include "evc/models.hpp"

namespace evc {

// Size knobs resolved from a run configuration; envelope_bins is supplied by
// the caller (it follows the feature cache's fft size).
SuiteHyper hyper_from_config(const KeyValueConfig& kv, std::size_t envelope_bins);

TrainingRunConfig training_config_from_config(const KeyValueConfig& kv);

// The resolved key set written into the run directory.
KeyValueConfig resolved_training_config(const TrainingRunConfig& cfg,
                                        const KeyValueConfig& kv);

}  // namespace evc
