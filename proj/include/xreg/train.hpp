#pragma once

#include <string>
#include <vector>

#include "xreg/pipeline.hpp"

namespace xreg {

struct TrainStepLog {
  int step;
  double coarse;
  double fine;
  double total;
};

struct TrainResult {
  std::vector<TrainStepLog> log;
  int steps = 0;
};

// Trains the toy extractor plus the matching head with the combined circle
// loss. Deterministic per cfg.seed; per-epoch learning-rate decay by
// (1 - cfg.train.decay). Throws TrainingDiverged on non-finite loss.
TrainResult train_toy(const Dataset& ds, ParamStore& store, const PipelineConfig& cfg,
                      const std::string& log_path = "");

}  // namespace xreg
