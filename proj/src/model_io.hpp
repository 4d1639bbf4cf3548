#pragma once

#include "common.hpp"
#include "data.hpp"
#include "mtl.hpp"

#include <string>

namespace mtlhmb {

/// A trained multi-task model plus everything needed to apply it to raw-scale
/// data: the standardization fitted at training time and the split it used.
struct TrainedMtlModel {
  MtlModel model;
  StandardizationStats stats;
  SplitSpec split;
};

inline constexpr int kModelFormatVersion = 1;

/// JSON model file with a format-version header; doubles are written with 17
/// significant digits and round-trip exactly.
void save_model(const std::string& path, const TrainedMtlModel& trained);
TrainedMtlModel load_model(const std::string& path);

}  // namespace mtlhmb
