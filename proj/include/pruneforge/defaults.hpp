#pragma once

#include <cstddef>

namespace pruneforge::desk {

// Settings for small presets (tinyvgg) trained from scratch on desk-scale
// data. The reference settings (RetrainConfig::reference) assume a large
// pretrained network and are too small to move a freshly trained model.

inline constexpr double kBaselineRate = 0.03;
inline constexpr std::size_t kBaselineEpochs = 40;
inline constexpr std::size_t kBatchSize = 16;
/// Progressive, complete and final retraining. The reconstruction objective has
/// unit-norm per-image gradients, so it needs many small steps.
inline constexpr std::size_t kRetrainBatchSize = 4;
/// Layer-1 progressive rate; deeper layers are banded by kernel count.
inline constexpr double kProgressiveBaseRate = 7e-4;
inline constexpr double kFinalRate = 0.01;
inline constexpr double kCompleteRate = 0.01;
inline constexpr std::size_t kProgressiveEpochs = 40;
inline constexpr std::size_t kFinalEpochs = 50;

inline constexpr const char* kDataset =
    "synthetic:classes=3,per_class=200,size=16,channels=1,noise=0.15,seed=7";

}  // namespace pruneforge::desk
