#pragma once

#include <complex>
#include <memory>
#include <vector>

#include "bevloc/feature_map.hpp"

namespace bevloc {

/// Multi-channel cross-correlation of a template against a reference,
/// summed over channels, with zero padding at the borders:
///   out(dy, dx) = sum_{y,x,c} reference(y+dy, x+dx, c) * template(y, x, c).
/// The output covers every offset with a nonzero overlap,
/// dy in [-(th-1), H-1], dx in [-(tw-1), W-1], as a single plane.
///
/// Computed per channel in the frequency domain (real-to-complex transforms
/// with next-power-of-two padding) and summed. Template dims must not exceed
/// reference dims and channel counts must match (std::invalid_argument).
CorrelationMap fft_cross_correlate(const FeatureMap& reference, const FeatureMap& tpl);

/// Reusable correlation pipeline for one reference and many same-sized
/// templates (the reference spectrum is transformed once). Single-owner:
/// not safe for concurrent calls on one instance; distinct instances are
/// independent.
class CorrelationEngine {
 public:
  CorrelationEngine(const FeatureMap& reference, int template_height, int template_width);
  ~CorrelationEngine();
  CorrelationEngine(const CorrelationEngine&) = delete;
  CorrelationEngine& operator=(const CorrelationEngine&) = delete;

  CorrelationMap correlate(const FeatureMap& tpl);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace bevloc
