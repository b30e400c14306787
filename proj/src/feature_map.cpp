#include "bevloc/feature_map.hpp"

#include <cmath>
#include <stdexcept>

namespace bevloc {

FeatureMap::FeatureMap(int h, int w, int c, float res, float fill)
    : height(h),
      width(w),
      channels(c),
      resolution(res),
      data(static_cast<std::size_t>(h) * w * c, fill) {
  if (h < 1 || w < 1 || c < 1) throw std::invalid_argument("feature map dims must be >= 1");
  if (!(res > 0.0f)) throw std::invalid_argument("feature map resolution must be > 0");
}

void FeatureMap::validate(const std::string& what) const {
  if (height < 1 || width < 1 || channels < 1)
    throw std::invalid_argument(what + ": dims must be >= 1");
  if (!(resolution > 0.0f) || !std::isfinite(resolution))
    throw std::invalid_argument(what + ": resolution must be positive and finite");
  if (data.size() != static_cast<std::size_t>(height) * width * channels)
    throw std::invalid_argument(what + ": data length does not match dims");
  for (float v : data)
    if (!std::isfinite(v)) throw std::invalid_argument(what + ": non-finite value");
}

}  // namespace bevloc
