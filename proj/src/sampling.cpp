#include "hst/sampling.hpp"

#include <algorithm>

#include "hst/error.hpp"

namespace hst {

SampleIndices sample_indices(long long n_frames, long long t_target) {
  require(n_frames >= 1, "sample_indices: frame count must be positive");
  require(t_target >= 1, "sample_indices: target length must be positive");
  SampleIndices out;
  out.source_length = static_cast<std::size_t>(n_frames);
  out.indices.reserve(static_cast<std::size_t>(t_target));
  for (long long t = 1; t <= t_target; ++t) {
    // integer form of floor(N/T * t); exact for every N, T
    const long long i = (n_frames * t) / t_target;
    out.indices.push_back(static_cast<std::size_t>(std::max(1LL, i)));
  }
  return out;
}

}  // namespace hst
