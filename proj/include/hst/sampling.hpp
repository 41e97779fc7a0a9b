#pragma once

#include <cstddef>
#include <vector>

namespace hst {

// Fixed-length frame selection over an untrimmed clip. Indices are 1-based.
struct SampleIndices {
  std::vector<std::size_t> indices;
  std::size_t source_length = 0;
};

// i_t = floor(N / T * t) for t = 1..T, clamped below to 1 so clips shorter
// than T repeat frames instead of producing index 0.
SampleIndices sample_indices(long long n_frames, long long t_target);

}  // namespace hst
