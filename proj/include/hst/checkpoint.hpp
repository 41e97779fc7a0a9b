#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hst/train.hpp"

namespace hst {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const TrainState& state);
TrainState decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const TrainState& state, const std::string& path);
// Missing file -> Io error "checkpoint not found: <path>".
TrainState load_checkpoint(const std::string& path);

}  // namespace hst
