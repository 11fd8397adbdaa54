#pragma once

#include <string>

#include "nucleo/blocks.hpp"

namespace nucleo {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary checkpoint: magic "NUCV1\0", little-endian u32 entry count, then per
// entry u32 name length + name bytes, u8 dtype code (0 = f32), u8 rank, u32
// extents; followed by f32 payloads in manifest order and a trailing CRC32 of
// the payload bytes. Parameters and running-statistic buffers both ship.
void save_checkpoint(const Registry& reg, const std::string& path);
void load_checkpoint(Registry& reg, const std::string& path);

}  // namespace nucleo
