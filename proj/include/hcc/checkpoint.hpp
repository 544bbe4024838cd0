#pragma once

// Binary model checkpoints.
//
// Layout (all integers and reals little-endian):
//   "HCCM" | u32 version (1)
//   config block   fixed sequence of i32/u32/u64/f64 fields (see checkpoint.cpp)
//   shape table    u32 count, then per tensor: u32 name length, name bytes,
//                  u32 rows, u32 cols
//   weights        f64 values, tensors in table order, column-major
//   scaler         u32 dim, f64 input_mean[dim], f64 input_std[dim],
//                  f64 uncertainty mean/std, f64 progress mean/std

#include <filesystem>

#include "hcc/model.hpp"

namespace hcc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const HccModel& model, const std::filesystem::path& path);
HccModel load_checkpoint(const std::filesystem::path& path);

}  // namespace hcc
