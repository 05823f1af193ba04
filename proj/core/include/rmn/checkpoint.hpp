#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rmn/network.hpp"

namespace rmn {

/// Binary checkpoint: the "RMSK" magic, a u16 format version and a u32
/// entry count, then per entry a u16 name length, the name, a u8 dtype
/// (0 = f32, 1 = f64), a u8 rank, u32 extents and the raw values.
/// Everything is little-endian. Holds parameters and running statistics.
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  bool is_double = false;
  Shape shape;
};

struct CheckpointInfo {
  std::uint16_t version = 0;
  std::vector<CheckpointEntry> entries;
  std::string architecture;  // preset the entries match, empty if none
};

template <Scalar T>
void save_checkpoint(const Network<T>& net, const std::filesystem::path& path);

// Loads values into an existing network. Every network tensor must be
// present with a matching shape; values stored at the other precision are
// converted.
template <Scalar T>
void load_state(Network<T>& net, const std::filesystem::path& path);

// Builds the preset architecture the file was saved from and loads it.
template <Scalar T>
Network<T> load_checkpoint(const std::filesystem::path& path);

CheckpointInfo inspect_checkpoint(const std::filesystem::path& path);

extern template void save_checkpoint(const Network<float>&, const std::filesystem::path&);
extern template void save_checkpoint(const Network<double>&, const std::filesystem::path&);
extern template void load_state(Network<float>&, const std::filesystem::path&);
extern template void load_state(Network<double>&, const std::filesystem::path&);
extern template Network<float> load_checkpoint(const std::filesystem::path&);
extern template Network<double> load_checkpoint(const std::filesystem::path&);

}  // namespace rmn
