#pragma once

#include <filesystem>
#include <iosfwd>

#include "weatherseg/config.hpp"
#include "weatherseg/trainer.hpp"

namespace weatherseg {

// On-disk layout: one line of JSON (dims, seed, step, config, histories and a
// tensor index of {name, shape, offset}), then the tensors as raw
// little-endian float64 arrays in index order. Offsets count doubles from the
// start of the data block.
struct Checkpoint {
  TrainConfig config;
  TrainState state;
};

void write_checkpoint(std::ostream& os, const TrainConfig& cfg, const TrainState& state);
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg,
                     const TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace weatherseg
