// Copyright 2026 The noisesep authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "noisesep/separator.hpp"
#include "noisesep/tensor.hpp"

namespace noisesep {

// Flat binary container for named float64 arrays, used for parameter
// checkpoints. Layout (all integers and floats little-endian):
//
//   bytes 0..7   magic "NSEPCKPT"
//   u32          format version (currently 1)
//   u64          header size in bytes, then that many bytes of UTF-8
//                "key=value\n" lines (model config plus free-form entries)
//   u64          record count
//   per record:  u64 name size, name bytes,
//                u32 ndim, ndim x i64 extents,
//                prod(extents) x f64 values
struct CheckpointRecord {
  std::string name;
  Tensor values;
};

struct Checkpoint {
  std::map<std::string, std::string> header;
  std::vector<CheckpointRecord> records;

  // nullptr when no record has that name.
  const Tensor* find(const std::string& name) const;
};

inline constexpr char kCheckpointMagic[] = "NSEPCKPT";
inline constexpr uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

// Serializes a separation model config as header entries and back.
void put_config(Checkpoint& ckpt, const SeparatorConfig& cfg);
SeparatorConfig config_from_checkpoint(const Checkpoint& ckpt);

// Snapshot of a model: config header plus one record per parameter.
Checkpoint model_checkpoint(SeparatorModel& model);
// Copies matching records into the model's parameters. Every parameter must
// be present with its exact shape.
void load_model_parameters(SeparatorModel& model, const Checkpoint& ckpt);
// Builds a model from the stored config, then loads its parameters.
SeparatorModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace noisesep
