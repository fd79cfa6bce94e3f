#pragma once

// Binary checkpoint container: header with format version, architecture
// fields and a named tensor directory (shapes + byte offsets), followed by
// raw little-endian float32 data per tensor.

#include <string>
#include <vector>

#include "lst/model.hpp"

namespace lst {

struct CheckpointTensor {
    std::string name;
    Shape shape;
    std::vector<double> values;  // stored on disk as float32
};

struct Checkpoint {
    ModelConfig config;
    std::vector<CheckpointTensor> tensors;

    const CheckpointTensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const std::vector<NamedTensor>& tensors);
Checkpoint read_checkpoint(const std::string& path);

void save_model(const std::string& path, ModelParams& params,
                const std::vector<NamedTensor>& extra_tensors = {});

// Rebuilds a model from a checkpoint. Throws std::runtime_error when the
// stored tensor set does not match the stored architecture.
ModelParams load_model(const Checkpoint& ckpt);
ModelParams load_model(const std::string& path);

}  // namespace lst
