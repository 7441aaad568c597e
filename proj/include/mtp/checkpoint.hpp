#pragma once

#include "mtp/model.hpp"

#include <memory>
#include <string>

namespace mtp {

inline constexpr char kCheckpointMagic[] = "MTPB1";

/// Binary container: magic, backbone config, strategy, then
/// name -> shape -> row-major f64 payload per parameter.
void save_checkpoint(const std::string& path, const Model& model);

/// Rebuilds the model from the stored config and loads all parameters.
/// Throws std::runtime_error naming the expected "MTPB1" magic on mismatch.
std::unique_ptr<Model> load_checkpoint(const std::string& path);

}  // namespace mtp
