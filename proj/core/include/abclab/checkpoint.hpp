#pragma once

#include <memory>
#include <string>

#include "abclab/model.hpp"

namespace abclab {

// Versioned binary container: magic "ABCK1", a text header carrying the model
// config and step counter, then named tensors as row-major little-endian
// 32-bit floats (parameters first, Adam moments after). Round-trips
// bit-exactly.
void save_checkpoint(Transformer& model, const std::string& path);
std::unique_ptr<Transformer> load_checkpoint(const std::string& path);

std::string config_to_text(const ModelConfig& cfg);
ModelConfig config_from_text(const std::string& text);

}  // namespace abclab
