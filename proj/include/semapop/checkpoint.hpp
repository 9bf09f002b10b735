#pragma once

#include "semapop/marginal.hpp"
#include "semapop/schema.hpp"
#include "semapop/types.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace semapop {

// Self-describing model checkpoint: a manifest JSON plus one flat
// little-endian float32 binary (with shape sidecar) per named tensor.
struct ModelCheckpoint {
    int format_version = 1;
    std::string backbone; // "gan" | "vae"
    AttributeSchema schema;
    MarginalSpec marginal_spec;
    std::map<std::string, std::string> flags; // conditioning configuration
    std::string config_echo;                  // training config as JSON text
    std::map<std::string, Matrix> tensors;

    const Matrix& tensor(const std::string& name) const;
    std::string flag(const std::string& name) const;
};

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& dir);
ModelCheckpoint load_checkpoint(const std::filesystem::path& dir);

} // namespace semapop
