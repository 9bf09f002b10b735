#include "semapop/checkpoint.hpp"

#include "semapop/io_util.hpp"

#include <stdexcept>

#include "json.hpp"

namespace semapop {

const Matrix& ModelCheckpoint::tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    return it->second;
}

std::string ModelCheckpoint::flag(const std::string& name) const {
    auto it = flags.find(name);
    if (it == flags.end()) throw std::runtime_error("checkpoint is missing flag '" + name + "'");
    return it->second;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format_version"] = ckpt.format_version;
    manifest["backbone"] = ckpt.backbone;
    const std::string schema_json = schema_to_json(ckpt.schema);
    manifest["schema"] = nlohmann::json::parse(schema_json);
    manifest["schema_hash"] = hex64(fnv1a64(schema_json));
    manifest["marginal_spec"] = nlohmann::json::parse(marginal_spec_to_json(ckpt.marginal_spec));
    manifest["flags"] = ckpt.flags;
    manifest["config_echo"] =
        ckpt.config_echo.empty() ? nlohmann::json() : nlohmann::json::parse(ckpt.config_echo);
    manifest["tensors"] = nlohmann::json::object();
    for (const auto& [name, tensor] : ckpt.tensors) {
        const std::string file = name + ".f32";
        write_f32_tensor(dir / file, tensor);
        manifest["tensors"][name] = {{"file", file}, {"rows", tensor.rows()}, {"cols", tensor.cols()}};
    }
    write_file(dir / "manifest.json", manifest.dump(2));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    nlohmann::json manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
    ModelCheckpoint ckpt;
    ckpt.format_version = manifest.at("format_version").get<int>();
    if (ckpt.format_version != 1)
        throw std::runtime_error("unsupported checkpoint format version " +
                                 std::to_string(ckpt.format_version));
    ckpt.backbone = manifest.at("backbone").get<std::string>();
    const std::string schema_json = manifest.at("schema").dump();
    ckpt.schema = parse_schema_json(schema_json);
    const std::string stored_hash = manifest.at("schema_hash").get<std::string>();
    if (stored_hash != hex64(fnv1a64(schema_to_json(ckpt.schema))))
        throw std::runtime_error("checkpoint schema hash mismatch");
    ckpt.marginal_spec = parse_marginal_spec_json(manifest.at("marginal_spec").dump());
    ckpt.flags = manifest.at("flags").get<std::map<std::string, std::string>>();
    if (!manifest.at("config_echo").is_null()) ckpt.config_echo = manifest["config_echo"].dump();
    for (const auto& [name, meta] : manifest.at("tensors").items()) {
        try {
            ckpt.tensors[name] = read_f32_tensor(dir / meta.at("file").get<std::string>());
        } catch (const std::exception& e) {
            throw std::runtime_error("failed to read tensor '" + name + "': " + e.what());
        }
        const auto& t = ckpt.tensors[name];
        if (t.rows() != meta.at("rows").get<Index>() || t.cols() != meta.at("cols").get<Index>())
            throw std::runtime_error("tensor '" + name + "' shape does not match manifest");
        if (!t.allFinite()) throw std::runtime_error("tensor '" + name + "' has non-finite values");
    }
    return ckpt;
}

} // namespace semapop
