#ifndef ADVCL_CHECKPOINT_HPP
#define ADVCL_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "model.hpp"
#include "version.hpp"

// Checkpoint layout (all integers little-endian):
//   8 bytes   magic "ADVCLCKP"
//   u32       format version (1)
//   u64       header length L
//   L bytes   UTF-8 JSON header
//   payload   float64 values of every tensor listed in header["tensors"], in order
namespace advcl {

inline constexpr char kCheckpointMagic[8] = {'A', 'D', 'V', 'C', 'L', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointFormat = 1;

[[nodiscard]] inline nlohmann::json to_json(const EncoderConfig& c)
{
    return {{"architecture", to_string(c.architecture)},
            {"feature_dim", c.feature_dim},
            {"projection_dim", c.projection_dim},
            {"input_channels", c.input_channels},
            {"input_size", c.input_size},
            {"width", c.width},
            {"bn_branches", c.bn_branches},
            {"init_seed", c.init_seed}};
}

[[nodiscard]] inline EncoderConfig encoder_config_from_json(const nlohmann::json& j)
{
    EncoderConfig c;
    c.architecture = parse_architecture(j.at("architecture").get<std::string>());
    c.feature_dim = j.at("feature_dim").get<std::size_t>();
    c.projection_dim = j.at("projection_dim").get<std::size_t>();
    c.input_channels = j.at("input_channels").get<std::size_t>();
    c.input_size = j.at("input_size").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.bn_branches = j.at("bn_branches").get<std::size_t>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    return c;
}

struct Checkpoint {
    std::unique_ptr<RobustModel> model;
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, Tensor> extra;  // optimizer state and similar
    std::string code_version;
    std::string config_hash;
};

// Writes via a temporary file and rename so a crash never leaves a torn checkpoint.
inline void save_checkpoint(const std::filesystem::path& path, RobustModel& model, const nlohmann::json& meta = {},
                            const std::map<std::string, Tensor>& extra = {}, const std::string& config_hash = "")
{
    nlohmann::json tensors = nlohmann::json::array();
    std::vector<const Tensor*> payload;
    for (auto* p : model.parameters()) {
        tensors.push_back({{"name", p->name}, {"shape", p->value().shape()}, {"kind", "param"}});
        payload.push_back(&p->value());
    }
    for (const auto& b : model.buffers()) {
        tensors.push_back({{"name", b.name}, {"shape", b.tensor->shape()}, {"kind", "buffer"}});
        payload.push_back(b.tensor);
    }
    for (const auto& [name, t] : extra) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"kind", "extra"}});
        payload.push_back(&t);
    }
    nlohmann::json header = {{"format", "advcl-checkpoint"},
                             {"code_version", kCodeVersion},
                             {"config_hash", config_hash},
                             {"encoder", to_json(model.config())},
                             {"pseudo_heads", model.pseudo_head_widths()},
                             {"num_classes", model.num_classes()},
                             {"meta", meta.is_null() ? nlohmann::json::object() : meta},
                             {"tensors", tensors}};
    const std::string text = header.dump();

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw IoError("cannot write checkpoint " + tmp.string());
        }
        out.write(kCheckpointMagic, 8);
        const std::uint32_t fmt = kCheckpointFormat;
        out.write(reinterpret_cast<const char*>(&fmt), sizeof fmt);
        const std::uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const Tensor* t : payload) {
            out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->numel() * sizeof(Real)));
        }
        if (!out) {
            throw IoError("failed writing checkpoint " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

[[nodiscard]] inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    char magic[8] = {};
    std::uint32_t fmt = 0;
    std::uint64_t len = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&fmt), sizeof fmt);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw ConfigError("not an advcl checkpoint: " + path.string());
    }
    if (fmt != kCheckpointFormat) {
        throw ConfigError("unsupported checkpoint format " + std::to_string(fmt));
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }

    Checkpoint ck;
    ck.code_version = header.value("code_version", "");
    ck.config_hash = header.value("config_hash", "");
    ck.meta = header.value("meta", nlohmann::json::object());
    ck.model = std::make_unique<RobustModel>(encoder_config_from_json(header.at("encoder")));
    const auto widths = header.at("pseudo_heads").get<std::vector<std::size_t>>();
    if (!widths.empty()) {
        ck.model->attach_pseudo_heads(widths, 0);
    }
    const auto classes = header.at("num_classes").get<std::size_t>();
    if (classes > 0) {
        ck.model->attach_classifier(classes, 0);
    }

    std::map<std::string, Tensor*> slots;
    for (auto* p : ck.model->parameters()) {
        slots[p->name] = &p->value();
    }
    for (const auto& b : ck.model->buffers()) {
        slots[b.name] = b.tensor;
    }
    for (const auto& entry : header.at("tensors")) {
        const auto name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<Shape>();
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(Real)));
        if (!in) {
            throw IoError("truncated checkpoint payload in " + path.string());
        }
        if (entry.at("kind") == "extra") {
            ck.extra.emplace(name, std::move(t));
            continue;
        }
        auto it = slots.find(name);
        if (it == slots.end() || it->second->shape() != shape) {
            throw ConfigError("checkpoint tensor '" + name + "' does not match the model layout");
        }
        *it->second = std::move(t);
        slots.erase(it);
    }
    if (!slots.empty()) {
        throw ConfigError("checkpoint is missing tensor '" + slots.begin()->first + "'");
    }
    return ck;
}

} // namespace advcl

#endif // ADVCL_CHECKPOINT_HPP
