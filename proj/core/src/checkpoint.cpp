#include "cvcs/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "cvcs/cvt_io.hpp"

namespace cvcs::net {

namespace {

constexpr char kMagic[4] = {'C', 'V', 'C', 'K'};

template <typename T>
void put(std::string& out, T v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
public:
    Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

    template <typename T>
    T get() {
        T v{};
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }

    std::string get_string(std::size_t n) { return std::string(take(n), n); }

    bool done() const { return pos_ == bytes_.size(); }

private:
    const char* take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw Error("checkpoint: truncated data in " + source_);
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    const std::string& bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"extractor_channels", c.extractor_channels},
            {"camsel", to_string(c.camsel)},
            {"noise", to_string(c.noise)},
            {"decoder_channels", c.decoder_channels},
            {"selection_channels", c.selection_channels},
            {"density_scale", c.density_scale}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    if (!j.is_object()) throw Error("model config: expected a JSON object");
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "extractor_channels") c.extractor_channels = value.get<std::vector<int>>();
            else if (key == "camsel") c.camsel = parse_camsel(value.get<std::string>());
            else if (key == "noise") c.noise = parse_noise(value.get<std::string>());
            else if (key == "decoder_channels") c.decoder_channels = value.get<std::vector<int>>();
            else if (key == "selection_channels") {
                c.selection_channels = value.get<std::vector<int>>();
            } else if (key == "density_scale") {
                c.density_scale = value.get<double>();
            } else {
                throw Error("model config: unknown key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string serialize_model(const Model& model) {
    std::string out(kMagic, sizeof kMagic);
    const std::string header = config_to_json(model.config).dump();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    const auto named = model.params.named();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, tensor] : named) {
        std::ostringstream blob(std::ios::binary);
        write_cvt(blob, tensor, DType::F64);
        const std::string b = blob.str();
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint64_t>(out, b.size());
        out += b;
    }
    return out;
}

Model deserialize_model(const std::string& bytes, const std::string& source) {
    Reader r(bytes, source);
    if (r.get_string(4) != std::string(kMagic, 4)) throw Error("checkpoint: bad magic in " + source);
    const auto header_len = r.get<std::uint32_t>();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.get_string(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw Error("checkpoint: malformed config header in " + source + ": " + e.what());
    }
    const auto count = r.get<std::uint32_t>();
    std::map<std::string, Tensor> stored;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name = r.get_string(r.get<std::uint32_t>());
        const auto blob_len = r.get<std::uint64_t>();
        std::istringstream blob(r.get_string(blob_len), std::ios::binary);
        stored.emplace(name, read_cvt(blob, source + ":" + name));
    }
    if (!r.done()) throw Error("checkpoint: trailing bytes in " + source);

    // Build the expected layout, then copy the stored values into it.
    Model model = init_model(config_from_json(header), 0);
    for (auto& [name, tensor] : model.params.named()) {
        auto it = stored.find(name);
        if (it == stored.end()) throw Error("checkpoint: missing tensor '" + name + "' in " + source);
        if (it->second.shape() != tensor.shape()) {
            throw Error("checkpoint: tensor '" + name + "' has shape " +
                        shape_string(it->second.shape()) + ", expected " +
                        shape_string(tensor.shape()));
        }
        ensure_finite(it->second, ("checkpoint tensor " + name).c_str());
        std::copy(it->second.data().begin(), it->second.data().end(),
                  tensor.mutable_data().begin());
        stored.erase(it);
    }
    if (!stored.empty()) {
        throw Error("checkpoint: unexpected tensor '" + stored.begin()->first + "' in " + source);
    }
    return model;
}

void save_model(const std::filesystem::path& path, const Model& model) {
    write_file_atomic(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path) {
    auto is = open_for_read(path);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes, path.string());
}

}  // namespace cvcs::net
