#include "dpad/error.hpp"
#include "dpad/model.hpp"
#include "dpad/serialization.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

namespace dpad {

namespace {

using nlohmann::ordered_json;

constexpr const char * kFormat = "dpad-checkpoint";
constexpr int kVersion = 1;

std::filesystem::path header_path(const std::filesystem::path & stem) {
    auto p = stem;
    p += ".json";
    return p;
}

std::filesystem::path payload_path(const std::filesystem::path & stem) {
    auto p = stem;
    p += ".bin";
    return p;
}

// Fixed tensor order shared by save and load.
template <typename Fn>
void for_each_tensor(const Weights & w, Fn && fn) {
    auto vec = [&](const std::string & name, const std::vector<float> & v) {
        fn(name, Matrix(1, v.size(), v));
    };
    fn("embedding", w.embedding);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const auto & lw = w.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        vec(p + "attn_norm", lw.attn_norm);
        fn(p + "wq", lw.wq);
        fn(p + "wk", lw.wk);
        fn(p + "wv", lw.wv);
        fn(p + "wo", lw.wo);
        vec(p + "ffn_norm", lw.ffn_norm);
        fn(p + "w1", lw.w1);
        fn(p + "w2", lw.w2);
    }
    vec("final_norm", w.final_norm);
    fn("output", w.output);
}

void write_le(std::ofstream & out, float v) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    unsigned char bytes[4];
    for (int i = 0; i < 4; ++i) {
        bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xffu);
    }
    out.write(reinterpret_cast<const char *>(bytes), 4);
}

float read_le(const unsigned char * bytes) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) {
        bits |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
    }
    return std::bit_cast<float>(bits);
}

} // namespace

void save_checkpoint(const Model & model, const std::filesystem::path & stem) {
    ordered_json header;
    header["format"] = kFormat;
    header["version"] = kVersion;
    header["config"] = model.config();
    ordered_json tensors = ordered_json::array();
    std::size_t count = 0;
    for_each_tensor(model.weights(), [&](const std::string & name, const Matrix & m) {
        tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
        count += m.rows() * m.cols();
    });
    header["tensors"] = tensors;
    header["float_count"] = count;

    std::ofstream bin(payload_path(stem), std::ios::binary | std::ios::trunc);
    if (!bin) {
        throw Error("cannot open " + payload_path(stem).string() + " for writing");
    }
    for_each_tensor(model.weights(), [&](const std::string &, const Matrix & m) {
        for (float v : m.data()) {
            write_le(bin, v);
        }
    });
    std::ofstream js(header_path(stem), std::ios::trunc);
    if (!js) {
        throw Error("cannot open " + header_path(stem).string() + " for writing");
    }
    js << header.dump(2) << '\n';
}

Model load_checkpoint(const std::filesystem::path & stem) {
    std::ifstream js(header_path(stem));
    if (!js) {
        throw Error("cannot open checkpoint header " + header_path(stem).string());
    }
    ordered_json header;
    try {
        header = ordered_json::parse(js);
    } catch (const nlohmann::json::exception & e) {
        throw ConfigError("checkpoint header: " + std::string(e.what()));
    }
    if (header.value("format", "") != kFormat || header.value("version", 0) != kVersion) {
        throw ConfigError("checkpoint header: unsupported format");
    }
    const ModelConfig config = header.at("config").get<ModelConfig>();
    config.validate();

    std::ifstream bin(payload_path(stem), std::ios::binary);
    if (!bin) {
        throw Error("cannot open checkpoint payload " + payload_path(stem).string());
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    const auto expected = header.at("float_count").get<std::size_t>();
    if (bytes.size() != expected * 4) {
        throw ConfigError("checkpoint payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(expected * 4));
    }

    std::size_t offset = 0;
    auto next = [&](std::size_t rows, std::size_t cols) {
        if (offset + rows * cols * 4 > bytes.size()) {
            throw ConfigError("checkpoint payload is shorter than its config requires");
        }
        std::vector<float> data(rows * cols);
        for (auto & v : data) {
            v = read_le(bytes.data() + offset);
            offset += 4;
        }
        return Matrix(rows, cols, std::move(data));
    };
    auto next_vec = [&](std::size_t n) {
        Matrix m = next(1, n);
        return std::vector<float>(m.data().begin(), m.data().end());
    };

    const auto dim = static_cast<std::size_t>(config.dim);
    const auto vocab = static_cast<std::size_t>(config.vocab_size);
    Weights w;
    w.embedding = next(vocab, dim);
    for (int l = 0; l < config.n_layers; ++l) {
        LayerWeights lw;
        lw.attn_norm = next_vec(dim);
        lw.wq = next(dim, dim);
        lw.wk = next(dim, dim);
        lw.wv = next(dim, dim);
        lw.wo = next(dim, dim);
        lw.ffn_norm = next_vec(dim);
        lw.w1 = next(dim, 4 * dim);
        lw.w2 = next(4 * dim, dim);
        w.layers.push_back(std::move(lw));
    }
    w.final_norm = next_vec(dim);
    w.output = next(dim, vocab);
    if (offset != bytes.size()) {
        throw ConfigError("checkpoint payload size does not match its config");
    }
    return Model(config, std::move(w));
}

} // namespace dpad
