#include "lst/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lst {

namespace {

constexpr uint32_t kMagic = 0x4354534Cu;  // "LSTC"
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ostream& out, uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

uint64_t read_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
    for (const CheckpointTensor& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const std::vector<NamedTensor>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
    write_u32(out, kMagic);
    write_u32(out, kVersion);
    write_u32(out, static_cast<uint32_t>(config.vocab_size));
    write_u32(out, static_cast<uint32_t>(config.hidden_dim));
    write_u32(out, static_cast<uint32_t>(config.n_layers));
    write_u32(out, static_cast<uint32_t>(config.n_heads));
    write_u32(out, static_cast<uint32_t>(config.max_context));
    write_u32(out, static_cast<uint32_t>(tensors.size()));
    uint64_t offset = 0;
    for (const NamedTensor& nt : tensors) {
        write_u32(out, static_cast<uint32_t>(nt.name.size()));
        out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        const Shape& s = nt.tensor.shape();
        write_u32(out, static_cast<uint32_t>(s.size()));
        for (int64_t d : s) write_u64(out, static_cast<uint64_t>(d));
        write_u64(out, offset);
        offset += static_cast<uint64_t>(nt.tensor.size()) * sizeof(float);
    }
    for (const NamedTensor& nt : tensors) {
        std::vector<float> buf(nt.tensor.values().begin(), nt.tensor.values().end());
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    if (read_u32(in) != kMagic) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    const uint32_t version = read_u32(in);
    if (version != kVersion) {
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.config.vocab_size = static_cast<int>(read_u32(in));
    ckpt.config.hidden_dim = static_cast<int>(read_u32(in));
    ckpt.config.n_layers = static_cast<int>(read_u32(in));
    ckpt.config.n_heads = static_cast<int>(read_u32(in));
    ckpt.config.max_context = static_cast<int>(read_u32(in));
    const uint32_t n_tensors = read_u32(in);
    std::vector<uint64_t> offsets;
    for (uint32_t i = 0; i < n_tensors; ++i) {
        CheckpointTensor t;
        const uint32_t name_len = read_u32(in);
        t.name.resize(name_len);
        in.read(t.name.data(), name_len);
        const uint32_t ndim = read_u32(in);
        int64_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            t.shape.push_back(static_cast<int64_t>(read_u64(in)));
            numel *= t.shape.back();
        }
        offsets.push_back(read_u64(in));
        t.values.resize(static_cast<size_t>(numel));
        ckpt.tensors.push_back(std::move(t));
    }
    if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
    const std::streampos data_start = in.tellg();
    for (uint32_t i = 0; i < n_tensors; ++i) {
        CheckpointTensor& t = ckpt.tensors[i];
        in.seekg(data_start + static_cast<std::streamoff>(offsets[i]));
        std::vector<float> buf(t.values.size());
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in) throw std::runtime_error("checkpoint: truncated data in " + path);
        for (size_t j = 0; j < buf.size(); ++j) {
            t.values[j] = static_cast<double>(buf[j]);
        }
    }
    return ckpt;
}

void save_model(const std::string& path, ModelParams& params,
                const std::vector<NamedTensor>& extra_tensors) {
    std::vector<NamedTensor> tensors = params.named_params();
    for (const NamedTensor& nt : extra_tensors) tensors.push_back(nt);
    save_checkpoint(path, params.config, tensors);
}

ModelParams load_model(const Checkpoint& ckpt) {
    ModelParams params = ModelParams::init(ckpt.config, 0);
    for (NamedTensor& nt : params.named_params()) {
        const CheckpointTensor* stored = ckpt.find(nt.name);
        if (!stored) {
            throw std::runtime_error("checkpoint: missing tensor " + nt.name);
        }
        if (stored->shape != nt.tensor.shape()) {
            throw std::runtime_error("checkpoint: shape mismatch for " + nt.name);
        }
        nt.tensor.mutable_values() = stored->values;
    }
    return params;
}

ModelParams load_model(const std::string& path) {
    return load_model(read_checkpoint(path));
}

}  // namespace lst
