#include "ltm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace ltm {

namespace {

constexpr char kMagic[4] = {'L', 'T', 'M', 'C'};
constexpr uint32_t kVersion = 1;

void require_little_endian() {
    const uint32_t probe = 1;
    uint8_t first;
    std::memcpy(&first, &probe, 1);
    if (first != 1) {
        throw IoError("checkpoint container requires a little-endian host");
    }
}

template <class T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) {
        throw IoError(std::string("container: truncated while reading ") + what);
    }
    return v;
}

}  // namespace

void Container::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : header) {
        if (k == key) {
            v = value;
            return;
        }
    }
    header.emplace_back(key, value);
}

std::optional<std::string> Container::get(const std::string& key) const {
    for (const auto& [k, v] : header) {
        if (k == key) {
            return v;
        }
    }
    return std::nullopt;
}

int64_t Container::get_int(const std::string& key) const {
    auto v = get(key);
    if (!v) {
        throw IoError("container header missing key '" + key + "'");
    }
    return std::stoll(*v);
}

double Container::get_double(const std::string& key) const {
    auto v = get(key);
    if (!v) {
        throw IoError("container header missing key '" + key + "'");
    }
    return std::stod(*v);
}

const NamedTensorData* Container::find_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) {
            return &t;
        }
    }
    return nullptr;
}

void write_container(const std::string& path, const Container& c) {
    require_little_endian();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    os.write(kMagic, 4);
    write_pod<uint32_t>(os, kVersion);
    std::ostringstream hdr;
    for (const auto& [k, v] : c.header) {
        hdr << k << " = " << v << "\n";
    }
    const std::string htext = hdr.str();
    write_pod<uint64_t>(os, htext.size());
    os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, t] : c.tensors) {
        write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape.size()));
        for (int64_t d : t.shape) {
            write_pod<uint64_t>(os, static_cast<uint64_t>(d));
        }
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!os) {
        throw IoError("failed while writing '" + path + "'");
    }
}

Container read_container(const std::string& path) {
    require_little_endian();
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("'" + path + "' is not a container file (bad magic)");
    }
    const uint32_t version = read_pod<uint32_t>(is, "version");
    if (version != kVersion) {
        throw IoError("container version " + std::to_string(version) + " unsupported");
    }
    const uint64_t hlen = read_pod<uint64_t>(is, "header length");
    std::string htext(hlen, '\0');
    is.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!is) {
        throw IoError("container: truncated header");
    }
    Container c;
    std::istringstream hs(htext);
    std::string line;
    while (std::getline(hs, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) {
            continue;
        }
        c.header.emplace_back(line.substr(0, eq), line.substr(eq + 3));
    }
    while (true) {
        uint32_t name_len;
        is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        if (is.eof()) {
            break;
        }
        if (!is) {
            throw IoError("container: truncated tensor name length");
        }
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const uint32_t rank = read_pod<uint32_t>(is, "tensor rank");
        NamedTensorData t;
        int64_t numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            const uint64_t d = read_pod<uint64_t>(is, "tensor dim");
            t.shape.push_back(static_cast<int64_t>(d));
            numel *= static_cast<int64_t>(d);
        }
        t.data.resize(static_cast<size_t>(numel));
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!is) {
            throw IoError("container: truncated tensor data for '" + name + "'");
        }
        c.tensors.emplace_back(std::move(name), std::move(t));
    }
    return c;
}

// ============================================================================
// Model checkpoints
// ============================================================================

void header_from_config(Container& c, const ModelConfig& cfg) {
    std::ostringstream rb, fm;
    rb.precision(17);
    fm.precision(17);
    rb << cfg.rope_base;
    fm << cfg.ffn_mult;
    c.set("n_layers", std::to_string(cfg.n_layers));
    c.set("hidden", std::to_string(cfg.hidden));
    c.set("n_heads", std::to_string(cfg.n_heads));
    c.set("n_latents_per_layer", std::to_string(cfg.n_latents_per_layer));
    c.set("vocab", std::to_string(cfg.vocab));
    c.set("window_k", std::to_string(cfg.window_k));
    c.set("max_seq_len", std::to_string(cfg.max_seq_len));
    c.set("rope_base", rb.str());
    c.set("ffn_mult", fm.str());
}

ModelConfig config_from_header(const Container& c) {
    ModelConfig cfg;
    cfg.n_layers = c.get_int("n_layers");
    cfg.hidden = c.get_int("hidden");
    cfg.n_heads = c.get_int("n_heads");
    cfg.n_latents_per_layer = c.get_int("n_latents_per_layer");
    cfg.vocab = c.get_int("vocab");
    cfg.window_k = c.get_int("window_k");
    cfg.max_seq_len = c.get_int("max_seq_len");
    cfg.rope_base = c.get_double("rope_base");
    cfg.ffn_mult = c.get_double("ffn_mult");
    cfg.validate();
    return cfg;
}

template <class S>
void add_params_to_container(Container& c, const DecoderParamsT<S>& params) {
    for (const auto& [name, t] : params.named_tensors()) {
        NamedTensorData nt;
        nt.shape = t->shape();
        nt.data.assign(t->data().begin(), t->data().end());
        c.tensors.emplace_back(name, std::move(nt));
    }
}

template <class S>
DecoderParamsT<S> params_from_container(const Container& c) {
    const ModelConfig cfg = config_from_header(c);
    // Build a skeleton with the right shapes, then fill from the container.
    DecoderParamsT<S> params = init_params<S>(cfg, 0);
    for (auto& [name, t] : params.named_tensors()) {
        const NamedTensorData* src = c.find_tensor(name);
        if (src == nullptr) {
            throw IoError("checkpoint missing tensor '" + name + "'");
        }
        if (src->shape != t->shape()) {
            throw IoError("checkpoint tensor '" + name + "' has wrong shape for its config");
        }
        auto dst = t->data_mut();
        for (size_t i = 0; i < dst.size(); ++i) {
            dst[i] = static_cast<S>(src->data[i]);
        }
    }
    return params;
}

template <class S>
void save_checkpoint(const std::string& path, const DecoderParamsT<S>& params, int64_t step) {
    Container c;
    header_from_config(c, params.config);
    c.set("step", std::to_string(step));
    add_params_to_container(c, params);
    write_container(path, c);
}

template <class S>
DecoderParamsT<S> load_checkpoint(const std::string& path, int64_t* step_out) {
    Container c = read_container(path);
    if (step_out != nullptr) {
        *step_out = c.get_int("step");
    }
    return params_from_container<S>(c);
}

#define LTM_INSTANTIATE_CHECKPOINT(S)                                                     \
    template void add_params_to_container<S>(Container&, const DecoderParamsT<S>&);       \
    template DecoderParamsT<S> params_from_container<S>(const Container&);                \
    template void save_checkpoint<S>(const std::string&, const DecoderParamsT<S>&,        \
                                     int64_t);                                            \
    template DecoderParamsT<S> load_checkpoint<S>(const std::string&, int64_t*);

LTM_INSTANTIATE_CHECKPOINT(float)
LTM_INSTANTIATE_CHECKPOINT(double)

#undef LTM_INSTANTIATE_CHECKPOINT

}  // namespace ltm
