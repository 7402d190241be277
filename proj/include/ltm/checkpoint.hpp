#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ltm/model.hpp"

namespace ltm {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ============================================================================
// Container format
// ============================================================================
//
// magic "LTMC" | u32 version | u64 header_len | header bytes (UTF-8,
// "key = value" lines) | tensors until EOF. Each tensor: u32 name_len,
// name bytes, u32 rank, u64 dims[rank], row-major little-endian f32 data.

struct NamedTensorData {
    std::vector<int64_t> shape;
    std::vector<float> data;
};

struct Container {
    std::vector<std::pair<std::string, std::string>> header;
    std::vector<std::pair<std::string, NamedTensorData>> tensors;

    void set(const std::string& key, const std::string& value);
    std::optional<std::string> get(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    const NamedTensorData* find_tensor(const std::string& name) const;
};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

// ============================================================================
// Model checkpoints
// ============================================================================

void header_from_config(Container& c, const ModelConfig& cfg);
ModelConfig config_from_header(const Container& c);

// Appends the parameter tensors (narrowed to f32 when S is double).
template <class S>
void add_params_to_container(Container& c, const DecoderParamsT<S>& params);

// Rebuilds parameters from a container; every tensor's shape must agree
// with the embedded config or the checkpoint is rejected.
template <class S>
DecoderParamsT<S> params_from_container(const Container& c);

template <class S>
void save_checkpoint(const std::string& path, const DecoderParamsT<S>& params, int64_t step);

template <class S>
DecoderParamsT<S> load_checkpoint(const std::string& path, int64_t* step_out = nullptr);

}  // namespace ltm
