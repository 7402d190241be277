#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ltm/checkpoint.hpp"

namespace ltm {

// Byte-level vocabulary: ids 0..255 are raw bytes, then EOS and BOS.
struct Vocab {
    static constexpr int32_t eos = 256;
    static constexpr int32_t bos = 257;
    static constexpr int32_t size = 258;
};

// Pluggable tokenizer interface; a BPE implementation can drop in behind it.
class Tokenizer {
  public:
    virtual ~Tokenizer() = default;
    virtual std::vector<int32_t> tokenize(std::string_view text) const = 0;
    virtual std::string detokenize(std::span<const int32_t> ids) const = 0;
    virtual int64_t vocab_size() const = 0;
};

// Identity mapping on bytes. Reserved ids are never produced by tokenize;
// detokenize renders EOS as a configurable separator glyph and BOS as
// nothing.
class ByteTokenizer final : public Tokenizer {
  public:
    explicit ByteTokenizer(std::string eos_glyph = "\n") : eos_glyph_(std::move(eos_glyph)) {}
    std::vector<int32_t> tokenize(std::string_view text) const override;
    std::string detokenize(std::span<const int32_t> ids) const override;
    int64_t vocab_size() const override { return Vocab::size; }

  private:
    std::string eos_glyph_;
};

// ============================================================================
// Packing
// ============================================================================

struct PackedDataset {
    int64_t row_len = 0;
    std::vector<int32_t> tokens;          // rows() * row_len, wrapped stream
    std::vector<int32_t> tail;            // dropped partial row
    std::vector<int64_t> doc_boundaries;  // stream offset where each document starts

    int64_t rows() const {
        return row_len == 0 ? 0 : static_cast<int64_t>(tokens.size()) / row_len;
    }
    std::span<const int32_t> row(int64_t r) const {
        return {tokens.data() + r * row_len, static_cast<size_t>(row_len)};
    }
};

// stream = doc_0 ++ EOS ++ doc_1 ++ EOS ++ ... wrapped into rows of n_max;
// the final partial row is kept aside as tail.
PackedDataset pack_corpus(const std::vector<std::string>& docs, int64_t n_max);

// Deterministic shuffled batches of row indices for one epoch; the
// permutation is a pure function of (seed, epoch) and a short final batch
// is dropped.
std::vector<std::vector<int64_t>> epoch_batches(int64_t rows, int64_t batch_size, uint64_t seed,
                                                int64_t epoch);

// ============================================================================
// Corpus IO
// ============================================================================

// Directory of UTF-8 files (one document per file, sorted by filename) or a
// single file with blank-line document separators.
std::vector<std::string> load_corpus(const std::string& path);

struct CorpusSplit {
    std::vector<std::string> train;
    std::vector<std::string> valid;
};

// Last `valid_fraction` of documents become the validation split.
CorpusSplit split_corpus(std::vector<std::string> docs, double valid_fraction = 0.1);

// Dataset cache in the container format.
void save_dataset_cache(const std::string& path, const PackedDataset& ds);
PackedDataset load_dataset_cache(const std::string& path);

}  // namespace ltm
