#include "ltm/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ltm/nn.hpp"

namespace ltm {

std::vector<int32_t> ByteTokenizer::tokenize(std::string_view text) const {
    std::vector<int32_t> out;
    out.reserve(text.size());
    for (unsigned char c : text) {
        out.push_back(static_cast<int32_t>(c));
    }
    return out;
}

std::string ByteTokenizer::detokenize(std::span<const int32_t> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (int32_t id : ids) {
        if (id >= 0 && id < 256) {
            out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
        } else if (id == Vocab::eos) {
            out += eos_glyph_;
        } else if (id == Vocab::bos) {
            // silent
        } else {
            throw ShapeError("detokenize: id " + std::to_string(id) + " out of vocabulary");
        }
    }
    return out;
}

// ============================================================================
// Packing
// ============================================================================

PackedDataset pack_corpus(const std::vector<std::string>& docs, int64_t n_max) {
    if (n_max < 1) {
        throw ConfigError("pack_corpus: n_max must be >= 1");
    }
    bool any_nonempty = false;
    for (const auto& d : docs) {
        if (!d.empty()) {
            any_nonempty = true;
            break;
        }
    }
    if (!any_nonempty) {
        throw ConfigError("pack_corpus: corpus has no non-empty documents");
    }
    ByteTokenizer tok;
    PackedDataset ds;
    ds.row_len = n_max;
    std::vector<int32_t> stream;
    for (const auto& d : docs) {
        ds.doc_boundaries.push_back(static_cast<int64_t>(stream.size()));
        auto ids = tok.tokenize(d);
        stream.insert(stream.end(), ids.begin(), ids.end());
        stream.push_back(Vocab::eos);
    }
    const int64_t rows = static_cast<int64_t>(stream.size()) / n_max;
    ds.tokens.assign(stream.begin(), stream.begin() + rows * n_max);
    ds.tail.assign(stream.begin() + rows * n_max, stream.end());
    return ds;
}

std::vector<std::vector<int64_t>> epoch_batches(int64_t rows, int64_t batch_size, uint64_t seed,
                                                int64_t epoch) {
    if (batch_size < 1 || batch_size > rows) {
        throw ConfigError("epoch_batches: batch_size " + std::to_string(batch_size) +
                          " invalid for " + std::to_string(rows) + " rows");
    }
    std::vector<int64_t> perm(static_cast<size_t>(rows));
    for (int64_t i = 0; i < rows; ++i) {
        perm[static_cast<size_t>(i)] = i;
    }
    Rng rng = Rng::stream({seed, static_cast<uint64_t>(epoch), 0x62617463ULL});
    for (int64_t i = rows - 1; i > 0; --i) {
        const int64_t j =
            static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(i + 1)));
        std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    }
    std::vector<std::vector<int64_t>> batches;
    for (int64_t b = 0; b + batch_size <= rows; b += batch_size) {
        batches.emplace_back(perm.begin() + b, perm.begin() + b + batch_size);
    }
    return batches;
}

// ============================================================================
// Corpus IO
// ============================================================================

namespace {

std::string read_file(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) {
        throw IoError("cannot read corpus file '" + p.string() + "'");
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<std::string> split_blank_lines(const std::string& text) {
    std::vector<std::string> docs;
    std::string current;
    std::istringstream is(text);
    std::string line;
    bool last_blank = false;
    while (std::getline(is, line)) {
        if (line.empty()) {
            if (!current.empty()) {
                docs.push_back(current);
                current.clear();
            }
            last_blank = true;
            continue;
        }
        if (!current.empty()) {
            current += "\n";
        }
        current += line;
        last_blank = false;
    }
    (void)last_blank;
    if (!current.empty()) {
        docs.push_back(current);
    }
    return docs;
}

}  // namespace

std::vector<std::string> load_corpus(const std::string& path) {
    namespace fs = std::filesystem;
    if (!fs::exists(path)) {
        throw IoError("corpus path '" + path + "' does not exist");
    }
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(path)) {
            if (entry.is_regular_file()) {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
        std::vector<std::string> docs;
        docs.reserve(files.size());
        for (const auto& f : files) {
            docs.push_back(read_file(f));
        }
        if (docs.empty()) {
            throw IoError("corpus directory '" + path + "' contains no files");
        }
        return docs;
    }
    return split_blank_lines(read_file(path));
}

CorpusSplit split_corpus(std::vector<std::string> docs, double valid_fraction) {
    if (valid_fraction < 0.0 || valid_fraction >= 1.0) {
        throw ConfigError("split_corpus: valid_fraction must be in [0, 1)");
    }
    const auto n = static_cast<int64_t>(docs.size());
    const int64_t n_valid = static_cast<int64_t>(static_cast<double>(n) * valid_fraction);
    CorpusSplit split;
    split.train.assign(docs.begin(), docs.end() - n_valid);
    split.valid.assign(docs.end() - n_valid, docs.end());
    return split;
}

// ============================================================================
// Dataset cache
// ============================================================================

namespace {

NamedTensorData ids_to_tensor(const std::vector<int32_t>& ids) {
    NamedTensorData t;
    t.shape = {static_cast<int64_t>(ids.size())};
    t.data.assign(ids.begin(), ids.end());
    return t;
}

std::vector<int32_t> tensor_to_ids(const NamedTensorData& t) {
    std::vector<int32_t> ids(t.data.size());
    for (size_t i = 0; i < t.data.size(); ++i) {
        ids[i] = static_cast<int32_t>(t.data[i]);
    }
    return ids;
}

}  // namespace

void save_dataset_cache(const std::string& path, const PackedDataset& ds) {
    Container c;
    c.set("kind", "dataset");
    c.set("row_len", std::to_string(ds.row_len));
    c.set("n_docs", std::to_string(ds.doc_boundaries.size()));
    c.tensors.emplace_back("tokens", ids_to_tensor(ds.tokens));
    c.tensors.emplace_back("tail", ids_to_tensor(ds.tail));
    NamedTensorData bounds;
    bounds.shape = {static_cast<int64_t>(ds.doc_boundaries.size())};
    bounds.data.assign(ds.doc_boundaries.begin(), ds.doc_boundaries.end());
    c.tensors.emplace_back("doc_boundaries", std::move(bounds));
    write_container(path, c);
}

PackedDataset load_dataset_cache(const std::string& path) {
    Container c = read_container(path);
    if (c.get("kind").value_or("") != "dataset") {
        throw IoError("'" + path + "' is not a dataset cache");
    }
    PackedDataset ds;
    ds.row_len = c.get_int("row_len");
    const NamedTensorData* tokens = c.find_tensor("tokens");
    const NamedTensorData* tail = c.find_tensor("tail");
    const NamedTensorData* bounds = c.find_tensor("doc_boundaries");
    if (tokens == nullptr || tail == nullptr || bounds == nullptr) {
        throw IoError("dataset cache missing tensors");
    }
    ds.tokens = tensor_to_ids(*tokens);
    ds.tail = tensor_to_ids(*tail);
    ds.doc_boundaries.assign(bounds->data.begin(), bounds->data.end());
    return ds;
}

}  // namespace ltm
