#pragma once

#include <string>
#include <vector>

#include "ltm/util.hpp"

namespace ltm::testsupport {

// Deterministic English-like filler text: sentences drawn from a small
// lexicon, one paragraph per document, ~approx_bytes long.
inline std::vector<std::string> synthetic_corpus(int n_docs, int approx_bytes, uint64_t seed) {
    static const std::vector<std::string> lexicon = {
        "the",    "old",    "river",  "carried", "light",  "stones", "under",  "a",
        "slow",   "sky",    "and",    "birds",   "kept",   "their",  "songs",  "close",
        "to",     "water",  "while",  "boats",   "drifted", "past",  "quiet",  "fields",
        "where",  "farmers", "walked", "home",   "before",  "dusk",  "wind",   "moved",
        "through", "tall",  "grass",  "like",    "breath",  "over",  "glass",  "every",
        "morning", "began", "with",   "mist",    "rising",  "from",  "valley", "floors",
        "children", "ran",  "along",  "paths",   "made",    "of",    "worn",   "brick",
    };
    std::vector<std::string> docs;
    docs.reserve(static_cast<size_t>(n_docs));
    for (int d = 0; d < n_docs; ++d) {
        Rng rng = Rng::stream({seed, static_cast<uint64_t>(d), 0x636f7270ULL});
        std::string doc;
        while (static_cast<int>(doc.size()) < approx_bytes) {
            const int words = 4 + static_cast<int>(rng.uniform_int(6));
            for (int w = 0; w < words; ++w) {
                std::string token = lexicon[rng.uniform_int(lexicon.size())];
                if (w == 0) {
                    token[0] = static_cast<char>(std::toupper(token[0]));
                }
                doc += token;
                doc += w + 1 < words ? " " : "";
            }
            doc += ". ";
        }
        doc.resize(static_cast<size_t>(approx_bytes));
        docs.push_back(std::move(doc));
    }
    return docs;
}

}  // namespace ltm::testsupport
