#include "text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace avldm {

TextProvider::TextProvider(int64_t dim, int64_t max_tokens, uint64_t seed)
    : dim_(dim), max_tokens_(max_tokens), seed_(seed) {}

std::vector<std::string> TextProvider::tokenize(const std::string& caption) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : caption) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

TextEmbedding TextProvider::embed(const std::string& caption) const {
    auto toks = tokenize(caption);
    check(!toks.empty(), "embed_text: caption has no tokens");

    TextEmbedding e;
    e.tokens = Tensor({max_tokens_, dim_});
    e.mask.assign(static_cast<size_t>(max_tokens_), 0);
    const int64_t n = std::min<int64_t>(static_cast<int64_t>(toks.size()), max_tokens_);
    for (int64_t i = 0; i < n; i++) {
        Rng rng(seed_ ^ fnv1a64(toks[static_cast<size_t>(i)]), "token");
        double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
        for (int64_t d = 0; d < dim_; d++) e.tokens[i * dim_ + d] = scale * rng.normal();
        e.mask[static_cast<size_t>(i)] = 1;
    }
    return e;
}

std::vector<double> TextProvider::pooled(const std::string& caption) const {
    TextEmbedding e = embed(caption);
    std::vector<double> out(static_cast<size_t>(dim_), 0.0);
    int64_t n = 0;
    for (int64_t i = 0; i < e.length(); i++) {
        if (!e.mask[static_cast<size_t>(i)]) continue;
        for (int64_t d = 0; d < dim_; d++) out[static_cast<size_t>(d)] += e.tokens[i * dim_ + d];
        n++;
    }
    for (auto& v : out) v /= static_cast<double>(n);
    return out;
}

}  // namespace avldm
