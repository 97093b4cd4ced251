#pragma once

#include <string>
#include <vector>

#include "tensor.hpp"

namespace avldm {

// Token embeddings for conditioning, tokens [L, dim] with a validity mask.
// Padded positions carry zero vectors and mask 0.
struct TextEmbedding {
    Tensor tokens;
    std::vector<uint8_t> mask;
    int64_t dim() const { return tokens.shape[1]; }
    int64_t length() const { return tokens.shape[0]; }
};

// Deterministic seeded-hash text encoder: each lowercased token maps to a
// fixed pseudo-random unit-scale vector derived from its hash, so identical
// captions always produce identical embeddings and disjoint vocabularies are
// nearly orthogonal. Shared by both denoiser streams.
class TextProvider {
public:
    explicit TextProvider(int64_t dim = 64, int64_t max_tokens = 16, uint64_t seed = 0x7ea7);

    TextEmbedding embed(const std::string& caption) const;
    int64_t dim() const { return dim_; }
    int64_t max_tokens() const { return max_tokens_; }

    // pooled mean of valid token vectors (used by tests and toy metrics)
    std::vector<double> pooled(const std::string& caption) const;

    static std::vector<std::string> tokenize(const std::string& caption);

private:
    int64_t dim_, max_tokens_;
    uint64_t seed_;
};

}  // namespace avldm
