#pragma once

#include "semapop/types.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace semapop {

enum class EmbeddingProvenance { External, Mock, Zero };

std::string to_string(EmbeddingProvenance p);
EmbeddingProvenance embedding_provenance_from_string(const std::string& s);

// Per-agent persona embeddings. Entries are quantized to float32, the
// storage precision of the on-disk cache, so cache round trips are
// bit-identical.
struct EmbeddingMatrix {
    Matrix matrix; // n x D_p
    EmbeddingProvenance provenance = EmbeddingProvenance::External;

    Index n() const { return matrix.rows(); }
    Index dim() const { return matrix.cols(); }
};

// Affine-free layer normalization of each row to zero mean, unit variance.
Matrix layer_norm_rows(Matrix m);

// Token-level hidden states of one text: the last L transformer layers
// (each T x D) plus a 0/1 attention mask of length T.
struct HiddenStates {
    std::vector<Matrix> layers;
    Vector mask;
};

class HiddenStateEmbedder {
  public:
    virtual ~HiddenStateEmbedder() = default;
    virtual HiddenStates hidden_states(const std::string& text) = 0;
};

// Layer-wise mean over the last L layers, masked mean pooling over tokens,
// then layer normalization. Rows follow input order.
EmbeddingMatrix embed_texts(const std::vector<std::string>& texts, HiddenStateEmbedder& embedder);

// Deterministic offline stand-in for the frozen encoder: whitespace
// tokens are hashed into a seeded bag-of-hashes vector, projected through
// a seeded fixed random matrix, then layer-normalized per row.
EmbeddingMatrix mock_embed(const std::vector<std::string>& texts, Index dim, std::uint64_t seed);

EmbeddingMatrix zero_embeddings(Index n, Index dim);

// Cache: one .f32 tensor (with shape sidecar) per record plus a manifest
// listing keys, dims and provenance. Writers hold the directory lock.
void save_embedding_cache(const std::filesystem::path& dir, const std::string& key,
                          const EmbeddingMatrix& emb);
std::optional<EmbeddingMatrix> load_embedding_cache(const std::filesystem::path& dir,
                                                    const std::string& key);

} // namespace semapop
