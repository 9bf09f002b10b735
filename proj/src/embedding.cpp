#include "semapop/embedding.hpp"

#include "semapop/io_util.hpp"
#include "semapop/rng.hpp"

#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace semapop {

std::string to_string(EmbeddingProvenance p) {
    switch (p) {
    case EmbeddingProvenance::External: return "external";
    case EmbeddingProvenance::Mock: return "mock";
    case EmbeddingProvenance::Zero: return "zero";
    }
    return "external";
}

EmbeddingProvenance embedding_provenance_from_string(const std::string& s) {
    if (s == "external") return EmbeddingProvenance::External;
    if (s == "mock") return EmbeddingProvenance::Mock;
    if (s == "zero") return EmbeddingProvenance::Zero;
    throw std::runtime_error("unknown embedding provenance: " + s);
}

Matrix layer_norm_rows(Matrix m) {
    for (Index i = 0; i < m.rows(); ++i) {
        const double mean = m.row(i).mean();
        const double var =
            (m.row(i).array() - mean).square().sum() / static_cast<double>(m.cols());
        m.row(i) = (m.row(i).array() - mean) / std::sqrt(std::max(var, 1e-12));
    }
    return m;
}

EmbeddingMatrix embed_texts(const std::vector<std::string>& texts, HiddenStateEmbedder& embedder) {
    EmbeddingMatrix out;
    out.provenance = EmbeddingProvenance::External;
    Index dim = -1;
    std::vector<Vector> rows;
    for (const auto& text : texts) {
        HiddenStates hs = embedder.hidden_states(text);
        if (hs.layers.empty()) throw std::runtime_error("embedder returned no hidden layers");
        const Index tokens = hs.layers.front().rows();
        const Index d = hs.layers.front().cols();
        if (dim < 0) dim = d;
        if (d != dim)
            throw std::runtime_error("embedder dimension mismatch: got " + std::to_string(d) +
                                     ", expected " + std::to_string(dim));
        Matrix avg = Matrix::Zero(tokens, d);
        for (const auto& layer : hs.layers) {
            if (layer.rows() != tokens || layer.cols() != d)
                throw std::runtime_error("hidden layers disagree on token count or width");
            avg += layer;
        }
        avg /= static_cast<double>(hs.layers.size());
        if (hs.mask.size() != tokens) throw std::runtime_error("attention mask length mismatch");
        const double denom = hs.mask.sum();
        if (denom <= 0.0) throw std::runtime_error("attention mask selects no tokens");
        Vector pooled = (avg.transpose() * hs.mask) / denom;
        rows.push_back(std::move(pooled));
    }
    out.matrix.resize(static_cast<Index>(rows.size()), std::max<Index>(dim, 0));
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.matrix.row(static_cast<Index>(i)) = rows[i].transpose();
    out.matrix = quantize_f32(layer_norm_rows(std::move(out.matrix)));
    return out;
}

namespace {

constexpr std::uint64_t kMockBuckets = 8192;

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
}

} // namespace

EmbeddingMatrix mock_embed(const std::vector<std::string>& texts, Index dim, std::uint64_t seed) {
    if (dim < 2) throw std::runtime_error("mock embedding dimension must be at least 2");
    EmbeddingMatrix out;
    out.provenance = EmbeddingProvenance::Mock;
    out.matrix.setZero(static_cast<Index>(texts.size()), dim);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        Vector row = Vector::Zero(dim);
        for (const auto& tok : whitespace_tokens(texts[i])) {
            const std::uint64_t bucket = fnv1a64(tok) % kMockBuckets;
            Rng rng(Rng::derive(seed, "mock_embed_bucket", bucket));
            for (Index d = 0; d < dim; ++d) row(d) += rng.normal();
        }
        out.matrix.row(static_cast<Index>(i)) = row.transpose();
    }
    out.matrix = quantize_f32(layer_norm_rows(std::move(out.matrix)));
    return out;
}

EmbeddingMatrix zero_embeddings(Index n, Index dim) {
    if (n < 1 || dim < 1) throw std::runtime_error("zero_embeddings requires n, dim >= 1");
    EmbeddingMatrix out;
    out.provenance = EmbeddingProvenance::Zero;
    out.matrix.setZero(n, dim);
    return out;
}

namespace {

std::filesystem::path manifest_path(const std::filesystem::path& dir) { return dir / "manifest.json"; }

nlohmann::json load_manifest(const std::filesystem::path& dir) {
    const auto path = manifest_path(dir);
    if (!std::filesystem::exists(path)) return nlohmann::json{{"records", nlohmann::json::object()}};
    return nlohmann::json::parse(read_file(path));
}

} // namespace

void save_embedding_cache(const std::filesystem::path& dir, const std::string& key,
                          const EmbeddingMatrix& emb) {
    DirectoryLock lock(dir);
    nlohmann::json manifest = load_manifest(dir);
    const std::string file = key + ".f32";
    write_f32_tensor(dir / file, emb.matrix);
    manifest["records"][key] = {{"file", file},
                                {"rows", emb.n()},
                                {"cols", emb.dim()},
                                {"provenance", to_string(emb.provenance)}};
    write_file(manifest_path(dir), manifest.dump(2));
}

std::optional<EmbeddingMatrix> load_embedding_cache(const std::filesystem::path& dir,
                                                    const std::string& key) {
    if (!std::filesystem::exists(manifest_path(dir))) return std::nullopt;
    nlohmann::json manifest = load_manifest(dir);
    if (!manifest["records"].contains(key)) return std::nullopt;
    const auto& rec = manifest["records"][key];
    EmbeddingMatrix emb;
    emb.matrix = read_f32_tensor(dir / rec.at("file").get<std::string>());
    emb.provenance = embedding_provenance_from_string(rec.at("provenance").get<std::string>());
    return emb;
}

} // namespace semapop
