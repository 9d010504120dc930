#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace geaudit::reflection {

// ---------------------------------------------------------------------------
// Sentence segmentation

struct Sentence {
    std::size_t index = 0;
    std::string text;
    std::string language;
    std::size_t begin = 0;  // byte offsets of `text` within the source string
    std::size_t end = 0;
};

/// Abbreviations (without the trailing period) that never end an English sentence.
const std::vector<std::string>& english_abbreviations();

/// Language-aware splitter.
///  - en: break after . ! ? (plus closing quotes/brackets) when followed by
///    whitespace and then a capital letter, digit or opening quote, unless
///    the word before the period is an abbreviation.
///  - ja: additionally break after 。！？． and any closing-bracket run, with no
///    whitespace required; a following CJK character also opens a sentence.
/// Newlines always separate sentences. Whitespace-only segments are dropped.
std::vector<Sentence> split_sentences(std::string_view text, std::string_view language);

/// "ja" when at least 10% of letters are kana or CJK ideographs, else "en".
std::string detect_language(std::string_view text);

// ---------------------------------------------------------------------------
// Embeddings

/// Unit-normalized embedding.
class EmbeddingVector {
public:
    EmbeddingVector() = default;
    /// Normalizes `raw` to unit L2 norm. Throws on empty, non-finite or zero vectors.
    static EmbeddingVector normalized(std::vector<double> raw);
    /// Adopts values already known to be unit length (e.g. from the cache).
    static EmbeddingVector from_unit(std::vector<double> values);

    std::size_t dim() const { return values_.size(); }
    const std::vector<double>& values() const { return values_; }
    double norm() const;

private:
    std::vector<double> values_;
};

/// Provider contract for sentence embedders.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    /// Stable id including version; part of every cache key.
    virtual std::string id() const = 0;
    virtual std::size_t dim() const = 0;
    virtual std::size_t max_batch() const = 0;
    /// Raw (not necessarily normalized) vectors, one per input.
    virtual std::vector<std::vector<double>> embed_batch(std::span<const std::string> sentences) = 0;
};

/// Deterministic offline backend. Each token (lowercased word, or CJK
/// character bigram) seeds a pseudo-random vector; a sentence is the sum of
/// its token vectors. Shared vocabulary therefore yields high cosine, which
/// keeps banding meaningful in tests without a model.
class PseudoEmbeddingBackend final : public EmbeddingBackend {
public:
    explicit PseudoEmbeddingBackend(std::size_t dim = 256, std::size_t max_batch = 64);
    std::string id() const override;
    std::size_t dim() const override { return dim_; }
    std::size_t max_batch() const override { return max_batch_; }
    std::vector<std::vector<double>> embed_batch(std::span<const std::string> sentences) override;

private:
    std::size_t dim_;
    std::size_t max_batch_;
};

struct HttpEmbeddingConfig {
    std::string endpoint;  // base URL of an OpenAI-compatible /v1/embeddings service
    std::string model;
    std::string api_key;   // optional bearer token
    std::size_t dim = 0;
    std::size_t batch_size = 32;
    int timeout_ms = 60000;
};

class HttpEmbeddingBackend final : public EmbeddingBackend {
public:
    explicit HttpEmbeddingBackend(HttpEmbeddingConfig config);
    std::string id() const override;
    std::size_t dim() const override { return config_.dim; }
    std::size_t max_batch() const override { return config_.batch_size; }
    std::vector<std::vector<double>> embed_batch(std::span<const std::string> sentences) override;

private:
    HttpEmbeddingConfig config_;
};

/// Content-addressed (backend id, sentence digest) -> vector store. When a
/// directory is given, entries persist as one append-only JSONL file per backend.
class EmbeddingCache {
public:
    explicit EmbeddingCache(std::optional<std::filesystem::path> dir = std::nullopt);

    std::optional<EmbeddingVector> get(const std::string& backend_id, const std::string& digest);
    void put(const std::string& backend_id, const std::string& digest, const EmbeddingVector& v);
    std::size_t size() const;

private:
    void load_backend(const std::string& backend_id);
    std::filesystem::path file_for(const std::string& backend_id) const;

    mutable std::mutex mu_;
    std::optional<std::filesystem::path> dir_;
    std::unordered_map<std::string, std::unordered_map<std::string, EmbeddingVector>> entries_;
    std::unordered_map<std::string, bool> loaded_;
};

/// Batches uncached sentences through a backend and fills the cache.
class Embedder {
public:
    Embedder(EmbeddingBackend& backend, EmbeddingCache& cache) : backend_(backend), cache_(cache) {}

    /// One unit vector per sentence. Throws ConfigError on a dimension
    /// mismatch and NetworkError (retriable) on backend failure.
    std::vector<EmbeddingVector> embed(std::span<const std::string> sentences);

    std::size_t backend_calls() const { return backend_calls_.load(); }
    const EmbeddingBackend& backend() const { return backend_; }

private:
    EmbeddingBackend& backend_;
    EmbeddingCache& cache_;
    std::atomic<std::size_t> backend_calls_{0};
};

// ---------------------------------------------------------------------------
// Similarity

/// Dot product of unit vectors, clamped to [-1, 1]. Throws on dim mismatch.
double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

enum class Band { Low, Mid, High };

std::string_view to_string(Band b);
Band parse_band(std::string_view s);

/// Low = [-1, 0.8], Mid = (0.8, 0.9], High = (0.9, 1]. Throws
/// std::domain_error outside [-1, 1] or on NaN.
Band band(double score);

struct CitationReflection {
    std::string url;
    double sim_max = 0.0;
    Band band = Band::Low;
    std::size_t answer_index = 0;    // argmax answer sentence
    std::size_t citation_index = 0;  // argmax citation sentence
    bool cross_language = false;
};

/// Maximum cosine over every (answer, citation) sentence pair. Ties go to the
/// lexicographically smallest (answer index, citation index). Throws
/// ValidationError when either side is empty.
CitationReflection sim_max(std::span<const EmbeddingVector> answer, std::span<const EmbeddingVector> citation);

/// A citation's reflection, or the reason it could not be computed.
struct ReflectionOutcome {
    std::optional<CitationReflection> reflection;
    std::string unavailable_reason;  // set iff !reflection
};

/// Splits both texts, embeds them and takes sim_max. An empty or
/// sentence-free citation text yields an unavailable outcome.
ReflectionOutcome reflect(std::string_view url, const std::vector<Sentence>& answer_sentences,
                          std::string_view citation_text, Embedder& embedder);

}  // namespace geaudit::reflection
