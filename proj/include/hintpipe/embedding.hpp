#pragma once

#include "hintpipe/common.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hintpipe {

class SentencePool;
class Tokenizer;

enum class NormStatus { raw, unit };

inline constexpr double unit_norm_tolerance{1e-6};

/// Row-major N x d matrix of finite values. With NormStatus::unit every row
/// has L2 norm 1 within unit_norm_tolerance.
///
/// Computation happens in double (EmbeddingMatrix); the on-disk EMB1 format
/// and the retrieval index hold float32 (IndexMatrix).
template<class T>
class BasicEmbeddingMatrix
{
  public:
	using value_type = T;

	BasicEmbeddingMatrix() = default;
	BasicEmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<T> values,
	                     NormStatus status = NormStatus::raw);

	static BasicEmbeddingMatrix from_rows(const std::vector<std::vector<T>> &rows,
	                                      NormStatus status = NormStatus::raw);

	std::size_t rows() const noexcept { return rows_; }
	std::size_t dim() const noexcept { return dim_; }
	bool empty() const noexcept { return rows_ == 0; }
	NormStatus norm_status() const noexcept { return status_; }

	std::span<const T> row(std::size_t i) const
	{
		return std::span<const T>(values_).subspan(i * dim_, dim_);
	}

	std::span<const T> values() const noexcept { return values_; }

	template<class U>
	BasicEmbeddingMatrix<U> cast() const
	{
		return BasicEmbeddingMatrix<U>(rows_, dim_, std::vector<U>(values_.begin(), values_.end()), status_);
	}

  private:
	std::size_t rows_{0};
	std::size_t dim_{0};
	std::vector<T> values_;
	NormStatus status_{NormStatus::raw};
};

using EmbeddingMatrix = BasicEmbeddingMatrix<double>;
using IndexMatrix = BasicEmbeddingMatrix<float>;

extern template class BasicEmbeddingMatrix<double>;
extern template class BasicEmbeddingMatrix<float>;

//
// EMB1 binary format: "EMB1", u32 LE rows, u32 LE dim, rows*dim float32 LE.
//

inline constexpr std::size_t emb1_header_bytes{12};

void write_emb1(std::ostream &out, std::size_t rows, std::size_t dim, std::span<const float> values);

template<class T>
void save_emb1(const std::filesystem::path &path, const BasicEmbeddingMatrix<T> &m);

IndexMatrix parse_emb1(std::string_view bytes, NormStatus status = NormStatus::raw);
IndexMatrix load_emb1(const std::filesystem::path &path, NormStatus status = NormStatus::raw);

/// Streams rows into an EMB1 file whose row count is known up front.
class Emb1Writer
{
  public:
	Emb1Writer(const std::filesystem::path &path, std::size_t rows, std::size_t dim);
	Emb1Writer(const Emb1Writer &) = delete;
	Emb1Writer &operator=(const Emb1Writer &) = delete;
	~Emb1Writer();

	void append(std::span<const double> row);
	void commit();

  private:
	struct Impl;
	std::unique_ptr<Impl> impl_;
};

//
// Token probabilities
//

class TokenProbTable
{
  public:
	TokenProbTable() = default;
	explicit TokenProbTable(std::unordered_map<TokenId, std::uint64_t> counts);

	/// count(w)/total for observed tokens, 1/(total+1) otherwise.
	double prob(TokenId id) const noexcept;
	std::uint64_t total_tokens() const noexcept { return total_; }
	const std::unordered_map<TokenId, std::uint64_t> &counts() const noexcept { return counts_; }

  private:
	std::unordered_map<TokenId, std::uint64_t> counts_;
	std::uint64_t total_{0};
};

TokenProbTable estimate_token_probs(const SentencePool &pool, const Tokenizer &tokenizer);

//
// SIF
//

inline constexpr double default_sif_a{1e-3};

struct SifModel
{
	double a{default_sif_a};
	std::optional<std::vector<double>> pc1;
	std::size_t dim{0};
};

/// a / (a + p_w)
double sif_weight(double p_w, double a);

/// Mean over the token list of sif_weight(p(w), a) * emb(w).
std::vector<double> embed_sentence_sif(std::span<const TokenId> token_ids,
                                       const IndexMatrix &table,
                                       const TokenProbTable &probs,
                                       double a);

/// Accumulates the mean and centered scatter matrix of a stream of rows.
/// Rows are accumulated relative to the first row seen, which keeps the
/// scatter free of the cancellation a raw sum of squares suffers from.
class CovarianceAccumulator
{
  public:
	explicit CovarianceAccumulator(std::size_t dim);
	~CovarianceAccumulator();
	CovarianceAccumulator(CovarianceAccumulator &&) noexcept;

	void add(std::span<const double> row);
	std::size_t count() const noexcept { return count_; }
	std::vector<double> mean() const;

	/// Dominant eigenvector of the centered scatter matrix by power
	/// iteration, sign fixed so the first nonzero coordinate is positive.
	std::vector<double> principal_direction() const;

  private:
	struct Impl;
	std::unique_ptr<Impl> impl_;
	std::size_t count_{0};
};

inline constexpr std::size_t power_iteration_max_iters{1000};
inline constexpr double power_iteration_tolerance{1e-8};

std::vector<double> fit_first_pc(const EmbeddingMatrix &matrix);

/// Replaces every row v with v - (v.pc1) pc1.
EmbeddingMatrix remove_pc(const EmbeddingMatrix &matrix, std::span<const double> pc1);

void remove_pc_row(std::span<double> row, std::span<const double> pc1);

/// L2-normalizes every row. A row that vanishes (norm below 1e-6 of its
/// fallback row's norm, or exactly zero without a fallback) is replaced by
/// the normalized fallback row.
EmbeddingMatrix normalize_rows(const EmbeddingMatrix &matrix, const EmbeddingMatrix *fallback = nullptr);

/// Embeds arbitrary text with a fitted SIF model: weighted mean, first-PC
/// removal, L2 normalization.
class SifEmbedder
{
  public:
	SifEmbedder(std::shared_ptr<const Tokenizer> tokenizer,
	            std::shared_ptr<const IndexMatrix> table,
	            TokenProbTable probs,
	            SifModel model);

	std::vector<double> raw(std::string_view text) const;
	std::vector<double> embed(std::string_view text) const;

	EmbeddingMatrix embed_all(const std::vector<std::string> &texts) const;
	EmbeddingMatrix embed_pool(const SentencePool &pool) const;

	const SifModel &model() const noexcept { return model_; }
	const TokenProbTable &probs() const noexcept { return probs_; }
	const Tokenizer &tokenizer() const noexcept { return *tokenizer_; }
	std::size_t dim() const noexcept { return model_.dim; }

  private:
	std::shared_ptr<const Tokenizer> tokenizer_;
	std::shared_ptr<const IndexMatrix> table_;
	TokenProbTable probs_;
	SifModel model_;
};

/// Estimates token probabilities over the pool, streams the raw sentence
/// embeddings once to fit pc1, and returns the ready embedder. With fewer
/// than two sentences, or a degenerate pool, pc1 stays absent.
SifEmbedder fit_sif(const SentencePool &pool,
                    std::shared_ptr<const Tokenizer> tokenizer,
                    std::shared_ptr<const IndexMatrix> table,
                    double a = default_sif_a);

void save_sif_model(const std::filesystem::path &path, const SifEmbedder &embedder);
SifEmbedder load_sif_model(const std::filesystem::path &path,
                           std::shared_ptr<const Tokenizer> tokenizer,
                           std::shared_ptr<const IndexMatrix> table);

//
// Remote embedder: POST /v1/embed {"texts": [...]} -> {"vectors": [[...]], "dim": n}
//

struct RemoteOptions
{
	int retries{3};
	std::chrono::milliseconds backoff{100};
	std::chrono::seconds timeout{30};
	std::size_t max_in_flight{8};
	std::size_t batch_size{64};
};

class RemoteEmbedder
{
  public:
	explicit RemoteEmbedder(std::string endpoint, RemoteOptions options = {});
	~RemoteEmbedder();

	std::vector<std::vector<double>> embed(const std::vector<std::string> &texts) const;
	const std::string &endpoint() const noexcept { return endpoint_; }

  private:
	struct Gate;

	std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts) const;

	std::string endpoint_;
	RemoteOptions options_;
	std::unique_ptr<Gate> gate_;
};

std::vector<std::vector<double>> remote_embed(const std::string &endpoint,
                                              const std::vector<std::string> &texts,
                                              const RemoteOptions &options = {});

} // namespace hintpipe
