#pragma once

#include "hintpipe/embedding.hpp"

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace hintpipe {

class SentencePool;

/// Mean sentence embedding minus mean question embedding. Added to a
/// question embedding it moves the query into sentence-embedding space.
struct ShiftVector
{
	std::vector<double> delta;
};

template<class S, class Q>
ShiftVector compute_shift(const BasicEmbeddingMatrix<S> &sentences, const BasicEmbeddingMatrix<Q> &questions);

/// (q_emb + delta) / |q_emb + delta|
std::vector<double> make_search_vector(std::span<const double> q_emb, const ShiftVector &shift);

struct ScoredSentence
{
	SentId sent_id{0};
	double score{0};

	friend bool operator==(const ScoredSentence &, const ScoredSentence &) = default;
};

inline constexpr std::size_t rank_all{std::numeric_limits<std::size_t>::max()};

/// Rows ranked by descending dot product with `search` (cosine, as both are
/// unit vectors), ties by ascending row id. With `limit` only the leading
/// `limit` entries are produced; they equal the prefix of the full ranking.
template<class T>
std::vector<ScoredSentence> rank_by_cosine(std::span<const double> search,
                                           const BasicEmbeddingMatrix<T> &index,
                                           std::size_t limit = rank_all);

struct HintSet
{
	std::vector<ScoredSentence> ranked;
	std::vector<SentId> selected;
	std::uint32_t token_total{0};
};

/// Greedy walk down `ranked`: each sentence whose cost (token_count plus
/// per_hint_overhead) fits the remaining budget is taken, one that does not
/// is skipped. Sentences of `exclude_doc` are never taken.
HintSet select_hints(std::vector<ScoredSentence> ranked,
                     const SentencePool &pool,
                     std::uint32_t budget_tokens,
                     const std::optional<std::string> &exclude_doc = std::nullopt,
                     std::uint32_t per_hint_overhead = 0);

/// Retrieval over a unit-row sentence index together with the shift vector
/// fitted for the question set.
class SentenceIndex
{
  public:
	SentenceIndex() = default;
	SentenceIndex(IndexMatrix matrix, ShiftVector shift);

	const IndexMatrix &matrix() const noexcept { return matrix_; }
	const ShiftVector &shift() const noexcept { return shift_; }
	std::size_t size() const noexcept { return matrix_.rows(); }
	bool empty() const noexcept { return matrix_.empty(); }

	/// Ranks for a question embedding and selects hints within the budget.
	/// Ranking starts with a bounded prefix and widens to the full index only
	/// when the prefix runs out while budget remains.
	HintSet retrieve(std::span<const double> question_embedding,
	                 const SentencePool &pool,
	                 std::uint32_t budget_tokens,
	                 std::uint32_t per_hint_overhead,
	                 const std::optional<std::string> &exclude_doc = std::nullopt) const;

  private:
	IndexMatrix matrix_;
	ShiftVector shift_;
};

} // namespace hintpipe
