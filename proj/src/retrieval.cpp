#include "hintpipe/retrieval.hpp"
#include "hintpipe/corpus.hpp"

#include <algorithm>
#include <numeric>

namespace hintpipe {

namespace {

template<class T>
std::vector<double>
row_mean(const BasicEmbeddingMatrix<T> &m)
{
	std::vector<double> mean(m.dim(), 0.0);
	for(std::size_t i = 0; i < m.rows(); ++i)
	{
		const auto r(m.row(i));
		for(std::size_t k = 0; k < mean.size(); ++k)
			mean[k] += double(r[k]);
	}

	for(auto &x : mean)
		x /= double(m.rows());

	return mean;
}

template<class T>
std::vector<double>
score_all(std::span<const double> search, const BasicEmbeddingMatrix<T> &index)
{
	if(search.size() != index.dim())
		throw Error("rank_by_cosine: search vector dimension " + std::to_string(search.size())
		            + " does not match index dimension " + std::to_string(index.dim()));

	std::vector<double> scores(index.rows());
	for(std::size_t i = 0; i < index.rows(); ++i)
	{
		const auto r(index.row(i));
		double dot(0);
		for(std::size_t k = 0; k < r.size(); ++k)
			dot += double(r[k]) * search[k];

		scores[i] = dot;
	}
	return scores;
}

std::vector<ScoredSentence>
ranked_prefix(const std::vector<double> &scores, std::size_t limit)
{
	std::vector<ScoredSentence> all(scores.size());
	for(std::size_t i = 0; i < scores.size(); ++i)
		all[i] = {static_cast<SentId>(i), scores[i]};

	const auto before([](const ScoredSentence &a, const ScoredSentence &b)
	{
		if(a.score != b.score)
			return a.score > b.score;

		return a.sent_id < b.sent_id;
	});

	if(limit >= all.size())
		std::sort(all.begin(), all.end(), before);
	else
	{
		std::partial_sort(all.begin(), all.begin() + std::ptrdiff_t(limit), all.end(), before);
		all.resize(limit);
	}
	return all;
}

} // namespace

template<class S, class Q>
ShiftVector
compute_shift(const BasicEmbeddingMatrix<S> &sentences, const BasicEmbeddingMatrix<Q> &questions)
{
	if(sentences.empty() || questions.empty())
		throw Error("compute_shift: empty matrix");
	if(sentences.dim() != questions.dim())
		throw Error("compute_shift: dimension mismatch " + std::to_string(sentences.dim()) + " vs " + std::to_string(questions.dim()));

	auto delta(row_mean(sentences));
	const auto q(row_mean(questions));
	for(std::size_t k = 0; k < delta.size(); ++k)
		delta[k] -= q[k];

	return ShiftVector{std::move(delta)};
}

template ShiftVector compute_shift(const BasicEmbeddingMatrix<double> &, const BasicEmbeddingMatrix<double> &);
template ShiftVector compute_shift(const BasicEmbeddingMatrix<float> &, const BasicEmbeddingMatrix<float> &);
template ShiftVector compute_shift(const BasicEmbeddingMatrix<float> &, const BasicEmbeddingMatrix<double> &);
template ShiftVector compute_shift(const BasicEmbeddingMatrix<double> &, const BasicEmbeddingMatrix<float> &);

std::vector<double>
make_search_vector(std::span<const double> q_emb, const ShiftVector &shift)
{
	if(q_emb.size() != shift.delta.size())
		throw Error("make_search_vector: dimension mismatch");

	std::vector<double> v(q_emb.size());
	for(std::size_t k = 0; k < v.size(); ++k)
		v[k] = q_emb[k] + shift.delta[k];

	const double n(std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)));
	if(!(n > 0) || !std::isfinite(n))
		throw Error("make_search_vector: degenerate (zero) search vector");

	for(auto &x : v)
		x /= n;

	return v;
}

template<class T>
std::vector<ScoredSentence>
rank_by_cosine(std::span<const double> search, const BasicEmbeddingMatrix<T> &index, std::size_t limit)
{
	if(index.empty())
		throw Error("rank_by_cosine: empty index");

	return ranked_prefix(score_all(search, index), limit);
}

template std::vector<ScoredSentence> rank_by_cosine(std::span<const double>, const BasicEmbeddingMatrix<double> &, std::size_t);
template std::vector<ScoredSentence> rank_by_cosine(std::span<const double>, const BasicEmbeddingMatrix<float> &, std::size_t);

HintSet
select_hints(std::vector<ScoredSentence> ranked,
             const SentencePool &pool,
             std::uint32_t budget_tokens,
             const std::optional<std::string> &exclude_doc,
             std::uint32_t per_hint_overhead)
{
	if(budget_tokens == 0)
		throw Error("select_hints: budget must be positive");

	HintSet hints;
	hints.ranked = std::move(ranked);
	std::uint32_t remaining(budget_tokens);
	for(const auto &entry : hints.ranked)
	{
		if(remaining == 0)
			break;

		const auto &s(pool[entry.sent_id]);
		if(exclude_doc && s.doc_id == *exclude_doc)
			continue;

		const std::uint64_t cost(std::uint64_t(s.token_count) + per_hint_overhead);
		if(cost > remaining)
			continue;

		hints.selected.push_back(entry.sent_id);
		hints.token_total += static_cast<std::uint32_t>(cost);
		remaining -= static_cast<std::uint32_t>(cost);
	}
	return hints;
}

SentenceIndex::SentenceIndex(IndexMatrix matrix, ShiftVector shift)
:matrix_{std::move(matrix)}
,shift_{std::move(shift)}
{
	if(matrix_.norm_status() != NormStatus::unit)
		throw Error("sentence index: rows must be unit-normalized");
	if(!matrix_.empty() && shift_.delta.size() != matrix_.dim())
		throw Error("sentence index: shift dimension does not match the index");
	if(!std::all_of(shift_.delta.begin(), shift_.delta.end(), [](double x) { return std::isfinite(x); }))
		throw Error("sentence index: non-finite shift vector");
}

HintSet
SentenceIndex::retrieve(std::span<const double> question_embedding,
                        const SentencePool &pool,
                        std::uint32_t budget_tokens,
                        std::uint32_t per_hint_overhead,
                        const std::optional<std::string> &exclude_doc) const
{
	if(empty())
		return HintSet{};
	if(matrix_.rows() != pool.size())
		throw Error("sentence index has " + std::to_string(matrix_.rows()) + " rows but the pool has "
		            + std::to_string(pool.size()) + " sentences");

	const auto search(make_search_vector(question_embedding, shift_));
	const auto scores(score_all(search, matrix_));

	std::uint32_t min_cost(std::numeric_limits<std::uint32_t>::max());
	for(const auto &s : pool.sentences())
		min_cost = std::min(min_cost, s.token_count + per_hint_overhead);

	// The greedy walk over a prefix of the ranking equals the walk over the
	// full ranking once the remaining budget is below the cheapest sentence.
	std::size_t limit(256);
	for(;;)
	{
		auto hints(select_hints(ranked_prefix(scores, limit), pool, budget_tokens, exclude_doc, per_hint_overhead));
		if(limit >= scores.size() || budget_tokens - hints.token_total < min_cost)
			return hints;

		limit *= 4;
	}
}

} // namespace hintpipe
