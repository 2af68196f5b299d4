#pragma once

#include "hintpipe/common.hpp"

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hintpipe {

class LanguageModel;
class Tokenizer;
struct PromptSpec;
struct TokenDistribution;

enum class Termination { quote, length_limit };

std::string_view to_string(Termination t) noexcept;

struct Candidate
{
	std::vector<TokenId> token_ids;
	std::string text;           // without the closing quote
	double logprob{0};          // under the nucleus-renormalized distributions
	double biased_score{0};     // logprob + alpha * token count
	Termination terminated{Termination::length_limit};
};

struct DecodeConfig
{
	double top_p{0.9};
	double temperature{1.0};
	std::size_t n_candidates{100};
	std::uint32_t max_answer_tokens{24};
	double alpha{0.0};
	std::uint64_t rng_seed{0};

	void validate() const;
};

/// Keeps the smallest set of most probable tokens (ties by ascending id)
/// whose mass reaches top_p, including the token that crosses it, and
/// renormalizes. top_p >= 1 returns the input unchanged.
std::vector<double> nucleus_filter(std::span<const double> dist, double top_p);

/// As above for a backend distribution; a truncated one must still cover
/// top_p of the mass.
std::vector<double> nucleus_filter(const TokenDistribution &dist, double top_p);

/// Seed of the independent stream used for draw `draw` of one question.
std::uint64_t draw_seed(std::uint64_t question_seed, std::uint64_t draw) noexcept;

/// Called once per sampled token with the filtered distribution it was
/// drawn from.
using StepObserver = std::function<void(std::span<const double> filtered, TokenId chosen)>;

Candidate sample_answer(const LanguageModel &lm,
                        const Tokenizer &tokenizer,
                        const PromptSpec &prompt,
                        const DecodeConfig &cfg,
                        std::mt19937_64 &rng,
                        const StepObserver &observer = {});

/// Draws until n_candidates distinct normalized answers are found or
/// 5 * n_candidates draws are spent, then orders them by descending biased
/// score, shorter first, then by text. Empty answers are discarded; for
/// duplicate answers the best-scoring sample is kept.
std::vector<Candidate> generate_candidates(const LanguageModel &lm,
                                           const Tokenizer &tokenizer,
                                           const PromptSpec &prompt,
                                           const DecodeConfig &cfg);

/// The ordering used by generate_candidates.
void sort_candidates(std::vector<Candidate> &candidates);

} // namespace hintpipe
