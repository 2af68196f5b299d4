#pragma once

#include "hintpipe/eval.hpp"
#include "hintpipe/filters.hpp"
#include "hintpipe/prompt.hpp"
#include "hintpipe/retrieval.hpp"

#include <functional>
#include <memory>
#include <optional>

namespace hintpipe {

class LanguageModel;
class Tokenizer;

using QuestionEmbedder = std::function<std::vector<double>(std::string_view)>;

struct PipelineParts
{
	std::shared_ptr<const SentencePool> pool;
	std::shared_ptr<const SentenceIndex> index;   // null or empty: never hint
	QuestionEmbedder embed_question;
	std::shared_ptr<const Tokenizer> tokenizer;
	std::shared_ptr<const LanguageModel> lm;
	Stoplist stoplist{Stoplist::defaults()};

	std::optional<std::uint32_t> hint_budget;     // default: half the context window
	std::uint32_t per_hint_overhead{1};           // the newline after each hint
	std::uint32_t reserved_generation{default_reserved_generation};
	bool exclude_own_doc{false};
};

/// Retrieve hints, render the prompt, sample candidates, filter.
class HintedPipeline : public QaPipeline
{
  public:
	explicit HintedPipeline(PipelineParts parts);

	struct Trace
	{
		HintSet hints;
		PromptSpec prompt;
		std::vector<Candidate> candidates;
		FilterResult filtered;
	};

	HintSet retrieve(std::string_view question, const std::optional<std::string> &exclude_doc = std::nullopt) const;
	PromptSpec prompt(std::string_view question, const HintSet &hints) const;
	Trace run(std::string_view question,
	          const DecodeConfig &cfg,
	          HintMode mode,
	          const std::optional<std::string> &exclude_doc = std::nullopt) const;

	QuestionOutcome answer(const EvalExample &example, const DecodeConfig &cfg, HintMode mode) const override;

	std::uint32_t hint_budget() const noexcept { return budget_; }
	const PipelineParts &parts() const noexcept { return parts_; }

  private:
	PipelineParts parts_;
	std::uint32_t context_window_;
	std::uint32_t budget_;
};

} // namespace hintpipe
