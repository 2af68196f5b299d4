#include "hintpipe/pipeline.hpp"
#include "hintpipe/lm.hpp"
#include "hintpipe/tokenizer.hpp"

namespace hintpipe {

HintedPipeline::HintedPipeline(PipelineParts parts)
:parts_{std::move(parts)}
{
	if(!parts_.pool || !parts_.tokenizer || !parts_.lm)
		throw Error("pipeline: pool, tokenizer and language model are required");

	const bool hinting(parts_.index && !parts_.index->empty());
	if(hinting && !parts_.embed_question)
		throw Error("pipeline: a question embedder is required with a non-empty index");
	if(hinting && parts_.index->size() != parts_.pool->size())
		throw Error("pipeline: index rows do not match the sentence pool");

	context_window_ = parts_.lm->info().context_window;
	budget_ = parts_.hint_budget.value_or(hint_budget_for(context_window_));
	if(budget_ == 0)
		throw Error("pipeline: hint budget must be positive");
}

HintSet
HintedPipeline::retrieve(std::string_view question, const std::optional<std::string> &exclude_doc) const
{
	if(!parts_.index || parts_.index->empty())
		return HintSet{};

	const auto q(parts_.embed_question(question));
	return parts_.index->retrieve(q, *parts_.pool, budget_, parts_.per_hint_overhead, exclude_doc);
}

PromptSpec
HintedPipeline::prompt(std::string_view question, const HintSet &hints) const
{
	return build_prompt(hints, *parts_.pool, question, *parts_.tokenizer,
	                    PromptLimits{context_window_, parts_.reserved_generation});
}

HintedPipeline::Trace
HintedPipeline::run(std::string_view question,
                    const DecodeConfig &cfg,
                    HintMode mode,
                    const std::optional<std::string> &exclude_doc) const
{
	Trace t;
	if(mode == HintMode::retrieve)
		t.hints = retrieve(question, exclude_doc);

	t.prompt = prompt(question, t.hints);
	t.candidates = generate_candidates(*parts_.lm, *parts_.tokenizer, t.prompt, cfg);
	t.filtered = filter_candidates(t.candidates, question, parts_.stoplist);
	return t;
}

QuestionOutcome
HintedPipeline::answer(const EvalExample &example, const DecodeConfig &cfg, HintMode mode) const
{
	const auto exclude(parts_.exclude_own_doc ? std::optional<std::string>(example.doc_id) : std::nullopt);
	const auto t(run(example.question, cfg, mode, exclude));

	QuestionOutcome out;
	out.predicted = t.filtered.answer;
	out.candidate_count = t.candidates.size();
	out.hints.hint_count = t.prompt.hint_count;
	out.hints.hint_tokens = t.hints.token_total;
	if(!t.hints.ranked.empty())
		out.hints.top_score = t.hints.ranked.front().score;

	for(std::size_t i = 0; i < t.prompt.hint_count; ++i)
		if((*parts_.pool)[t.hints.selected[i]].doc_id == example.doc_id)
			out.hints.gold_doc_hit = true;

	return out;
}

} // namespace hintpipe
