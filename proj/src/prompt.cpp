#include "hintpipe/prompt.hpp"
#include "hintpipe/corpus.hpp"
#include "hintpipe/retrieval.hpp"
#include "hintpipe/tokenizer.hpp"

namespace hintpipe {

std::string
question_with_mark(std::string_view question)
{
	auto q(trim(question));
	while(!q.empty() && q.back() == '?')
		q.remove_suffix(1);

	std::string out(trim(q));
	out.push_back('?');
	return out;
}

std::string
render_prompt(const std::vector<std::string_view> &hints, std::string_view question)
{
	std::string out("Information :\n");
	if(hints.empty())
		out += "None";

	for(std::size_t i = 0; i < hints.size(); ++i)
	{
		if(i)
			out.push_back('\n');

		out += hints[i];
	}

	out += "\n\nThe best short answer to \"";
	out += question_with_mark(question);
	out += "\" from the information above is \"";
	return out;
}

PromptSpec
build_prompt(const HintSet &hints,
             const SentencePool &pool,
             std::string_view question,
             const Tokenizer &tokenizer,
             const PromptLimits &limits)
{
	if(trim(question).empty())
		throw Error("build_prompt: empty question");
	if(limits.reserved_generation >= limits.context_window)
		throw Error("build_prompt: reserved generation length leaves no room for a prompt");

	const std::size_t max_prompt(limits.context_window - limits.reserved_generation);

	std::vector<std::string_view> texts;
	texts.reserve(hints.selected.size());
	for(const auto id : hints.selected)
		texts.emplace_back(pool[id].text);

	for(;;)
	{
		PromptSpec spec;
		spec.text = render_prompt(texts, question);
		spec.ids = tokenizer.tokenize(spec.text);
		if(spec.ids.size() <= max_prompt)
		{
			spec.hint_count = static_cast<std::uint32_t>(texts.size());
			spec.prompt_tokens = static_cast<std::uint32_t>(spec.ids.size());
			spec.question = std::string(trim(question));
			return spec;
		}

		if(texts.empty())
			throw Error("build_prompt: question too long for the context window ("
			            + std::to_string(spec.ids.size()) + " tokens, limit " + std::to_string(max_prompt) + ")");

		texts.pop_back();
	}
}

} // namespace hintpipe
