#pragma once

#include "hintpipe/common.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace hintpipe {

class SentencePool;
class Tokenizer;
struct HintSet;

inline constexpr std::uint32_t default_reserved_generation{24};

/// Half of the context window goes to hint sentences.
constexpr std::uint32_t
hint_budget_for(std::uint32_t context_window) noexcept
{
	return context_window / 2;
}

struct PromptLimits
{
	std::uint32_t context_window{1024};
	std::uint32_t reserved_generation{default_reserved_generation};
};

struct PromptSpec
{
	std::string text;
	std::vector<TokenId> ids;
	std::uint32_t hint_count{0};
	std::uint32_t prompt_tokens{0};
	std::string question;
};

/// The question, trimmed, ending in exactly one '?'.
std::string question_with_mark(std::string_view question);

/// Information :
/// <hint per line, or None>
///
/// The best short answer to "<question?>" from the information above is "
std::string render_prompt(const std::vector<std::string_view> &hints, std::string_view question);

/// Renders the prompt for the selected hints, in rank order. If the result
/// would leave fewer than `reserved_generation` tokens of the window, the
/// lowest-ranked hints are dropped; a question that does not fit even
/// without hints is an error.
PromptSpec build_prompt(const HintSet &hints,
                        const SentencePool &pool,
                        std::string_view question,
                        const Tokenizer &tokenizer,
                        const PromptLimits &limits = {});

} // namespace hintpipe
