#pragma once

#include "hintpipe/common.hpp"

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace hintpipe {

struct Candidate;

/// Lowercase, drop apostrophes, turn other punctuation into spaces, remove
/// the articles a/an/the, and collapse whitespace.
std::string normalize_text(std::string_view text);

std::vector<std::string> normalized_words(std::string_view text);

/// Jaccard similarity of the word-bigram sets of the normalized texts;
/// unigram sets when either side has fewer than two words; 0 when either is
/// empty.
double bigram_jaccard(std::string_view answer, std::string_view question);

/// True when the normalized answer is a contiguous run of the normalized
/// question's words (vacuously true for an empty answer).
bool is_within_question(std::string_view answer, std::string_view question);

class Stoplist
{
  public:
	static Stoplist defaults();
	static Stoplist load(const std::filesystem::path &path);
	explicit Stoplist(const std::vector<std::string> &entries);

	bool contains(std::string_view answer) const;
	const std::set<std::string> &entries() const noexcept { return entries_; }

  private:
	std::set<std::string> entries_;
};

bool is_stoplisted(std::string_view answer, const Stoplist &stoplist = Stoplist::defaults());

inline constexpr double smart_alec_threshold{0.5};

enum class Verdict { accepted, smart_alec, within_question, stoplisted, empty };

std::string_view to_string(Verdict v) noexcept;

struct FilterVerdict
{
	Verdict verdict{Verdict::accepted};
	std::optional<double> detail;   // the Jaccard value, for smart_alec only
};

/// Checks in order: empty, smart_alec (Jaccard > 0.5), within_question,
/// stoplisted.
FilterVerdict judge_answer(std::string_view answer, std::string_view question, const Stoplist &stoplist);

struct FilterResult
{
	std::optional<std::string> answer;
	std::vector<FilterVerdict> verdicts;
};

/// `candidates` must already be in rank order; the first accepted one is
/// the answer.
FilterResult filter_candidates(const std::vector<Candidate> &candidates,
                               std::string_view question,
                               const Stoplist &stoplist = Stoplist::defaults());

} // namespace hintpipe
