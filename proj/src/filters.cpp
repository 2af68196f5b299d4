#include "hintpipe/filters.hpp"
#include "hintpipe/decoder.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <iterator>
#include <sstream>

namespace hintpipe {

namespace {

void
append_utf8(std::string &out, UChar32 c)
{
	char buf[4];
	int32_t len(0);
	U8_APPEND_UNSAFE(buf, len, c);
	out.append(buf, std::size_t(len));
}

bool
is_apostrophe(UChar32 c)
{
	return c == '\'' || c == 0x2019 || c == 0x2018 || c == 0x02BC;
}

bool
is_punct(UChar32 c)
{
	if(c < 0x80)
		return std::ispunct(static_cast<unsigned char>(c));

	return U_GET_GC_MASK(c) & U_GC_P_MASK;
}

template<class T>
double
jaccard(const std::set<T> &a, const std::set<T> &b)
{
	std::vector<T> both;
	std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
	const auto uni(a.size() + b.size() - both.size());
	return uni ? double(both.size()) / double(uni) : 0.0;
}

std::set<std::string>
unigrams(const std::vector<std::string> &w)
{
	return {w.begin(), w.end()};
}

std::set<std::pair<std::string, std::string>>
bigrams(const std::vector<std::string> &w)
{
	std::set<std::pair<std::string, std::string>> out;
	for(std::size_t i = 0; i + 1 < w.size(); ++i)
		out.emplace(w[i], w[i + 1]);

	return out;
}

} // namespace

std::vector<std::string>
normalized_words(std::string_view text)
{
	std::string cleaned;
	cleaned.reserve(text.size());
	const auto len(static_cast<int32_t>(text.size()));
	for(int32_t i = 0; i < len; )
	{
		UChar32 c;
		U8_NEXT(text.data(), i, len, c);
		if(c < 0)
			continue;
		if(is_apostrophe(c))
			continue;

		if(is_punct(c) || u_isUWhiteSpace(c))
			cleaned.push_back(' ');
		else
			append_utf8(cleaned, u_tolower(c));
	}

	std::vector<std::string> words;
	std::istringstream in(cleaned);
	for(std::string w; in >> w; )
		if(w != "a" && w != "an" && w != "the")
			words.push_back(std::move(w));

	return words;
}

std::string
normalize_text(std::string_view text)
{
	std::string out;
	for(const auto &w : normalized_words(text))
	{
		if(!out.empty())
			out.push_back(' ');

		out += w;
	}
	return out;
}

double
bigram_jaccard(std::string_view answer, std::string_view question)
{
	const auto a(normalized_words(answer)), q(normalized_words(question));
	if(a.empty() || q.empty())
		return 0.0;

	if(a.size() < 2 || q.size() < 2)
		return jaccard(unigrams(a), unigrams(q));

	return jaccard(bigrams(a), bigrams(q));
}

bool
is_within_question(std::string_view answer, std::string_view question)
{
	const auto a(normalized_words(answer)), q(normalized_words(question));
	if(a.empty())
		return true;

	return std::search(q.begin(), q.end(), a.begin(), a.end()) != q.end();
}

Stoplist::Stoplist(const std::vector<std::string> &entries)
{
	for(const auto &e : entries)
		if(auto n(normalize_text(e)); !n.empty())
			entries_.insert(std::move(n));
}

Stoplist
Stoplist::defaults()
{
	return Stoplist({"yes", "no", "i dont know", "none", "no one", "it depends"});
}

Stoplist
Stoplist::load(const std::filesystem::path &path)
{
	std::vector<std::string> lines;
	std::istringstream in(read_file(path));
	for(std::string line; std::getline(in, line); )
		lines.push_back(line);

	return Stoplist(lines);
}

bool
Stoplist::contains(std::string_view answer) const
{
	return entries_.contains(normalize_text(answer));
}

bool
is_stoplisted(std::string_view answer, const Stoplist &stoplist)
{
	return stoplist.contains(answer);
}

std::string_view
to_string(Verdict v) noexcept
{
	switch(v)
	{
		case Verdict::accepted:         return "accepted";
		case Verdict::smart_alec:       return "smart_alec";
		case Verdict::within_question:  return "within_question";
		case Verdict::stoplisted:       return "stoplisted";
		case Verdict::empty:            return "empty";
	}
	return "?";
}

FilterVerdict
judge_answer(std::string_view answer, std::string_view question, const Stoplist &stoplist)
{
	if(normalize_text(answer).empty())
		return {Verdict::empty, std::nullopt};

	if(const double j(bigram_jaccard(answer, question)); j > smart_alec_threshold)
		return {Verdict::smart_alec, j};

	if(is_within_question(answer, question))
		return {Verdict::within_question, std::nullopt};

	if(stoplist.contains(answer))
		return {Verdict::stoplisted, std::nullopt};

	return {Verdict::accepted, std::nullopt};
}

FilterResult
filter_candidates(const std::vector<Candidate> &candidates, std::string_view question, const Stoplist &stoplist)
{
	FilterResult result;
	result.verdicts.reserve(candidates.size());
	for(const auto &c : candidates)
	{
		result.verdicts.push_back(judge_answer(c.text, question, stoplist));
		if(!result.answer && result.verdicts.back().verdict == Verdict::accepted)
			result.answer = c.text;
	}
	return result;
}

} // namespace hintpipe
