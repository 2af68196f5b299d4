#include "hintpipe/corpus.hpp"
#include "hintpipe/tokenizer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_set>

namespace hintpipe {

namespace {

std::string
upper(std::string_view s)
{
	std::string out(s);
	std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c)
	{
		return static_cast<char>(std::toupper(c));
	});
	return out;
}

bool
is_yes_no_answer(std::string_view answer)
{
	const auto u(upper(trim(answer)));
	return u == "YES" || u == "NO";
}

std::string
record_name(std::size_t index)
{
	return "record " + std::to_string(index);
}

EvalExample
parse_example(const nlohmann::json &rec, const std::size_t index)
{
	if(!rec.is_object())
		throw Error(record_name(index) + ": expected a JSON object");

	EvalExample ex;
	if(const auto it(rec.find("question")); it != rec.end() && it->is_string())
		ex.question = it->get<std::string>();
	else
		throw Error(record_name(index) + ": missing string field 'question'");

	if(const auto it(rec.find("doc_id")); it != rec.end() && it->is_string())
		ex.doc_id = it->get<std::string>();
	else
		throw Error(record_name(index) + ": missing string field 'doc_id'");

	if(const auto it(rec.find("id")); it != rec.end())
	{
		if(!it->is_string())
			throw Error(record_name(index) + ": field 'id' must be a string");

		ex.id = it->get<std::string>();
	}
	else ex.id = std::to_string(index);

	if(const auto it(rec.find("answers")); it != rec.end())
	{
		if(!it->is_array())
			throw Error(record_name(index) + ": field 'answers' must be an array");

		for(const auto &a : *it)
		{
			if(!a.is_string())
				throw Error(record_name(index) + ": answers must be strings");

			ex.answers.push_back(a.get<std::string>());
		}
	}

	ex.has_short_answer = !ex.answers.empty();
	const bool derived_yes_no(ex.has_short_answer && std::all_of(ex.answers.begin(), ex.answers.end(), is_yes_no_answer));
	if(const auto it(rec.find("is_yes_no")); it != rec.end())
	{
		if(!it->is_boolean())
			throw Error(record_name(index) + ": field 'is_yes_no' must be a boolean");

		ex.is_yes_no = it->get<bool>();
		if(ex.is_yes_no && !std::all_of(ex.answers.begin(), ex.answers.end(), is_yes_no_answer))
			throw Error(record_name(index) + ": is_yes_no set but answers are not YES/NO");
	}
	else ex.is_yes_no = derived_yes_no;

	// A bare YES/NO gold list marks a yes/no question even when the flag
	// says otherwise.
	ex.is_yes_no = ex.is_yes_no || derived_yes_no;
	return ex;
}

template<class F>
void
for_each_jsonl(std::string_view text, F &&f)
{
	std::size_t pos(0), index(0);
	while(pos < text.size())
	{
		auto eol(text.find('\n', pos));
		if(eol == std::string_view::npos)
			eol = text.size();

		const auto line(trim(text.substr(pos, eol - pos)));
		pos = eol + 1;
		if(line.empty())
			continue;

		nlohmann::json rec;
		try
		{
			rec = nlohmann::json::parse(line);
		}
		catch(const nlohmann::json::exception &e)
		{
			throw Error(record_name(index) + ": malformed JSON: " + e.what());
		}
		f(rec, index++);
	}
}

bool
is_space(char c)
{
	return std::isspace(static_cast<unsigned char>(c));
}

std::string
collapse_whitespace(std::string_view s)
{
	std::string out;
	out.reserve(s.size());
	bool pending(false);
	for(const char c : s)
	{
		if(is_space(c))
		{
			pending = !out.empty();
			continue;
		}

		if(pending)
			out.push_back(' ');

		pending = false;
		out.push_back(c);
	}
	return out;
}

bool
is_closer(char c)
{
	return c == '"' || c == '\'' || c == ')' || c == ']' || c == '}';
}

} // namespace

SentencePool::SentencePool(std::vector<Sentence> sentences)
:sentences_{std::move(sentences)}
{
	for(std::size_t i = 0; i < sentences_.size(); ++i)
	{
		const auto &s(sentences_[i]);
		if(s.sent_id != i)
			throw Error("sentence pool: ids must be dense, expected " + std::to_string(i) + " got " + std::to_string(s.sent_id));
		if(trim(s.text).empty())
			throw Error("sentence pool: empty sentence " + std::to_string(i));
		if(s.token_count == 0)
			throw Error("sentence pool: zero token count for sentence " + std::to_string(i));

		auto [it, inserted] = by_doc_.try_emplace(s.doc_id, SentRange{s.sent_id, s.sent_id + 1});
		if(!inserted)
		{
			if(it->second.end != s.sent_id)
				throw Error("sentence pool: document " + s.doc_id + " is not contiguous");

			it->second.end = s.sent_id + 1;
		}
	}
}

DatasetFormat
parse_dataset_format(std::string_view tag)
{
	if(tag == "jsonl")
		return DatasetFormat::jsonl;

	throw Error("unknown dataset format: " + std::string(tag));
}

std::vector<EvalExample>
parse_examples(std::string_view jsonl)
{
	std::vector<EvalExample> out;
	for_each_jsonl(jsonl, [&](const nlohmann::json &rec, std::size_t index)
	{
		out.push_back(parse_example(rec, index));
	});
	return out;
}

std::vector<EvalExample>
load_examples(const std::filesystem::path &path, const DatasetFormat format)
{
	switch(format)
	{
		case DatasetFormat::jsonl:
			return parse_examples(read_file(path));
	}
	throw Error("unsupported dataset format");
}

std::unordered_map<std::string, std::string>
load_documents(const std::filesystem::path &path)
{
	std::unordered_map<std::string, std::string> docs;
	for_each_jsonl(read_file(path), [&](const nlohmann::json &rec, std::size_t index)
	{
		const auto id(rec.find("doc_id")), text(rec.find("text"));
		if(!rec.is_object() || id == rec.end() || !id->is_string() || text == rec.end() || !text->is_string())
			throw Error("documents " + record_name(index) + ": expected {\"doc_id\": str, \"text\": str}");

		if(!docs.emplace(id->get<std::string>(), text->get<std::string>()).second)
			throw Error("documents " + record_name(index) + ": duplicate doc_id " + id->get<std::string>());
	});
	return docs;
}

std::vector<EvalExample>
filter_eval_set(const std::vector<EvalExample> &examples)
{
	std::vector<EvalExample> out;
	std::copy_if(examples.begin(), examples.end(), std::back_inserter(out), [](const auto &ex)
	{
		return !ex.is_yes_no && ex.has_short_answer;
	});
	return out;
}

SplitterConfig
SplitterConfig::defaults()
{
	return SplitterConfig
	{
		{
			"Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "Sr.", "Jr.", "St.", "Mt.", "Ft.",
			"vs.", "e.g.", "i.e.", "cf.", "al.", "ca.", "approx.",
			"Inc.", "Ltd.", "Co.", "Corp.", "Bros.",
			"Gen.", "Gov.", "Sen.", "Rep.", "Lt.", "Col.", "Capt.", "Sgt.", "Rev.", "Fr.",
			"U.S.", "U.K.", "a.m.", "p.m.",
			"Jan.", "Feb.", "Mar.", "Apr.", "Jun.", "Jul.", "Aug.", "Sep.", "Sept.", "Oct.", "Nov.", "Dec.",
		}
	};
}

std::vector<std::string>
split_sentences(std::string_view document, const SplitterConfig &config)
{
	const std::unordered_set<std::string_view> abbreviations(config.abbreviations.begin(), config.abbreviations.end());
	const auto text(collapse_whitespace(document));

	std::vector<std::string> out;
	std::size_t start(0);
	for(std::size_t i = 0; i < text.size(); ++i)
	{
		const char c(text[i]);
		if(c != '.' && c != '!' && c != '?')
			continue;

		std::size_t j(i + 1);
		while(j < text.size() && is_closer(text[j]))
			++j;

		if(j >= text.size() || text[j] != ' ')
			continue;

		if(c == '.')
		{
			const auto space(text.rfind(' ', i));
			const auto word_begin(space == std::string::npos ? 0 : space + 1);
			const std::string_view word(text.data() + word_begin, i + 1 - word_begin);
			const bool initial(word.size() == 2 && std::isupper(static_cast<unsigned char>(word[0])));
			if(initial || abbreviations.contains(word))
				continue;
		}

		const auto sentence(trim(std::string_view(text).substr(start, j - start)));
		if(!sentence.empty())
			out.emplace_back(sentence);

		start = j + 1;
		i = j;
	}

	if(start < text.size())
		if(const auto rest(trim(std::string_view(text).substr(start))); !rest.empty())
			out.emplace_back(rest);

	return out;
}

SentencePool
build_sentence_pool(const std::vector<EvalExample> &examples,
                    const std::unordered_map<std::string, std::string> &documents,
                    const Tokenizer &tokenizer,
                    const SplitterConfig &config)
{
	std::vector<std::string> doc_order;
	std::unordered_set<std::string> seen_docs;
	for(const auto &ex : examples)
	{
		if(!documents.contains(ex.doc_id))
			throw Error("missing document: " + ex.doc_id);

		if(seen_docs.insert(ex.doc_id).second)
			doc_order.push_back(ex.doc_id);
	}

	std::vector<Sentence> sentences;
	for(const auto &doc_id : doc_order)
	{
		std::unordered_set<std::string> seen_text;
		for(auto &text : split_sentences(documents.at(doc_id), config))
		{
			if(!seen_text.insert(text).second)
				continue;

			Sentence s;
			s.sent_id = static_cast<SentId>(sentences.size());
			s.doc_id = doc_id;
			s.token_count = static_cast<std::uint32_t>(tokenizer.count(text));
			s.text = std::move(text);
			sentences.push_back(std::move(s));
		}
	}
	return SentencePool(std::move(sentences));
}

void
save_pool(const std::filesystem::path &path, const SentencePool &pool)
{
	atomic_write(path, [&](std::ostream &out)
	{
		for(const auto &s : pool.sentences())
		{
			const nlohmann::json rec
			{
				{"sent_id", s.sent_id},
				{"doc_id", s.doc_id},
				{"text", s.text},
				{"token_count", s.token_count},
			};
			out << rec.dump() << '\n';
		}
	});
}

SentencePool
load_pool(const std::filesystem::path &path)
{
	std::vector<Sentence> sentences;
	for_each_jsonl(read_file(path), [&](const nlohmann::json &rec, std::size_t index)
	{
		try
		{
			sentences.push_back(Sentence
			{
				rec.at("sent_id").get<SentId>(),
				rec.at("doc_id").get<std::string>(),
				rec.at("text").get<std::string>(),
				rec.at("token_count").get<std::uint32_t>(),
			});
		}
		catch(const nlohmann::json::exception &e)
		{
			throw Error("pool " + record_name(index) + ": " + e.what());
		}
	});
	return SentencePool(std::move(sentences));
}

void
save_examples(const std::filesystem::path &path, const std::vector<EvalExample> &examples)
{
	atomic_write(path, [&](std::ostream &out)
	{
		for(const auto &ex : examples)
		{
			const nlohmann::json rec
			{
				{"id", ex.id},
				{"question", ex.question},
				{"doc_id", ex.doc_id},
				{"answers", ex.answers},
				{"is_yes_no", ex.is_yes_no},
			};
			out << rec.dump() << '\n';
		}
	});
}

} // namespace hintpipe
