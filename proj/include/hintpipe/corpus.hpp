#pragma once

#include "hintpipe/common.hpp"

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace hintpipe {

class Tokenizer;

struct EvalExample
{
	std::string id;
	std::string question;
	std::vector<std::string> answers;   // verbatim; normalized only when compared
	std::string doc_id;
	bool is_yes_no{false};
	bool has_short_answer{false};
};

struct Sentence
{
	SentId sent_id{0};
	std::string doc_id;
	std::string text;
	std::uint32_t token_count{0};
};

struct SentRange
{
	SentId begin{0};
	SentId end{0};
};

/// Immutable after construction. Sentences of one document occupy one
/// contiguous id range.
class SentencePool
{
  public:
	SentencePool() = default;
	explicit SentencePool(std::vector<Sentence> sentences);

	std::size_t size() const noexcept { return sentences_.size(); }
	bool empty() const noexcept { return sentences_.empty(); }
	const Sentence &operator[](SentId id) const { return sentences_.at(id); }
	const std::vector<Sentence> &sentences() const noexcept { return sentences_; }
	const std::map<std::string, SentRange> &by_doc() const noexcept { return by_doc_; }

  private:
	std::vector<Sentence> sentences_;
	std::map<std::string, SentRange> by_doc_;
};

enum class DatasetFormat { jsonl };

DatasetFormat parse_dataset_format(std::string_view tag);

std::vector<EvalExample> load_examples(const std::filesystem::path &path,
                                       DatasetFormat format = DatasetFormat::jsonl);

std::vector<EvalExample> parse_examples(std::string_view jsonl);

std::unordered_map<std::string, std::string> load_documents(const std::filesystem::path &path);

/// Keeps questions that are not yes/no and carry at least one short answer.
std::vector<EvalExample> filter_eval_set(const std::vector<EvalExample> &examples);

struct SplitterConfig
{
	/// Words (with their trailing period) after which a period does not end
	/// a sentence. Single capital initials ("J.") never end one either.
	std::vector<std::string> abbreviations;

	static SplitterConfig defaults();
};

std::vector<std::string> split_sentences(std::string_view document,
                                         const SplitterConfig &config = SplitterConfig::defaults());

/// Builds the pool over the documents the examples reference, in order of
/// first reference. Sentences repeated verbatim inside one document are
/// kept once.
SentencePool build_sentence_pool(const std::vector<EvalExample> &examples,
                                 const std::unordered_map<std::string, std::string> &documents,
                                 const Tokenizer &tokenizer,
                                 const SplitterConfig &config = SplitterConfig::defaults());

void save_pool(const std::filesystem::path &path, const SentencePool &pool);
SentencePool load_pool(const std::filesystem::path &path);

void save_examples(const std::filesystem::path &path, const std::vector<EvalExample> &examples);

} // namespace hintpipe
