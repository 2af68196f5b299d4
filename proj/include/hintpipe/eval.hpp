#pragma once

#include "hintpipe/corpus.hpp"
#include "hintpipe/decoder.hpp"

#include <optional>
#include <string>
#include <vector>

namespace hintpipe {

/// The gold answer whose normalized form equals the prediction's, if any.
std::optional<std::string> matching_gold(std::string_view predicted, const std::vector<std::string> &golds);

bool exact_match(std::string_view predicted, const std::vector<std::string> &golds);

enum class HintMode { retrieve, none };

struct HintDiagnostics
{
	std::uint32_t hint_count{0};
	std::uint32_t hint_tokens{0};
	bool gold_doc_hit{false};   // some hint came from the question's own page
	std::optional<double> top_score;
};

struct QuestionOutcome
{
	std::optional<std::string> predicted;
	HintDiagnostics hints;
	std::size_t candidate_count{0};
};

/// Anything that answers one evaluation question.
class QaPipeline
{
  public:
	virtual ~QaPipeline() = default;

	virtual QuestionOutcome answer(const EvalExample &example,
	                               const DecodeConfig &cfg,
	                               HintMode mode) const = 0;
};

struct QuestionReport
{
	std::string id;
	std::string question;
	std::optional<std::string> predicted;
	std::optional<std::string> matched_gold;
	bool correct{false};
	HintDiagnostics hints;
	std::size_t candidate_count{0};
	std::optional<std::string> error;
};

struct EvalReport
{
	std::size_t total{0};
	std::size_t correct{0};
	double accuracy{0};
	bool accuracy_defined{false};   // false for an empty evaluation set
	std::vector<QuestionReport> per_question;
};

struct EvalOptions
{
	std::size_t workers{1};
};

/// Answers every example and scores it by exact match. Question i decodes
/// with seed cfg.rng_seed ^ i. A failing question counts as incorrect and
/// carries its error message. Rows follow the input order.
EvalReport run_eval(const QaPipeline &pipeline,
                    const std::vector<EvalExample> &examples,
                    const DecodeConfig &cfg,
                    HintMode mode = HintMode::retrieve,
                    const EvalOptions &options = {});

EvalReport no_hints_baseline(const QaPipeline &pipeline,
                             const std::vector<EvalExample> &examples,
                             const DecodeConfig &cfg,
                             const EvalOptions &options = {});

/// `meta` (a JSON object text, may be empty) is embedded as "config".
std::string report_to_json(const EvalReport &report, std::string_view meta_json = {});

/// accuracy=<x.xx>% correct=<n>/<total>
std::string summary_line(const EvalReport &report);

} // namespace hintpipe
