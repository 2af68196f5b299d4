#include "hintpipe/eval.hpp"
#include "hintpipe/filters.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <thread>

namespace hintpipe {

std::optional<std::string>
matching_gold(std::string_view predicted, const std::vector<std::string> &golds)
{
	if(golds.empty())
		throw Error("exact_match: no gold answers");

	const auto p(normalize_text(predicted));
	if(p.empty())
		return std::nullopt;

	for(const auto &g : golds)
		if(normalize_text(g) == p)
			return g;

	return std::nullopt;
}

bool
exact_match(std::string_view predicted, const std::vector<std::string> &golds)
{
	return matching_gold(predicted, golds).has_value();
}

EvalReport
run_eval(const QaPipeline &pipeline,
         const std::vector<EvalExample> &examples,
         const DecodeConfig &cfg,
         HintMode mode,
         const EvalOptions &options)
{
	cfg.validate();
	for(const auto &ex : examples)
		if(ex.is_yes_no || !ex.has_short_answer)
			throw Error("run_eval: example " + ex.id + " is not in the filtered evaluation set");

	EvalReport report;
	report.per_question.resize(examples.size());

	const auto evaluate([&](std::size_t i)
	{
		const auto &ex(examples[i]);
		auto &row(report.per_question[i]);
		row.id = ex.id;
		row.question = ex.question;

		auto qcfg(cfg);
		qcfg.rng_seed = cfg.rng_seed ^ std::uint64_t(i);
		try
		{
			const auto outcome(pipeline.answer(ex, qcfg, mode));
			row.predicted = outcome.predicted;
			row.hints = outcome.hints;
			row.candidate_count = outcome.candidate_count;
			if(row.predicted)
				row.matched_gold = matching_gold(*row.predicted, ex.answers);
		}
		catch(const std::exception &e)
		{
			row.error = e.what();
		}
		row.correct = row.matched_gold.has_value();
	});

	const auto workers(std::clamp<std::size_t>(options.workers, 1, std::max<std::size_t>(1, examples.size())));
	if(workers == 1)
		for(std::size_t i = 0; i < examples.size(); ++i)
			evaluate(i);
	else
	{
		std::atomic<std::size_t> next{0};
		std::vector<std::jthread> pool;
		for(std::size_t w = 0; w < workers; ++w)
			pool.emplace_back([&]
			{
				for(std::size_t i; (i = next.fetch_add(1)) < examples.size(); )
					evaluate(i);
			});
	}

	report.total = examples.size();
	report.correct = std::size_t(std::count_if(report.per_question.begin(), report.per_question.end(), [](const auto &q)
	{
		return q.correct;
	}));
	report.accuracy_defined = report.total > 0;
	report.accuracy = report.total ? double(report.correct) / double(report.total) : 0.0;
	return report;
}

EvalReport
no_hints_baseline(const QaPipeline &pipeline,
                  const std::vector<EvalExample> &examples,
                  const DecodeConfig &cfg,
                  const EvalOptions &options)
{
	return run_eval(pipeline, examples, cfg, HintMode::none, options);
}

std::string
report_to_json(const EvalReport &report, std::string_view meta_json)
{
	const auto opt([](const std::optional<std::string> &s)
	{
		return s ? nlohmann::json(*s) : nlohmann::json(nullptr);
	});

	nlohmann::ordered_json rows = nlohmann::ordered_json::array();
	for(const auto &q : report.per_question)
	{
		nlohmann::ordered_json row;
		row["id"] = q.id;
		row["question"] = q.question;
		row["predicted"] = opt(q.predicted);
		row["matched_gold"] = opt(q.matched_gold);
		row["correct"] = q.correct;
		row["candidates"] = q.candidate_count;
		row["hint_count"] = q.hints.hint_count;
		row["hint_tokens"] = q.hints.hint_tokens;
		row["gold_doc_hit"] = q.hints.gold_doc_hit;
		row["top_score"] = q.hints.top_score ? nlohmann::ordered_json(*q.hints.top_score) : nlohmann::ordered_json(nullptr);
		row["error"] = opt(q.error);
		rows.push_back(std::move(row));
	}

	nlohmann::ordered_json j;
	if(!meta_json.empty())
		j["config"] = nlohmann::ordered_json::parse(meta_json);

	j["total"] = report.total;
	j["correct"] = report.correct;
	j["accuracy"] = report.accuracy;
	j["accuracy_defined"] = report.accuracy_defined;
	j["per_question"] = std::move(rows);
	return j.dump(2) + '\n';
}

std::string
summary_line(const EvalReport &report)
{
	char buf[128];
	std::snprintf(buf, sizeof(buf), "accuracy=%.2f%% correct=%zu/%zu", 100.0 * report.accuracy, report.correct, report.total);
	return buf;
}

} // namespace hintpipe
