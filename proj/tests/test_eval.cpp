#include "support.hpp"

#include "hintpipe/eval.hpp"
#include "hintpipe/pipeline.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <mutex>
#include <set>

using namespace hintpipe;

namespace {

EvalExample
example(std::string id, std::vector<std::string> answers, std::string doc = "d")
{
	EvalExample ex;
	ex.id = id;
	ex.question = "question " + id;
	ex.doc_id = std::move(doc);
	ex.answers = std::move(answers);
	ex.has_short_answer = true;
	return ex;
}

// Answers from a table keyed by example id; records what it was asked.
class ScriptedPipeline : public QaPipeline
{
  public:
	explicit ScriptedPipeline(std::map<std::string, std::string> answers) : answers_{std::move(answers)} {}

	QuestionOutcome answer(const EvalExample &ex, const DecodeConfig &cfg, HintMode mode) const override
	{
		{
			std::lock_guard lock(mu_);
			seeds[ex.id] = cfg.rng_seed;
			modes.insert(mode);
		}
		if(ex.id == "boom")
			throw Error("backend fell over");

		QuestionOutcome out;
		if(const auto it(answers_.find(ex.id)); it != answers_.end())
			out.predicted = it->second;
		out.candidate_count = 3;
		out.hints.hint_count = mode == HintMode::retrieve ? 2 : 0;
		return out;
	}

	mutable std::map<std::string, std::uint64_t> seeds;
	mutable std::set<HintMode> modes;

  private:
	std::map<std::string, std::string> answers_;
	mutable std::mutex mu_;
};

} // namespace

TEST_CASE("exact_match")
{
	const std::vector<std::string> inches{"4 - inch screen size", "4 in", "4 in ( 10 cm )"};
	CHECK_FALSE(exact_match("4 inches", inches));
	CHECK(exact_match("4 in", inches));
	CHECK(exact_match("4 In.", inches));
	CHECK(matching_gold("4 in (10 cm)", inches) == "4 in ( 10 cm )");
	CHECK(exact_match("Old Trafford", {"old trafford"}));
	CHECK(exact_match("the Old Trafford", {"Old Trafford"}));
	CHECK_FALSE(exact_match("Trafford", {"Old Trafford"}));
	CHECK_FALSE(exact_match("", {"Old Trafford"}));
	CHECK_FALSE(exact_match("the", {"a"}));
	CHECK_THROWS_AS(exact_match("x", {}), Error);
}

TEST_CASE("run_eval scores by exact match")
{
	const std::vector<EvalExample> ex{
		example("a", {"Paris"}),
		example("b", {"Old Trafford"}),
		example("c", {"4 in"}),
		example("d", {"Turing"}),
	};
	const ScriptedPipeline p({{"a", "paris"}, {"b", "Wembley"}, {"c", "4 inches"}});

	DecodeConfig cfg;
	cfg.rng_seed = 40;
	const auto r(run_eval(p, ex, cfg));
	CHECK(r.total == 4);
	CHECK(r.correct == 1);
	CHECK(r.accuracy == 0.25);
	CHECK(r.accuracy_defined);
	CHECK(summary_line(r) == "accuracy=25.00% correct=1/4");

	REQUIRE(r.per_question.size() == 4);
	CHECK(r.per_question[0].correct);
	CHECK(r.per_question[0].matched_gold == "Paris");
	CHECK_FALSE(r.per_question[1].correct);
	CHECK_FALSE(r.per_question[3].predicted.has_value());
	CHECK(r.per_question[3].candidate_count == 3);

	// Question i decodes with seed ^ i.
	CHECK(p.seeds.at("a") == 40);
	CHECK(p.seeds.at("b") == 41);
	CHECK(p.seeds.at("c") == 42);
	CHECK(p.seeds.at("d") == 43);
}

TEST_CASE("empty evaluation set")
{
	const ScriptedPipeline p(std::map<std::string, std::string>{});
	const auto r(run_eval(p, {}, DecodeConfig{}));
	CHECK(r.total == 0);
	CHECK_FALSE(r.accuracy_defined);
	CHECK(summary_line(r) == "accuracy=0.00% correct=0/0");
	const auto j(nlohmann::json::parse(report_to_json(r)));
	CHECK(j.at("accuracy_defined") == false);
	CHECK(j.at("per_question").empty());
}

TEST_CASE("unfiltered input is rejected")
{
	auto yn(example("y", {"yes"}));
	yn.is_yes_no = true;
	auto none(example("n", {}));
	none.has_short_answer = false;
	const ScriptedPipeline p(std::map<std::string, std::string>{});
	CHECK_THROWS_AS(run_eval(p, {yn}, DecodeConfig{}), Error);
	CHECK_THROWS_AS(run_eval(p, {none}, DecodeConfig{}), Error);
}

TEST_CASE("a failing question is recorded and scored wrong")
{
	const ScriptedPipeline p(std::map<std::string, std::string>{{"a", "x"}});
	const auto r(run_eval(p, {example("a", {"x"}), example("boom", {"x"})}, DecodeConfig{}));
	CHECK(r.correct == 1);
	CHECK(r.total == 2);
	REQUIRE(r.per_question[1].error.has_value());
	CHECK(r.per_question[1].error->find("fell over") != std::string::npos);
	CHECK_FALSE(r.per_question[1].correct);

	const auto j(nlohmann::json::parse(report_to_json(r, R"({"seed": 0})")));
	CHECK(j.at("config").at("seed") == 0);
	CHECK(j.at("per_question").at(1).at("error").is_string());
	CHECK(j.at("per_question").at(0).at("error").is_null());
}

TEST_CASE("no-hints baseline is the none mode")
{
	const ScriptedPipeline p(std::map<std::string, std::string>{{"a", "x"}});
	const std::vector<EvalExample> ex{example("a", {"x"}), example("b", {"y"})};
	const auto base(no_hints_baseline(p, ex, DecodeConfig{}));
	CHECK(p.modes == std::set<HintMode>{HintMode::none});
	CHECK(report_to_json(base) == report_to_json(run_eval(p, ex, DecodeConfig{}, HintMode::none)));
	CHECK(base.per_question[0].hints.hint_count == 0);
}

TEST_CASE("reports do not depend on the worker count")
{
	std::map<std::string, std::string> answers;
	std::vector<EvalExample> ex;
	for(int i = 0; i < 200; ++i)
	{
		const auto id(std::to_string(i));
		ex.push_back(example(id, {i % 3 ? "yes sir" : "no sir"}));
		answers[id] = i % 2 ? "yes sir" : "no sir";
	}
	const ScriptedPipeline p(answers);

	const auto one(report_to_json(run_eval(p, ex, DecodeConfig{}, HintMode::retrieve, {1})));
	for(const std::size_t w : {2, 4, 8, 64, 1000})
		CHECK(report_to_json(run_eval(p, ex, DecodeConfig{}, HintMode::retrieve, {w})) == one);
}

TEST_CASE("hinted pipeline end to end with a scripted model")
{
	const auto tok(test::byte_tokenizer());
	std::vector<Sentence> s;
	for(const auto *t : {"Hamlet is set in Denmark.", "Paris is in France.", "Rome is in Italy."})
		s.push_back(Sentence{SentId(s.size()), s.empty() ? "hamlet" : "other", t, std::uint32_t(tok->count(t))});
	const auto pool(std::make_shared<const SentencePool>(std::move(s)));

	const IndexMatrix m(3, 2, {1, 0, 0, 1, -1, 0}, NormStatus::unit);
	const auto index(std::make_shared<const SentenceIndex>(m, ShiftVector{{0.0, 0.0}}));

	// Answers "Denmark" if the prompt mentions it, otherwise "Norway".
	const test::FunctionLm lm_impl(LmInfo{400, 256, 2, "f"}, [](std::span<const TokenId> ctx)
	{
		std::string text;
		for(const auto id : ctx)
			text.push_back(char(id));
		const auto open(text.rfind("is \""));
		const auto so_far(text.substr(open + 4));
		const std::string target(text.find("Denmark.") != std::string::npos ? "Denmark\"" : "Norway\"");
		std::vector<double> d(256, 0.0);
		d[static_cast<unsigned char>(so_far.size() < target.size() ? target[so_far.size()] : '"')] = 1.0;
		return d;
	});
	const auto lm(std::shared_ptr<const LanguageModel>(&lm_impl, [](auto) {}));

	PipelineParts parts;
	parts.pool = pool;
	parts.index = index;
	parts.embed_question = [](std::string_view) { return std::vector<double>{1.0, 0.1}; };
	parts.tokenizer = tok;
	parts.lm = lm;
	parts.hint_budget = 30;

	auto ex(example("h", {"Denmark"}, "hamlet"));
	ex.question = "where is hamlet set";

	DecodeConfig cfg;
	cfg.n_candidates = 2;

	const HintedPipeline hinted(parts);
	const auto r(run_eval(hinted, {ex}, cfg));
	CHECK(r.correct == 1);
	CHECK(r.per_question[0].hints.hint_count == 1);
	CHECK(r.per_question[0].hints.gold_doc_hit);
	CHECK(r.per_question[0].hints.top_score == doctest::Approx(1.0 / std::sqrt(1.01)));

	const auto base(no_hints_baseline(hinted, {ex}, cfg));
	CHECK(base.correct == 0);
	CHECK(base.per_question[0].predicted == "Norway");
	CHECK(base.per_question[0].hints.hint_count == 0);

	parts.exclude_own_doc = true;
	const HintedPipeline excluded(parts);
	const auto rx(run_eval(excluded, {ex}, cfg));
	CHECK(rx.correct == 0);
	CHECK_FALSE(rx.per_question[0].hints.gold_doc_hit);

	parts.index = nullptr;
	parts.exclude_own_doc = false;
	const HintedPipeline bare(parts);
	CHECK(report_to_json(run_eval(bare, {ex}, cfg)) == report_to_json(base));
}
