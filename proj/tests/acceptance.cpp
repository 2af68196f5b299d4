// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include "hintpipe/cli.hpp"
#include "hintpipe/corpus.hpp"
#include "hintpipe/decoder.hpp"
#include "hintpipe/embedding.hpp"
#include "hintpipe/filters.hpp"
#include "hintpipe/lm.hpp"
#include "hintpipe/prompt.hpp"
#include "hintpipe/retrieval.hpp"
#include "hintpipe/tokenizer.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

using namespace hintpipe;

namespace {

namespace fs = std::filesystem;

struct Outcome
{
	bool pass;
	std::string detail;
};

int failures(0);

void
criterion(const char *name, double limit_seconds, const std::function<Outcome()> &fn)
{
	const auto t0(std::chrono::steady_clock::now());
	Outcome o;
	try
	{
		o = fn();
	}
	catch(const std::exception &e)
	{
		o = {false, std::string("exception: ") + e.what()};
	}
	const double secs(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
	if(limit_seconds > 0 && secs >= limit_seconds)
	{
		o.pass = false;
		o.detail += " (over the " + std::to_string(limit_seconds) + " s limit)";
	}

	std::printf("%s  %-28s %8.3f s  %s\n", o.pass ? "PASS" : "FAIL", name, secs, o.detail.c_str());
	if(!o.pass)
		++failures;
}

std::vector<double>
random_unit(std::mt19937_64 &rng, std::size_t d)
{
	std::normal_distribution<double> g;
	std::vector<double> v(d);
	double n(0);
	for(auto &x : v)
		n += (x = g(rng)) * x;
	for(auto &x : v)
		x /= std::sqrt(n);
	return v;
}

IndexMatrix
random_index(std::mt19937_64 &rng, std::size_t rows, std::size_t d)
{
	std::vector<float> v;
	for(std::size_t i = 0; i < rows; ++i)
		for(const double x : random_unit(rng, d))
			v.push_back(float(x));
	return IndexMatrix(rows, d, std::move(v), NormStatus::unit);
}

std::vector<ScoredSentence>
brute_force_rank(std::span<const double> q, const IndexMatrix &m)
{
	std::vector<ScoredSentence> all;
	for(std::size_t i = 0; i < m.rows(); ++i)
	{
		double s(0);
		for(std::size_t k = 0; k < m.dim(); ++k)
			s += q[k] * double(m.row(i)[k]);
		all.push_back({SentId(i), s});
	}
	std::stable_sort(all.begin(), all.end(), [](const auto &a, const auto &b) { return a.score > b.score; });
	return all;
}

class FunctionLm : public LanguageModel
{
  public:
	using Fn = std::function<std::vector<double>(std::span<const TokenId>)>;

	FunctionLm(LmInfo info, Fn fn) : info_{std::move(info)}, fn_{std::move(fn)} {}

	LmInfo info() const override { return info_; }

  protected:
	TokenDistribution distribution(std::span<const TokenId> ctx) const override { return {fn_(ctx), false}; }

  private:
	LmInfo info_;
	Fn fn_;
};

Outcome
table1_filters()
{
	const auto stop(Stoplist::defaults());
	const struct { const char *q, *a; Verdict v; } rows[]{
		{"Who is the richest club in the championship?", "The richest club in the championship", Verdict::smart_alec},
		{"Are all firestone tires made in the usa?", "No", Verdict::stoplisted},
		{"What is the name of manchester united stadium?", "Manchester United", Verdict::within_question},
		{"Who cracked the enigma code in world war 2?", "Alan Turing", Verdict::accepted},
		{"How many inches is the iphone 5s screen?", "4 inches", Verdict::accepted},
	};
	std::string detail;
	bool ok(true);
	for(const auto &r : rows)
	{
		const auto got(judge_answer(r.a, r.q, stop).verdict);
		ok = ok && got == r.v;
		detail += std::string(to_string(got)) + " ";
	}
	return {ok, detail};
}

Outcome
sif_oracle()
{
	const auto tok(std::make_shared<const Tokenizer>(Tokenizer::byte_level()));
	std::mt19937_64 rng(2024);
	std::size_t checked(0), skipped(0);
	double worst(0);
	for(int trial = 0; trial < 200; ++trial)
	{
		const std::size_t d(2 + rng() % 7), n(2 + rng() % 9);
		std::normal_distribution<float> g;
		std::vector<float> tv(256 * d);
		for(auto &x : tv)
			x = g(rng);
		const auto table(std::make_shared<const IndexMatrix>(256, d, std::move(tv)));

		std::vector<std::string> texts;
		std::vector<Sentence> sentences;
		for(std::size_t i = 0; i < n; ++i)
		{
			std::string s;
			for(std::size_t k = 0, len = 1 + rng() % 8; k < len; ++k)
				s += char('a' + rng() % 6);
			texts.push_back(s);
			sentences.push_back(Sentence{SentId(i), "d", s, std::uint32_t(s.size())});
		}
		const SentencePool pool(std::move(sentences));
		const double a(1e-3);

		std::map<int, double> count;
		double total(0);
		for(const auto &t : texts)
			for(const char c : t)
				++count[c], ++total;

		Eigen::MatrixXd raw(n, d);
		for(std::size_t i = 0; i < n; ++i)
		{
			Eigen::VectorXd v(Eigen::VectorXd::Zero(Eigen::Index(d)));
			for(const char c : texts[i])
			{
				const double w(a / (a + count[c] / total));
				for(std::size_t k = 0; k < d; ++k)
					v[Eigen::Index(k)] += w * double(table->row(std::size_t(c))[k]);
			}
			raw.row(Eigen::Index(i)) = v / double(texts[i].size());
		}
		const Eigen::MatrixXd centered(raw.rowwise() - raw.colwise().mean());
		const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered.transpose() * centered);
		const auto top(Eigen::Index(d) - 1);
		const Eigen::VectorXd u(es.eigenvectors().col(top));
		if(es.eigenvalues()[top] - es.eigenvalues()[top - 1] < 1e-3 * es.eigenvalues()[top])
		{
			++skipped;   // first PC not well defined
			continue;
		}

		const auto got(fit_sif(pool, tok, table, a).embed_pool(pool));
		for(std::size_t i = 0; i < n; ++i)
		{
			const Eigen::VectorXd r(raw.row(Eigen::Index(i)).transpose());
			const Eigen::VectorXd removed(r - r.dot(u) * u);
			const Eigen::VectorXd expect(removed.norm() > 1e-6 * r.norm() ? removed.normalized() : r.normalized());
			for(std::size_t k = 0; k < d; ++k)
				worst = std::max(worst, std::abs(got.row(i)[k] - expect[Eigen::Index(k)]));
		}
		++checked;
	}
	char buf[128];
	std::snprintf(buf, sizeof(buf), "corpora=%zu skipped_tied=%zu max_err=%.2e", checked, skipped, worst);
	return {checked > 100 && worst <= 1e-6, buf};
}

Outcome
retrieval_oracle()
{
	std::mt19937_64 rng(77);
	auto idx(random_index(rng, 1000, 16));

	// Duplicate some rows so exact score ties occur.
	std::vector<float> v(idx.values().begin(), idx.values().end());
	for(std::size_t r = 500; r < 520; ++r)
		std::copy_n(v.begin() + std::ptrdiff_t((r - 500) * 16), 16, v.begin() + std::ptrdiff_t(r * 16));
	idx = IndexMatrix(1000, 16, std::move(v), NormStatus::unit);

	std::size_t ties(0);
	for(int q = 0; q < 50; ++q)
	{
		const auto search(random_unit(rng, 16));
		const auto expect(brute_force_rank(search, idx));
		if(rank_by_cosine(search, idx) != expect)
			return {false, "mismatch on query " + std::to_string(q)};
		for(std::size_t i = 1; i < expect.size(); ++i)
			ties += expect[i].score == expect[i - 1].score;
	}
	return {ties > 0, "50 queries, " + std::to_string(ties) + " tied pairs ordered by sent_id"};
}

Outcome
nucleus_property()
{
	const auto tok(Tokenizer::byte_level());
	std::mt19937_64 rng(64);
	std::gamma_distribution<double> g(0.4);
	const double top_p(0.9);

	for(int trial = 0; trial < 1000; ++trial)
	{
		std::vector<double> d(64);
		for(auto &x : d)
			x = g(rng) + 1e-12;
		const double s(std::accumulate(d.begin(), d.end(), 0.0));
		for(auto &x : d)
			x /= s;

		// Minimal top-p set by exact sort.
		std::vector<std::size_t> order(64);
		std::iota(order.begin(), order.end(), 0);
		std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return d[a] > d[b]; });
		std::set<TokenId> nucleus;
		for(double mass(0); const auto i : order)
		{
			if(mass >= top_p)
				break;
			nucleus.insert(TokenId(i));
			mass += d[i];
		}

		const FunctionLm lm(LmInfo{128, 64, 4, "f"}, [&](auto) { return d; });
		PromptSpec prompt;
		prompt.ids = {1, 2, 3};
		DecodeConfig cfg;
		cfg.top_p = top_p;
		cfg.max_answer_tokens = 1;
		std::mt19937_64 draw(rng());
		TokenId chosen(0);
		sample_answer(lm, tok, prompt, cfg, draw, [&](auto, TokenId t) { chosen = t; });
		if(!nucleus.contains(chosen))
			return {false, "token outside the nucleus at trial " + std::to_string(trial)};

		if(nucleus_filter(d, 1.0) != d)
			return {false, "p=1 is not the identity"};
	}

	const std::vector<double> ex{0.5, 0.4, 0.1};
	const auto f(nucleus_filter(ex, 0.9));
	if(f != std::vector<double>{0.5 / 0.9, 0.4 / 0.9, 0.0})
		return {false, "[0.5,0.4,0.1] example"};
	return {true, "1000 distributions, vocab 64, top_p 0.9"};
}

Outcome
bias_ranking()
{
	const auto make([](std::size_t len, double logprob, double alpha)
	{
		Candidate c;
		c.token_ids.assign(len, 0);
		c.text = std::string(len, 'x');
		c.logprob = logprob;
		c.biased_score = logprob + alpha * double(len);
		return c;
	});

	std::vector<Candidate> equal{make(2, -3.0, 0.7), make(5, -3.0, 0.7)};
	sort_candidates(equal);
	const bool longer_first(equal[0].token_ids.size() == 5);

	// alpha = 0: order equals descending logprob.
	std::mt19937_64 rng(5);
	bool pure(true);
	for(int t = 0; t < 200 && pure; ++t)
	{
		std::vector<Candidate> c;
		for(int i = 0; i < 8; ++i)
			c.push_back(make(1 + rng() % 6, -double(rng() % 1000) / 100.0, 0.0));
		sort_candidates(c);
		pure = std::is_sorted(c.begin(), c.end(), [](const auto &a, const auto &b) { return a.logprob > b.logprob; });
	}

	// Through the decoder: two equally likely answers of 5 and 2 tokens.
	const auto tok(Tokenizer::byte_level());
	PromptSpec prompt;
	prompt.ids = tok.tokenize("Q");
	const FunctionLm lm(LmInfo{64, 256, 4, "f"}, [](std::span<const TokenId> ctx)
	{
		std::string s;
		for(std::size_t i = 1; i < ctx.size(); ++i)
			s.push_back(char(ctx[i]));
		std::vector<double> d(256, 0.0);
		if(s.empty())
			d['a'] = d['x'] = 0.5;
		else if(s.starts_with("a") && s.size() < 4)
			d[std::size_t("abcd"[s.size()])] = 1.0;
		else
			d['"'] = 1.0;
		return d;
	});
	DecodeConfig cfg;
	cfg.top_p = 1.0;
	cfg.n_candidates = 2;
	bool grid_ok(true);
	std::string order;
	for(const double alpha : {0.0, 0.2, 0.7})
	{
		cfg.alpha = alpha;
		const auto c(generate_candidates(lm, tok, prompt, cfg));
		grid_ok = grid_ok && c.size() == 2 && c[0].text == (alpha > 0 ? "abcd" : "x");
		order += (c.empty() ? std::string("?") : c[0].text) + " ";

		PipelineConfig pc;
		char buf[16];
		std::snprintf(buf, sizeof(buf), "%g", alpha);
		pc.set("alpha", buf);
		grid_ok = grid_ok && pc.decode().alpha == alpha;
	}

	return {longer_first && pure && grid_ok, "alpha 0/0.2/0.7 leaders: " + order};
}

int
tool(std::vector<std::string> args, std::string *out = nullptr)
{
	args.insert(args.begin(), "hintpipe");
	args.insert(args.begin() + 1, {"--log-level", "warn"});
	std::ostringstream o, e;
	const int code(run_command(args, o, e));
	if(out)
		*out = o.str();
	if(code)
		std::cerr << e.str();
	return code;
}

Outcome
end_to_end_determinism()
{
	const fs::path data(HINTPIPE_TEST_DATA);
	std::random_device rd;
	const auto dir(fs::temp_directory_path() / ("hintpipe-acceptance-" + std::to_string(rd())));
	fs::create_directories(dir);
	struct Cleanup { fs::path p; ~Cleanup() { std::error_code ec; fs::remove_all(p, ec); } } cleanup{dir};

	const auto s([](const fs::path &p) { return p.string(); });
	if(tool({"ingest", "--examples", s(data / "mini/examples.jsonl"), "--documents", s(data / "mini/documents.jsonl"),
	         "--vocab", s(data / "tiny_vocab.json"), "--merges", s(data / "tiny_merges.txt"), "--out", s(dir / "pool.jsonl")})
	   || tool({"embed", "--pool", s(dir / "pool.jsonl"), "--vocab", s(data / "tiny_vocab.json"), "--merges", s(data / "tiny_merges.txt"),
	            "--emb-table", s(data / "tiny_table.emb1"), "--out", s(dir / "sif.emb1")})
	   || tool({"index", "--matrix", s(dir / "sif.emb1"), "--out", s(dir / "sif.index.json")}))
		return {false, "building the fixture failed"};

	const auto eval([&](const std::string &seed, const std::string &name)
	{
		if(tool({"eval", "--index", s(dir / "sif.index.json"), "--lm", "mock:" + s(data / "mini/mock_lm.json"),
		         "-n", "1", "--seed", seed, "--out", s(dir / name)}))
			throw Error("eval failed");
		return read_file(dir / name);
	});

	const auto a(eval("1", "a.json")), b(eval("1", "b.json")), c(eval("2", "c.json"));
	const auto rows([](const std::string &r) { return nlohmann::json::parse(r).at("per_question").dump(); });
	const auto n(nlohmann::json::parse(a).at("total").get<int>());
	const bool same(a == b), differs(rows(a) != rows(c));
	return {n == 8 && same && differs, std::to_string(n) + " questions, same seed identical=" + (same ? "yes" : "no")
	                                     + ", other seed answers differ=" + (differs ? "yes" : "no")};
}

Outcome
shift_identity()
{
	std::mt19937_64 rng(31);
	const auto idx(random_index(rng, 300, 12));
	std::vector<std::vector<double>> rows;
	for(std::size_t i = 0; i < idx.rows(); ++i)
		rows.emplace_back(idx.row(i).begin(), idx.row(i).end());
	const auto m(EmbeddingMatrix::from_rows(rows));

	const auto shift(compute_shift(m, m));
	if(std::any_of(shift.delta.begin(), shift.delta.end(), [](double x) { return x != 0.0; }))
		return {false, "non-zero shift"};

	for(int q = 0; q < 100; ++q)
	{
		const auto e(random_unit(rng, 12));
		const auto shifted(rank_by_cosine(make_search_vector(e, shift), idx)), plain(rank_by_cosine(e, idx));
		for(std::size_t i = 0; i < plain.size(); ++i)
			if(shifted[i].sent_id != plain[i].sent_id || std::abs(shifted[i].score - plain[i].score) > 1e-12)
				return {false, "shifted ranking differs"};
	}
	return {true, "zero shift, 100 queries identical"};
}

Outcome
budget_law()
{
	std::mt19937_64 rng(99);
	const auto idx(random_index(rng, 400, 8));
	const SentenceIndex index(idx, ShiftVector{std::vector<double>(8, 0.0)});

	for(int t = 0; t < 1000; ++t)
	{
		std::vector<Sentence> s;
		for(SentId i = 0; i < 400; ++i)
			s.push_back(Sentence{i, "d" + std::to_string(i / 31), "s", std::uint32_t(1 + rng() % 120)});
		const SentencePool pool(std::move(s));
		const std::uint32_t window(64 + std::uint32_t(rng() % 2048));
		const auto q(random_unit(rng, 8));
		const auto h(index.retrieve(q, pool, hint_budget_for(window), 1));

		if(h.token_total > window / 2)
			return {false, "budget exceeded at trial " + std::to_string(t)};

		std::uint32_t sum(0);
		for(const auto id : h.selected)
			sum += pool[id].token_count + 1;
		if(sum != h.token_total)
			return {false, "token_total disagrees with the selection"};

		const auto full(brute_force_rank(q, idx));
		std::vector<std::size_t> rank(full.size());
		for(std::size_t i = 0; i < full.size(); ++i)
			rank[full[i].sent_id] = i;
		for(std::size_t i = 1; i < h.selected.size(); ++i)
			if(rank[h.selected[i - 1]] >= rank[h.selected[i]])
				return {false, "selection out of rank order"};
	}
	return {true, "1000 selections within floor(window/2), rank-ordered"};
}

} // namespace

int
main()
{
	criterion("table1-filter-fixtures", 1.0, table1_filters);
	criterion("sif-oracle-equivalence", 0, sif_oracle);
	criterion("retrieval-oracle", 5.0, retrieval_oracle);
	criterion("nucleus-property-suite", 0, nucleus_property);
	criterion("bias-ranking", 0, bias_ranking);
	criterion("end-to-end-determinism", 0, end_to_end_determinism);
	criterion("shift-vector-identity", 0, shift_identity);
	criterion("budget-law", 0, budget_law);

	std::printf("%s: %d failing\n", failures ? "FAIL" : "PASS", failures);
	return failures ? 1 : 0;
}
