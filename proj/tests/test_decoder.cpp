#include "support.hpp"

#include "hintpipe/decoder.hpp"
#include "hintpipe/filters.hpp"
#include "hintpipe/prompt.hpp"

#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <set>

using namespace hintpipe;

namespace {

const hintpipe::LmInfo byte_info{512, 256, 8, "test"};

PromptSpec
prompt_of(std::string_view text)
{
	PromptSpec p;
	p.text = text;
	p.ids = test::byte_tokenizer()->tokenize(text);
	p.prompt_tokens = std::uint32_t(p.ids.size());
	return p;
}

std::vector<double>
one_hot(char c)
{
	std::vector<double> d(256, 0.0);
	d[static_cast<unsigned char>(c)] = 1.0;
	return d;
}

std::vector<double>
mix(std::initializer_list<std::pair<char, double>> parts)
{
	std::vector<double> d(256, 0.0);
	for(const auto &[c, p] : parts)
		d[static_cast<unsigned char>(c)] = p;
	return d;
}

// Generated text so far, given the prompt length.
std::string
answer_so_far(std::span<const TokenId> ctx, std::size_t prompt_len)
{
	std::string s;
	for(std::size_t i = prompt_len; i < ctx.size(); ++i)
		s.push_back(char(ctx[i]));
	return s;
}

// Walks fixed answer strings: first char by weight, then the rest with
// probability one.
test::FunctionLm
answers_lm(std::vector<std::pair<std::string, double>> answers, std::size_t prompt_len)
{
	return test::FunctionLm(byte_info, [answers, prompt_len](std::span<const TokenId> ctx)
	{
		const auto so_far(answer_so_far(ctx, prompt_len));
		if(so_far.empty())
		{
			std::vector<double> d(256, 0.0);
			for(const auto &[a, w] : answers)
				d[static_cast<unsigned char>(a[0])] += w;
			return d;
		}
		for(const auto &[a, w] : answers)
			if(a.starts_with(so_far) && so_far.size() < a.size())
				return one_hot(a[so_far.size()]);
		return one_hot('"');
	});
}

std::uint64_t
splitmix64_oracle(std::uint64_t x)
{
	x += 0x9E3779B97F4A7C15ULL;
	x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
	x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
	return x ^ (x >> 31);
}

class TruncatedLm : public LanguageModel
{
  public:
	explicit TruncatedLm(std::vector<double> probs) : probs_{std::move(probs)} {}

	LmInfo info() const override { return byte_info; }

  protected:
	TokenDistribution distribution(std::span<const TokenId>) const override
	{
		return TokenDistribution{probs_, true};
	}

  private:
	std::vector<double> probs_;
};

} // namespace

TEST_CASE("nucleus_filter examples")
{
	using V = std::vector<double>;
	const auto near([](const V &a, const V &b)
	{
		REQUIRE(a.size() == b.size());
		for(std::size_t i = 0; i < a.size(); ++i)
			CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
	});

	near(nucleus_filter(V{0.95, 0.05}, 0.9), V{1.0, 0.0});
	near(nucleus_filter(V{0.5, 0.4, 0.1}, 0.9), V{5.0 / 9, 4.0 / 9, 0.0});
	near(nucleus_filter(V{0.1, 0.4, 0.5}, 0.9), V{0.0, 4.0 / 9, 5.0 / 9});
	near(nucleus_filter(V{0.4, 0.3, 0.3}, 0.6), V{4.0 / 7, 3.0 / 7, 0.0});
	near(nucleus_filter(V{0.2, 0.3, 0.5}, 1.0), V{0.2, 0.3, 0.5});
	near(nucleus_filter(V{0.6, 0.4}, 0.6), V{1.0, 0.0});

	CHECK_THROWS_AS(nucleus_filter(V{0.5, 0.4}, 0.9), Error);
	CHECK_THROWS_AS(nucleus_filter(V{1.2, -0.2}, 0.9), Error);
	CHECK_THROWS_AS(nucleus_filter(V{0.5, 0.5}, 0.0), Error);
	CHECK_THROWS_AS(nucleus_filter(V{0.5, 0.5}, 1.5), Error);
}

TEST_CASE("nucleus_filter keeps the smallest covering prefix")
{
	std::mt19937_64 rng(21);
	std::gamma_distribution<double> g(0.3);
	for(int trial = 0; trial < 300; ++trial)
	{
		std::vector<double> d(2 + rng() % 40);
		for(auto &x : d)
			x = g(rng);
		const double s(std::accumulate(d.begin(), d.end(), 0.0));
		if(!(s > 0))
			continue;
		for(auto &x : d)
			x /= s;
		const double p(0.05 + 0.95 * double(rng() % 1000) / 1000.0);

		const auto f(nucleus_filter(d, p));

		std::vector<std::size_t> order(d.size());
		std::iota(order.begin(), order.end(), 0);
		std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return d[a] > d[b]; });
		double mass(0);
		std::set<std::size_t> expect;
		for(const auto i : order)
		{
			if(mass >= p || d[i] == 0)
				break;
			expect.insert(i);
			mass += d[i];
		}

		std::set<std::size_t> got;
		double total(0);
		for(std::size_t i = 0; i < f.size(); ++i)
			if(f[i] > 0)
			{
				got.insert(i);
				total += f[i];
				CHECK(f[i] == doctest::Approx(d[i] / mass));
			}
		CAPTURE(p);
		if(p < 1.0)
			CHECK(got == expect);
		CHECK(total == doctest::Approx(1.0));
	}
}

TEST_CASE("draw seeds")
{
	CHECK(draw_seed(5, 3) == splitmix64_oracle(5 ^ splitmix64_oracle(3)));
	CHECK(draw_seed(0, 0) == splitmix64_oracle(splitmix64_oracle(0)));
	std::set<std::uint64_t> seen;
	for(std::uint64_t d = 0; d < 1000; ++d)
		seen.insert(draw_seed(42, d));
	CHECK(seen.size() == 1000);
}

TEST_CASE("sample_answer stops at the closing quote")
{
	const auto tok(test::byte_tokenizer());
	const auto prompt(prompt_of("Q: \""));
	const auto lm(answers_lm({{"Paris", 1.0}}, prompt.ids.size()));

	std::mt19937_64 rng(1);
	const auto c(sample_answer(lm, *tok, prompt, DecodeConfig{}, rng));
	CHECK(c.text == "Paris");
	CHECK(c.token_ids.size() == 6);
	CHECK(c.terminated == Termination::quote);
	CHECK(c.logprob == 0.0);
	CHECK(c.biased_score == 0.0);
}

TEST_CASE("sample_answer without a quote runs to the length limit")
{
	const auto tok(test::byte_tokenizer());
	const test::FunctionLm lm(byte_info, [](auto) { return one_hot('a'); });

	std::mt19937_64 rng(1);
	const auto c(sample_answer(lm, *tok, prompt_of("Q: \""), DecodeConfig{}, rng));
	CHECK(c.text == std::string(24, 'a'));
	CHECK(c.token_ids.size() == 24);
	CHECK(c.terminated == Termination::length_limit);

	DecodeConfig shorter;
	shorter.max_answer_tokens = 3;
	CHECK(sample_answer(lm, *tok, prompt_of("Q"), shorter, rng).text == "aaa");
}

TEST_CASE("sample_answer log-probability over two steps")
{
	const auto tok(test::byte_tokenizer());
	const auto prompt(prompt_of("Q"));
	const test::FunctionLm lm(byte_info, [&](std::span<const TokenId> ctx)
	{
		const auto s(answer_so_far(ctx, prompt.ids.size()));
		if(s.empty())
			return mix({{'a', 0.6}, {'b', 0.4}});
		if(s == "a")
			return mix({{'"', 0.5}, {'x', 0.5}});
		if(s == "b")
			return mix({{'"', 0.25}, {'y', 0.75}});
		return one_hot('"');
	});

	DecodeConfig cfg;
	cfg.top_p = 1.0;
	cfg.alpha = 0.3;
	const std::map<std::string, double> expected{
		{"a", std::log(0.6) + std::log(0.5)},
		{"ax", std::log(0.6) + std::log(0.5)},
		{"b", std::log(0.4) + std::log(0.25)},
		{"by", std::log(0.4) + std::log(0.75)},
	};
	std::set<std::string> seen;
	for(std::uint64_t s = 0; s < 200; ++s)
	{
		std::mt19937_64 rng(s);
		const auto c(sample_answer(lm, *tok, prompt, cfg, rng));
		REQUIRE(expected.contains(c.text));
		seen.insert(c.text);
		CHECK(c.logprob == doctest::Approx(expected.at(c.text)).epsilon(1e-12));
		CHECK(c.biased_score == doctest::Approx(c.logprob + 0.3 * double(c.token_ids.size())));
	}
	CHECK(seen.size() == 4);
}

TEST_CASE("every sampled token lies in the nucleus")
{
	const auto tok(test::byte_tokenizer());
	const auto prompt(prompt_of("Q"));
	const auto base([](std::span<const TokenId> ctx)
	{
		// Context-dependent skewed distribution over a-h and the quote.
		std::vector<double> d(256, 0.0);
		double s(0);
		for(int k = 0; k < 9; ++k)
			s += d[k < 8 ? 'a' + k : '"'] = 1.0 / double(1 + (k * 7 + ctx.size()) % 9);
		for(auto &x : d)
			x /= s;
		return d;
	});
	const test::FunctionLm lm(byte_info, base);

	DecodeConfig cfg;
	cfg.top_p = 0.7;
	std::vector<TokenId> ctx(prompt.ids);
	for(std::uint64_t s = 0; s < 100; ++s)
	{
		std::mt19937_64 rng(s);
		ctx = prompt.ids;
		sample_answer(lm, *tok, prompt, cfg, rng, [&](std::span<const double> filtered, TokenId chosen)
		{
			const auto orig(base(ctx));
			CHECK(filtered[chosen] > 0);

			// Mass of tokens strictly more probable than the chosen one is
			// below top_p, otherwise the chosen token was outside the nucleus.
			double above(0);
			for(std::size_t i = 0; i < orig.size(); ++i)
				if(orig[i] > orig[chosen] || (orig[i] == orig[chosen] && i < chosen))
					above += orig[i];
			CHECK(above < cfg.top_p);
			ctx.push_back(chosen);
		});
	}
}

TEST_CASE("generate_candidates with a deterministic model")
{
	const auto tok(test::byte_tokenizer());
	const auto prompt(prompt_of("Q"));
	const auto lm(answers_lm({{"Paris", 1.0}}, prompt.ids.size()));

	DecodeConfig cfg;
	cfg.n_candidates = 5;
	const auto c(generate_candidates(lm, *tok, prompt, cfg));
	REQUIRE(c.size() == 1);
	CHECK(c[0].text == "Paris");
}

TEST_CASE("length bias reorders candidates")
{
	const auto tok(test::byte_tokenizer());
	const auto prompt(prompt_of("Q"));
	// "abcd" + quote is 5 tokens, "x" + quote is 2.
	const auto lm(answers_lm({{"abcd", 0.3}, {"x", 0.7}}, prompt.ids.size()));

	DecodeConfig cfg;
	cfg.top_p = 1.0;
	cfg.n_candidates = 2;

	const auto plain(generate_candidates(lm, *tok, prompt, cfg));
	REQUIRE(plain.size() == 2);
	CHECK(plain[0].text == "x");
	CHECK(plain[0].logprob == doctest::Approx(std::log(0.7)));
	CHECK(plain[1].logprob == doctest::Approx(std::log(0.3)));

	cfg.alpha = 0.7;
	const auto biased(generate_candidates(lm, *tok, prompt, cfg));
	REQUIRE(biased.size() == 2);
	CHECK(biased[0].text == "abcd");
	CHECK(biased[0].biased_score == doctest::Approx(std::log(0.3) + 0.7 * 5));
	CHECK(biased[1].biased_score == doctest::Approx(std::log(0.7) + 0.7 * 2));
}

TEST_CASE("generate_candidates draws at most five times n")
{
	const auto tok(test::byte_tokenizer());
	const auto prompt(prompt_of("Q"));

	std::atomic<int> calls(0);
	const test::FunctionLm empty(byte_info, [&](auto) { ++calls; return one_hot('"'); });
	DecodeConfig cfg;
	cfg.n_candidates = 3;
	CHECK_THROWS_AS(generate_candidates(empty, *tok, prompt, cfg), Error);
	CHECK(calls == 15);

	calls = 0;
	const test::FunctionLm single(byte_info, [&](std::span<const TokenId> ctx)
	{
		++calls;
		return ctx.size() == prompt.ids.size() ? one_hot('k') : one_hot('"');
	});
	cfg.n_candidates = 4;
	const auto c(generate_candidates(single, *tok, prompt, cfg));
	CHECK(c.size() == 1);
	CHECK(calls == 40);
}

TEST_CASE("candidates are distinct, ordered, and reproducible")
{
	const auto tok(test::byte_tokenizer());
	const auto prompt(prompt_of("Q"));
	const test::FunctionLm lm(byte_info, [&](std::span<const TokenId> ctx)
	{
		const auto s(answer_so_far(ctx, prompt.ids.size()));
		if(s.size() >= 3)
			return one_hot('"');
		return mix({{'a', 0.3}, {'B', 0.2}, {'c', 0.2}, {' ', 0.1}, {'"', 0.2}});
	});

	DecodeConfig cfg;
	cfg.n_candidates = 12;
	cfg.rng_seed = 99;
	cfg.alpha = 0.2;
	const auto a(generate_candidates(lm, *tok, prompt, cfg));
	const auto b(generate_candidates(lm, *tok, prompt, cfg));
	REQUIRE(a.size() == b.size());
	CHECK(a.size() <= 12);
	std::set<std::string> keys;
	for(std::size_t i = 0; i < a.size(); ++i)
	{
		CHECK(a[i].text == b[i].text);
		CHECK(a[i].logprob == b[i].logprob);
		CHECK_FALSE(normalize_text(a[i].text).empty());
		keys.insert(normalize_text(a[i].text));
		if(i)
			CHECK(a[i - 1].biased_score >= a[i].biased_score);
	}
	CHECK(keys.size() == a.size());

	cfg.rng_seed = 100;
	const auto other(generate_candidates(lm, *tok, prompt, cfg));
	std::vector<std::string> ta, to;
	for(const auto &c : a)
		ta.push_back(c.text);
	for(const auto &c : other)
		to.push_back(c.text);
	CHECK(ta != to);
}

TEST_CASE("truncated distributions")
{
	const auto tok(test::byte_tokenizer());
	const auto prompt(prompt_of("Q"));

	DecodeConfig cfg;
	cfg.top_p = 0.9;
	const TruncatedLm covering(mix({{'"', 0.92}, {'z', 0.03}}));
	std::mt19937_64 rng(3);
	const auto c(sample_answer(covering, *tok, prompt, cfg, rng));
	CHECK(c.text.empty());
	CHECK(c.logprob == doctest::Approx(0.0));

	const TruncatedLm thin(mix({{'"', 0.5}, {'z', 0.2}}));
	CHECK_THROWS_AS(sample_answer(thin, *tok, prompt, cfg, rng), Error);
}

TEST_CASE("decode config validation")
{
	DecodeConfig bad;
	bad.top_p = 0;
	CHECK_THROWS_AS(bad.validate(), Error);
	bad = {};
	bad.n_candidates = 0;
	CHECK_THROWS_AS(bad.validate(), Error);
	bad = {};
	bad.alpha = -1;
	CHECK_THROWS_AS(bad.validate(), Error);
	bad = {};
	bad.max_answer_tokens = 0;
	CHECK_THROWS_AS(bad.validate(), Error);
	CHECK_NOTHROW(DecodeConfig{}.validate());
}
