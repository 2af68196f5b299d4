#include "hintpipe/decoder.hpp"
#include "hintpipe/filters.hpp"
#include "hintpipe/lm.hpp"
#include "hintpipe/prompt.hpp"
#include "hintpipe/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace hintpipe {

namespace {

constexpr double input_tolerance{1e-6};

std::uint64_t
splitmix64(std::uint64_t z) noexcept
{
	z += 0x9E3779B97F4A7C15ULL;
	z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
	z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
	return z ^ (z >> 31);
}

double
uniform01(std::mt19937_64 &rng)
{
	return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::vector<double>
restrict_to_nucleus(std::span<const double> dist, double top_p)
{
	std::vector<TokenId> order;
	order.reserve(dist.size());
	for(std::size_t i = 0; i < dist.size(); ++i)
		if(dist[i] > 0)
			order.push_back(static_cast<TokenId>(i));

	std::sort(order.begin(), order.end(), [&](TokenId a, TokenId b)
	{
		if(dist[a] != dist[b])
			return dist[a] > dist[b];

		return a < b;
	});

	std::vector<double> out(dist.size(), 0.0);
	double kept(0);
	for(const auto id : order)
	{
		out[id] = dist[id];
		kept += dist[id];
		if(kept >= top_p - 1e-12)
			break;
	}

	for(auto &p : out)
		p /= kept;

	return out;
}

std::vector<double>
apply_temperature(std::span<const double> dist, double temperature)
{
	std::vector<double> out(dist.begin(), dist.end());
	if(temperature == 1.0)
		return out;

	double s(0);
	for(auto &p : out)
		s += (p = p > 0 ? std::pow(p, 1.0 / temperature) : 0.0);

	for(auto &p : out)
		p /= s;

	return out;
}

TokenId
sample_from(std::span<const double> probs, std::mt19937_64 &rng)
{
	const double total(std::accumulate(probs.begin(), probs.end(), 0.0));
	const double u(uniform01(rng) * total);
	double cum(0);
	std::optional<TokenId> last;
	for(std::size_t i = 0; i < probs.size(); ++i)
	{
		if(probs[i] <= 0)
			continue;

		last = static_cast<TokenId>(i);
		cum += probs[i];
		if(u < cum)
			return *last;
	}

	if(!last)
		throw Error("sampling from an empty distribution");

	return *last;
}

} // namespace

std::string_view
to_string(Termination t) noexcept
{
	return t == Termination::quote ? "quote" : "length-limit";
}

void
DecodeConfig::validate() const
{
	if(!(top_p > 0 && top_p <= 1))
		throw Error("decode config: top_p must be in (0, 1]");
	if(!(temperature > 0))
		throw Error("decode config: temperature must be positive");
	if(n_candidates < 1)
		throw Error("decode config: n_candidates must be at least 1");
	if(max_answer_tokens < 1)
		throw Error("decode config: max_answer_tokens must be at least 1");
	if(!(alpha >= 0) || !std::isfinite(alpha))
		throw Error("decode config: alpha must be non-negative");
}

std::vector<double>
nucleus_filter(std::span<const double> dist, double top_p)
{
	if(!(top_p > 0 && top_p <= 1))
		throw Error("nucleus_filter: top_p must be in (0, 1]");

	const double s(std::accumulate(dist.begin(), dist.end(), 0.0));
	if(std::abs(s - 1.0) > input_tolerance)
		throw Error("nucleus_filter: distribution sums to " + std::to_string(s));
	if(std::any_of(dist.begin(), dist.end(), [](double p) { return !(p >= 0); }))
		throw Error("nucleus_filter: negative or NaN probability");

	if(top_p >= 1.0)
		return {dist.begin(), dist.end()};

	return restrict_to_nucleus(dist, top_p);
}

std::vector<double>
nucleus_filter(const TokenDistribution &dist, double top_p)
{
	if(!dist.truncated)
		return nucleus_filter(dist.probs, top_p);

	const double mass(dist.mass());
	if(mass < top_p)
		throw Error("nucleus_filter: truncated distribution covers " + std::to_string(mass)
		            + " of the mass, below top_p " + std::to_string(top_p) + "; raise top_k");

	return restrict_to_nucleus(dist.probs, top_p);
}

std::uint64_t
draw_seed(std::uint64_t question_seed, std::uint64_t draw) noexcept
{
	return splitmix64(question_seed ^ splitmix64(draw));
}

Candidate
sample_answer(const LanguageModel &lm,
              const Tokenizer &tokenizer,
              const PromptSpec &prompt,
              const DecodeConfig &cfg,
              std::mt19937_64 &rng,
              const StepObserver &observer)
{
	cfg.validate();

	std::vector<TokenId> context(prompt.ids);
	Candidate c;
	for(std::uint32_t step = 0; step < cfg.max_answer_tokens; ++step)
	{
		auto dist(lm.next_token_distribution(context));
		if(cfg.temperature != 1.0)
			dist.probs = apply_temperature(dist.probs, cfg.temperature);

		const auto filtered(nucleus_filter(dist, cfg.top_p));
		const auto tok(sample_from(filtered, rng));
		if(observer)
			observer(filtered, tok);

		c.logprob += std::log(filtered[tok]);
		c.token_ids.push_back(tok);
		context.push_back(tok);

		c.text = tokenizer.detokenize(c.token_ids);
		if(const auto q(c.text.find('"')); q != std::string::npos)
		{
			c.text.resize(q);
			c.terminated = Termination::quote;
			break;
		}
	}

	c.biased_score = c.logprob + cfg.alpha * double(c.token_ids.size());
	return c;
}

void
sort_candidates(std::vector<Candidate> &candidates)
{
	std::sort(candidates.begin(), candidates.end(), [](const Candidate &a, const Candidate &b)
	{
		if(a.biased_score != b.biased_score)
			return a.biased_score > b.biased_score;
		if(a.token_ids.size() != b.token_ids.size())
			return a.token_ids.size() < b.token_ids.size();

		return a.text < b.text;
	});
}

std::vector<Candidate>
generate_candidates(const LanguageModel &lm,
                    const Tokenizer &tokenizer,
                    const PromptSpec &prompt,
                    const DecodeConfig &cfg)
{
	cfg.validate();

	std::map<std::string, Candidate> distinct;
	const std::size_t max_draws(5 * cfg.n_candidates);
	for(std::size_t draw = 0; draw < max_draws && distinct.size() < cfg.n_candidates; ++draw)
	{
		std::mt19937_64 rng(draw_seed(cfg.rng_seed, draw));
		auto c(sample_answer(lm, tokenizer, prompt, cfg, rng));
		auto key(normalize_text(c.text));
		if(key.empty())
			continue;

		const auto it(distinct.find(key));
		if(it == distinct.end())
			distinct.emplace(std::move(key), std::move(c));
		else if(c.biased_score > it->second.biased_score)
			it->second = std::move(c);
	}

	if(distinct.empty())
		throw Error("generate_candidates: no non-empty answer in " + std::to_string(max_draws) + " draws");

	std::vector<Candidate> out;
	out.reserve(distinct.size());
	for(auto &[key, c] : distinct)
		out.push_back(std::move(c));

	sort_candidates(out);
	return out;
}

} // namespace hintpipe
