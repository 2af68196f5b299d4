#include "hintpipe/lm.hpp"
#include "hintpipe/tokenizer.hpp"

#include "http_util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdlib>
#include <cstring>
#include <map>
#include <numeric>

namespace hintpipe {

namespace {

double
sum_of(const std::vector<double> &v)
{
	return std::accumulate(v.begin(), v.end(), 0.0);
}

void
require_normalized(const std::vector<double> &v, std::string_view what)
{
	const double s(sum_of(v));
	if(std::abs(s - 1.0) > 1e-9)
		throw Error("mock LM script: " + std::string(what) + " sums to " + std::to_string(s) + ", expected 1");
}

std::vector<double>
parse_probs(const nlohmann::json &j, const Tokenizer &tokenizer, std::string_view what)
{
	const auto vocab(tokenizer.vocab_size());
	std::vector<double> probs(vocab, 0.0);

	if(j.contains("uniform"))
	{
		std::vector<std::string> excluded;
		if(j.contains("exclude_text"))
			excluded = j.at("exclude_text").get<std::vector<std::string>>();

		std::vector<TokenId> allowed;
		for(TokenId id = 0; id < vocab; ++id)
		{
			std::string text;
			try
			{
				text = tokenizer.detokenize(std::span<const TokenId>(&id, 1));
			}
			catch(const Error &)
			{
				continue;
			}

			const bool skip(std::any_of(excluded.begin(), excluded.end(), [&](const auto &x)
			{
				return text.find(x) != std::string::npos;
			}));
			if(!skip)
				allowed.push_back(id);
		}

		if(allowed.empty())
			throw Error("mock LM script: " + std::string(what) + " excludes every token");

		for(const auto id : allowed)
			probs[id] = 1.0 / double(allowed.size());

		return probs;
	}

	if(j.contains("probs"))
	{
		for(const auto &[key, p] : j.at("probs").items())
		{
			const auto id(std::stoul(key));
			if(id >= vocab)
				throw Error("mock LM script: token id " + key + " outside vocab");

			probs[id] += p.get<double>();
		}
	}

	if(j.contains("text_probs"))
	{
		for(const auto &[text, p] : j.at("text_probs").items())
		{
			const auto ids(tokenizer.tokenize(text));
			if(ids.size() != 1)
				throw Error("mock LM script: text_probs key '" + text + "' is not a single token");

			probs[ids.front()] += p.get<double>();
		}
	}

	require_normalized(probs, what);
	return probs;
}

std::string
request_id()
{
	static std::atomic<std::uint64_t> next{1};
	return std::to_string(next.fetch_add(1));
}

void
put_u32(std::string &out, std::uint32_t v)
{
	for(int i = 0; i < 4; ++i)
		out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t
get_u32(const char *p)
{
	const auto *u(reinterpret_cast<const unsigned char *>(p));
	return std::uint32_t(u[0]) | std::uint32_t(u[1]) << 8 | std::uint32_t(u[2]) << 16 | std::uint32_t(u[3]) << 24;
}

nlohmann::json
parse_json_body(const httplib::Response &res, std::string_view what)
{
	try
	{
		return nlohmann::json::parse(res.body);
	}
	catch(const nlohmann::json::exception &e)
	{
		throw Error(std::string(what) + ": malformed JSON response: " + e.what());
	}
}

} // namespace

double
TokenDistribution::mass() const
{
	return sum_of(probs);
}

TokenDistribution
LanguageModel::next_token_distribution(std::span<const TokenId> context) const
{
	const auto inf(info());
	if(context.size() >= inf.context_window)
		throw Error("LM context overflow: " + std::to_string(context.size()) + " tokens, window "
		            + std::to_string(inf.context_window));

	auto d(distribution(context));
	if(d.probs.size() != inf.vocab_size)
		throw Error("LM returned " + std::to_string(d.probs.size()) + " probabilities for vocab "
		            + std::to_string(inf.vocab_size));

	for(const double p : d.probs)
		if(!std::isfinite(p) || p < 0)
			throw Error("LM returned an invalid probability");

	const double s(d.mass());
	if(!d.truncated && std::abs(s - 1.0) > distribution_tolerance)
		throw Error("LM distribution sums to " + std::to_string(s));
	if(d.truncated && s > 1.0 + distribution_tolerance)
		throw Error("truncated LM distribution exceeds unit mass: " + std::to_string(s));
	if(!(s > 0))
		throw Error("LM distribution is empty");

	if(!d.truncated || s > 1.0)
		for(auto &p : d.probs)
			p /= s;

	return d;
}

//
// Mock backend
//

void
MockLmScript::add_continuations(const Tokenizer &tokenizer,
                                const std::string &anchor,
                                const std::vector<std::pair<std::string, double>> &answers)
{
	std::map<std::string, std::map<TokenId, double>> nodes;
	for(const auto &[answer, weight] : answers)
	{
		if(!(weight > 0))
			throw Error("mock LM script: continuation weights must be positive");

		const auto ids(tokenizer.tokenize(answer));
		std::string prefix(anchor);
		for(const auto id : ids)
		{
			nodes[prefix][id] += weight;
			prefix += tokenizer.detokenize(std::span<const TokenId>(&id, 1));
		}
	}

	for(const auto &[suffix, children] : nodes)
	{
		if(std::any_of(rules.begin(), rules.end(), [&](const Rule &r) { return r.suffix == suffix; }))
			throw Error("mock LM script: duplicate rule for suffix '" + suffix + "'");

		double total(0);
		for(const auto &[id, w] : children)
			total += w;

		Rule rule{suffix, std::vector<double>(tokenizer.vocab_size(), 0.0)};
		for(const auto &[id, w] : children)
			rule.probs[id] = w / total;

		rules.push_back(std::move(rule));
	}
}

MockLmScript
MockLmScript::parse(std::string_view json, const Tokenizer &tokenizer)
{
	MockLmScript script;
	try
	{
		const auto j(nlohmann::json::parse(json));
		script.context_window = j.value("context_window", script.context_window);
		script.embedding_dim = j.value("embedding_dim", script.embedding_dim);
		if(script.context_window == 0 || script.embedding_dim == 0)
			throw Error("mock LM script: context_window and embedding_dim must be positive");

		script.default_probs = parse_probs(j.value("default", nlohmann::json{{"uniform", true}}), tokenizer, "default");

		for(const auto &r : j.value("rules", nlohmann::json::array()))
			script.rules.push_back(Rule{r.at("suffix").get<std::string>(), parse_probs(r, tokenizer, "rule")});

		for(const auto &c : j.value("continuations", nlohmann::json::array()))
		{
			std::vector<std::pair<std::string, double>> answers;
			for(const auto &[text, w] : c.at("answers").items())
				answers.emplace_back(text, w.get<double>());

			script.add_continuations(tokenizer, c.at("after").get<std::string>(), answers);
		}
	}
	catch(const nlohmann::json::exception &e)
	{
		throw Error(std::string("malformed mock LM script: ") + e.what());
	}
	return script;
}

MockLmScript
MockLmScript::load(const std::filesystem::path &path, const Tokenizer &tokenizer)
{
	return parse(read_file(path), tokenizer);
}

MockLanguageModel::MockLanguageModel(std::shared_ptr<const Tokenizer> tokenizer, MockLmScript script)
:tokenizer_{std::move(tokenizer)}
,script_{std::move(script)}
{
	const auto vocab(tokenizer_->vocab_size());
	if(script_.default_probs.size() != vocab)
		throw Error("mock LM: default distribution size does not match the vocab");

	require_normalized(script_.default_probs, "default");
	for(const auto &r : script_.rules)
	{
		if(r.probs.size() != vocab)
			throw Error("mock LM: rule distribution size does not match the vocab");

		require_normalized(r.probs, "rule '" + r.suffix + "'");
		longest_suffix_ = std::max(longest_suffix_, r.suffix.size());
	}
}

LmInfo
MockLanguageModel::info() const
{
	return LmInfo
	{
		script_.context_window,
		static_cast<std::uint32_t>(tokenizer_->vocab_size()),
		script_.embedding_dim,
		"mock",
	};
}

TokenDistribution
MockLanguageModel::distribution(std::span<const TokenId> context) const
{
	// Only the trailing bytes that the longest rule can see matter.
	std::size_t first(context.size()), bytes(0);
	while(first > 0 && bytes < longest_suffix_)
	{
		--first;
		bytes += tokenizer_->detokenize(context.subspan(first, 1)).size();
	}

	const auto tail(tokenizer_->detokenize(context.subspan(first)));
	const MockLmScript::Rule *best(nullptr);
	for(const auto &r : script_.rules)
		if(std::string_view(tail).ends_with(r.suffix) && (!best || r.suffix.size() > best->suffix.size()))
			best = &r;

	return TokenDistribution{best ? best->probs : script_.default_probs, false};
}

//
// HTTP backend
//

std::string
encode_next_token_body(std::span<const float> logprobs)
{
	const nlohmann::json header
	{
		{"vocab_size", logprobs.size()},
		{"count", logprobs.size()},
		{"truncated", false},
	};

	std::string out(header.dump());
	out.push_back('\n');
	for(const float f : logprobs)
		put_u32(out, std::bit_cast<std::uint32_t>(f));

	return out;
}

std::string
encode_next_token_body(std::span<const TokenId> ids, std::span<const float> logprobs, std::uint32_t vocab_size)
{
	if(ids.size() != logprobs.size())
		throw Error("encode_next_token_body: ids and logprobs differ in length");

	const nlohmann::json header
	{
		{"vocab_size", vocab_size},
		{"count", ids.size()},
		{"truncated", true},
	};

	std::string out(header.dump());
	out.push_back('\n');
	for(const auto id : ids)
		put_u32(out, id);
	for(const float f : logprobs)
		put_u32(out, std::bit_cast<std::uint32_t>(f));

	return out;
}

TokenDistribution
decode_next_token_body(std::string_view body, std::uint32_t vocab_size)
{
	const auto nl(body.find('\n'));
	if(nl == std::string_view::npos)
		throw Error("next_token_probs: missing header line");

	nlohmann::json header;
	try
	{
		header = nlohmann::json::parse(body.substr(0, nl));
	}
	catch(const nlohmann::json::exception &e)
	{
		throw Error(std::string("next_token_probs: malformed header: ") + e.what());
	}

	const auto v(header.value("vocab_size", 0U));
	const auto count(header.value("count", 0U));
	const bool truncated(header.value("truncated", false));
	if(v != vocab_size)
		throw Error("next_token_probs: vocab size " + std::to_string(v) + ", expected " + std::to_string(vocab_size));

	const auto payload(body.substr(nl + 1));
	const std::size_t expect(truncated ? 8ULL * count : 4ULL * vocab_size);
	if((!truncated && count != vocab_size) || payload.size() != expect || count > vocab_size)
		throw Error("next_token_probs: payload of " + std::to_string(payload.size()) + " bytes does not match header");

	TokenDistribution d{std::vector<double>(vocab_size, 0.0), truncated};
	const char *lp(payload.data() + (truncated ? 4ULL * count : 0));
	for(std::size_t i = 0; i < count; ++i)
	{
		const auto id(truncated ? get_u32(payload.data() + 4 * i) : static_cast<std::uint32_t>(i));
		if(id >= vocab_size)
			throw Error("next_token_probs: token id out of range");
		if(truncated && d.probs[id] != 0)
			throw Error("next_token_probs: duplicate token id");

		const float logp(std::bit_cast<float>(get_u32(lp + 4 * i)));
		if(std::isnan(logp) || logp > 1e-4f)
			throw Error("next_token_probs: invalid log-probability");

		d.probs[id] = std::exp(double(logp));
	}

	// float32 log-probabilities are renormalizable within 1e-4
	const double s(d.mass());
	if((!truncated && std::abs(s - 1.0) > 1e-4) || (truncated && s > 1.0 + 1e-4))
		throw Error("next_token_probs: probabilities sum to " + std::to_string(s));

	if(!truncated || s > 1.0)
		for(auto &p : d.probs)
			p /= s;

	return d;
}

struct HttpLanguageModel::Gate : detail::InFlightGate
{
	using detail::InFlightGate::InFlightGate;
};

HttpLanguageModel::HttpLanguageModel(std::string endpoint, HttpLmOptions options)
:endpoint_{std::move(endpoint)}
,options_{options}
,info_{fetch_model_info(endpoint_, options_)}
,gate_{std::make_unique<Gate>(options_.max_in_flight)}
{
}

HttpLanguageModel::~HttpLanguageModel() = default;

TokenDistribution
HttpLanguageModel::distribution(std::span<const TokenId> context) const
{
	const auto ep(detail::parse_endpoint(endpoint_));
	const nlohmann::json req
	{
		{"ids", std::vector<TokenId>(context.begin(), context.end())},
		{"top_k", options_.top_k},
	};
	const auto payload(req.dump());

	return detail::with_retries("next_token_probs", options_.retries, options_.backoff, [&]
	{
		const auto permit(gate_->acquire());
		const auto rid(request_id());
		auto cli(detail::make_client(ep, options_.timeout));
		const httplib::Headers headers{{"X-Request-Id", rid}};
		const auto res(detail::check_response(cli->Post(ep.prefix + "/v1/next_token_probs", headers, payload, "application/json"),
		                                       "next_token_probs"));

		if(res.has_header("X-Request-Id") && res.get_header_value("X-Request-Id") != rid)
			throw Error("next_token_probs: response for another request");

		return decode_next_token_body(res.body, info_.vocab_size);
	});
}

LmInfo
fetch_model_info(const std::string &endpoint, const RemoteOptions &options)
{
	const auto ep(detail::parse_endpoint(endpoint));
	return detail::with_retries("model_info", options.retries, options.backoff, [&]
	{
		auto cli(detail::make_client(ep, options.timeout));
		const auto j(parse_json_body(detail::check_response(cli->Get(ep.prefix + "/v1/model_info"), "model_info"), "model_info"));
		LmInfo info;
		try
		{
			info.context_window = j.at("context_window").get<std::uint32_t>();
			info.vocab_size = j.at("vocab_size").get<std::uint32_t>();
			info.embedding_dim = j.at("embedding_dim").get<std::uint32_t>();
			info.model_id = j.value("model_id", "");
		}
		catch(const nlohmann::json::exception &e)
		{
			throw Error(std::string("model_info: ") + e.what());
		}

		if(!info.context_window || !info.vocab_size || !info.embedding_dim)
			throw Error("model_info: dimensions must be positive");

		return info;
	});
}

std::vector<TokenId>
remote_tokenize(const std::string &endpoint, const std::string &text, const RemoteOptions &options)
{
	const auto ep(detail::parse_endpoint(endpoint));
	const auto payload(nlohmann::json{{"text", text}}.dump());
	return detail::with_retries("tokenize", options.retries, options.backoff, [&]
	{
		auto cli(detail::make_client(ep, options.timeout));
		const auto j(parse_json_body(detail::check_response(cli->Post(ep.prefix + "/v1/tokenize", payload, "application/json"), "tokenize"), "tokenize"));
		return j.at("ids").get<std::vector<TokenId>>();
	});
}

std::string
remote_detokenize(const std::string &endpoint, std::span<const TokenId> ids, const RemoteOptions &options)
{
	const auto ep(detail::parse_endpoint(endpoint));
	const auto payload(nlohmann::json{{"ids", std::vector<TokenId>(ids.begin(), ids.end())}}.dump());
	return detail::with_retries("detokenize", options.retries, options.backoff, [&]
	{
		auto cli(detail::make_client(ep, options.timeout));
		const auto j(parse_json_body(detail::check_response(cli->Post(ep.prefix + "/v1/detokenize", payload, "application/json"), "detokenize"), "detokenize"));
		return j.at("text").get<std::string>();
	});
}

IndexMatrix
fetch_embedding_table(const std::string &endpoint, const std::filesystem::path &out, const RemoteOptions &options)
{
	const auto info(fetch_model_info(endpoint, options));
	const auto ep(detail::parse_endpoint(endpoint));
	const auto body(detail::with_retries("embedding_table", options.retries, options.backoff, [&]
	{
		auto cli(detail::make_client(ep, options.timeout));
		return detail::check_response(cli->Get(ep.prefix + "/v1/embedding_table"), "embedding_table").body;
	}));

	auto table(parse_emb1(body));
	if(table.rows() == 0 || table.dim() == 0)
		throw Error("embedding_table: empty table");
	if(table.rows() != info.vocab_size || table.dim() != info.embedding_dim)
		throw Error("embedding_table: " + std::to_string(table.rows()) + "x" + std::to_string(table.dim())
		            + " does not match model_info " + std::to_string(info.vocab_size) + "x" + std::to_string(info.embedding_dim));

	atomic_write(out, [&](std::ostream &o)
	{
		o.write(body.data(), static_cast<std::streamsize>(body.size()));
	}, true);
	return table;
}

std::unique_ptr<LanguageModel>
open_language_model(const std::string &spec, std::shared_ptr<const Tokenizer> tokenizer, const HttpLmOptions &options)
{
	std::string s(spec);
	if(s.empty())
		if(const char *env(std::getenv("HINTPIPE_LM_URL")); env)
			s = env;

	if(s.empty())
		throw Error("no language model configured (--lm or HINTPIPE_LM_URL)");

	if(s.starts_with("mock:"))
	{
		auto script(MockLmScript::load(s.substr(5), *tokenizer));
		return std::make_unique<MockLanguageModel>(std::move(tokenizer), std::move(script));
	}

	auto lm(std::make_unique<HttpLanguageModel>(s, options));
	if(lm->info().vocab_size != tokenizer->vocab_size())
		throw Error("LM vocab size " + std::to_string(lm->info().vocab_size) + " does not match the tokenizer's "
		            + std::to_string(tokenizer->vocab_size()));

	return lm;
}

} // namespace hintpipe
