#pragma once

#include "hintpipe/embedding.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hintpipe {

class Tokenizer;

struct LmInfo
{
	std::uint32_t context_window{0};
	std::uint32_t vocab_size{0};
	std::uint32_t embedding_dim{0};
	std::string model_id;
};

/// Next-token probabilities indexed by token id. A truncated distribution
/// carries only the top-k tokens (the rest read as zero), so its mass may
/// fall short of one.
struct TokenDistribution
{
	std::vector<double> probs;
	bool truncated{false};

	double mass() const;
};

inline constexpr double distribution_tolerance{1e-5};

/// Language model seen as a next-token distribution source. The public
/// entry point validates every backend's output the same way: context
/// length, vector size, finiteness, and (for full distributions) unit mass,
/// renormalizing away float noise.
class LanguageModel
{
  public:
	virtual ~LanguageModel() = default;

	virtual LmInfo info() const = 0;

	TokenDistribution next_token_distribution(std::span<const TokenId> context) const;

  protected:
	virtual TokenDistribution distribution(std::span<const TokenId> context) const = 0;
};

/// Scripted distributions keyed by the text the context ends with.
///
/// Every rule holds a full probability vector. The longest rule whose
/// suffix ends the detokenized context wins; otherwise the default applies.
struct MockLmScript
{
	struct Rule
	{
		std::string suffix;
		std::vector<double> probs;
	};

	std::vector<Rule> rules;
	std::vector<double> default_probs;
	std::uint32_t context_window{1024};
	std::uint32_t embedding_dim{8};

	/// Compiles weighted answer strings into rules: after `anchor`, the
	/// model walks the token trie of the answers, branching with their
	/// weights.
	void add_continuations(const Tokenizer &tokenizer,
	                       const std::string &anchor,
	                       const std::vector<std::pair<std::string, double>> &answers);

	static MockLmScript parse(std::string_view json, const Tokenizer &tokenizer);
	static MockLmScript load(const std::filesystem::path &path, const Tokenizer &tokenizer);
};

class MockLanguageModel : public LanguageModel
{
  public:
	MockLanguageModel(std::shared_ptr<const Tokenizer> tokenizer, MockLmScript script);

	LmInfo info() const override;

  protected:
	TokenDistribution distribution(std::span<const TokenId> context) const override;

  private:
	std::shared_ptr<const Tokenizer> tokenizer_;
	MockLmScript script_;
	std::size_t longest_suffix_{0};
};

struct HttpLmOptions : RemoteOptions
{
	/// 0 requests the full vocabulary.
	std::uint32_t top_k{0};
};

/// Client for the LM sidecar.
///
///   GET  /v1/model_info        -> {"context_window", "vocab_size", "embedding_dim", "model_id"}
///   POST /v1/tokenize          {"text"} -> {"ids"}
///   POST /v1/detokenize        {"ids"} -> {"text"}
///   POST /v1/next_token_probs  {"ids", "top_k"} -> JSON header line, then
///                              little-endian payload (see README)
///   GET  /v1/embedding_table   -> EMB1 stream
class HttpLanguageModel : public LanguageModel
{
  public:
	explicit HttpLanguageModel(std::string endpoint, HttpLmOptions options = {});
	~HttpLanguageModel() override;

	LmInfo info() const override { return info_; }

  protected:
	TokenDistribution distribution(std::span<const TokenId> context) const override;

  private:
	struct Gate;

	std::string endpoint_;
	HttpLmOptions options_;
	LmInfo info_;
	std::unique_ptr<Gate> gate_;
};

/// Decodes a /v1/next_token_probs body into probabilities.
TokenDistribution decode_next_token_body(std::string_view body, std::uint32_t vocab_size);

/// Encodes a /v1/next_token_probs body (the sidecar side of the contract).
std::string encode_next_token_body(std::span<const float> logprobs);
std::string encode_next_token_body(std::span<const TokenId> ids, std::span<const float> logprobs, std::uint32_t vocab_size);

LmInfo fetch_model_info(const std::string &endpoint, const RemoteOptions &options = {});
std::vector<TokenId> remote_tokenize(const std::string &endpoint, const std::string &text, const RemoteOptions &options = {});
std::string remote_detokenize(const std::string &endpoint, std::span<const TokenId> ids, const RemoteOptions &options = {});

/// Downloads the token-embedding table, checks it against /v1/model_info and
/// writes it to `out` as EMB1.
IndexMatrix fetch_embedding_table(const std::string &endpoint,
                                  const std::filesystem::path &out,
                                  const RemoteOptions &options = {});

/// "mock:<script.json>" or an http(s) URL; empty falls back to $HINTPIPE_LM_URL.
std::unique_ptr<LanguageModel> open_language_model(const std::string &spec,
                                                   std::shared_ptr<const Tokenizer> tokenizer,
                                                   const HttpLmOptions &options = {});

} // namespace hintpipe
