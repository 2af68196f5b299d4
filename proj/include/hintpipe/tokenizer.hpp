#pragma once

#include "hintpipe/common.hpp"

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hintpipe {

/// Byte-level BPE tokenizer reading GPT-2's `vocab.json` / `merges.txt`.
///
/// Text is split with GPT-2's pre-tokenization pattern (contractions, letter
/// runs, digit runs, punctuation runs, whitespace), each piece is mapped to
/// the printable byte alphabet, and merges are applied in rank order. The
/// round trip detokenize(tokenize(t)) == t holds for any byte string.
///
/// Move-only; share through std::shared_ptr<const Tokenizer>. Safe for
/// concurrent use.
class Tokenizer
{
  public:
	static Tokenizer from_files(const std::filesystem::path &vocab_json,
	                            const std::filesystem::path &merges_txt);

	static Tokenizer from_strings(std::string_view vocab_json, std::string_view merges_txt);

	/// 256 single-byte tokens, id == byte value, no merges.
	static Tokenizer byte_level();

	std::vector<TokenId> tokenize(std::string_view text) const;
	std::string detokenize(std::span<const TokenId> ids) const;
	std::size_t count(std::string_view text) const;

	std::size_t vocab_size() const noexcept { return id_to_token_.size(); }
	std::optional<TokenId> token_id(std::string_view token) const;

	Tokenizer(Tokenizer &&) noexcept;
	Tokenizer &operator=(Tokenizer &&) noexcept;
	~Tokenizer();

  private:
	struct Cache;

	Tokenizer();
	void encode_piece(std::string_view piece, std::vector<TokenId> &out) const;

	std::unordered_map<std::string, TokenId> token_to_id_;
	std::vector<std::string> id_to_token_;
	std::unordered_map<std::string, std::size_t> merge_rank_;
	std::unique_ptr<Cache> cache_;
};

/// Splits text into the pieces GPT-2's pre-tokenizer regex would produce.
std::vector<std::string_view> pretokenize(std::string_view text);

} // namespace hintpipe
