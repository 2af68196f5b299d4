#include "hintpipe/tokenizer.hpp"

#include <nlohmann/json.hpp>
#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <array>
#include <limits>
#include <mutex>
#include <shared_mutex>

namespace hintpipe {

namespace {

enum class char_class { space, letter, number, other };

struct byte_alphabet
{
	std::array<std::string, 256> encode;
	std::array<int, 512> decode;

	byte_alphabet()
	{
		std::array<bool, 256> printable{};
		for(int b = '!'; b <= '~'; ++b)
			printable[b] = true;
		for(int b = 0xA1; b <= 0xAC; ++b)
			printable[b] = true;
		for(int b = 0xAE; b <= 0xFF; ++b)
			printable[b] = true;

		decode.fill(-1);
		int extra(0);
		for(int b = 0; b < 256; ++b)
		{
			const UChar32 cp(printable[b] ? b : 256 + extra++);
			char buf[4];
			int32_t len(0);
			UBool err(false);
			U8_APPEND(buf, len, 4, cp, err);
			encode[b].assign(buf, len);
			decode[cp] = b;
		}
	}
};

const byte_alphabet &
alphabet()
{
	static const byte_alphabet instance;
	return instance;
}

struct codepoint
{
	UChar32 value;
	std::size_t next;
};

codepoint
decode_at(std::string_view s, std::size_t i)
{
	int32_t pos(static_cast<int32_t>(i));
	UChar32 c;
	U8_NEXT(s.data(), pos, static_cast<int32_t>(s.size()), c);
	return {c, static_cast<std::size_t>(pos)};
}

char_class
classify(UChar32 c)
{
	if(c < 0)
		return char_class::other;
	if(u_isUWhiteSpace(c))
		return char_class::space;

	const auto mask(U_GET_GC_MASK(c));
	if(mask & U_GC_L_MASK)
		return char_class::letter;
	if(mask & U_GC_N_MASK)
		return char_class::number;

	return char_class::other;
}

std::size_t
run_end(std::string_view s, std::size_t i, char_class cls)
{
	while(i < s.size())
	{
		const auto cp(decode_at(s, i));
		if(classify(cp.value) != cls)
			break;

		i = cp.next;
	}
	return i;
}

std::size_t
contraction_end(std::string_view s, std::size_t i)
{
	static constexpr std::array<std::string_view, 7> suffixes
	{
		"s", "t", "re", "ve", "m", "ll", "d"
	};

	const auto rest(s.substr(i + 1));
	for(const auto suffix : suffixes)
		if(rest.starts_with(suffix))
			return i + 1 + suffix.size();

	return 0;
}

} // namespace

std::vector<std::string_view>
pretokenize(std::string_view s)
{
	std::vector<std::string_view> out;
	std::size_t i(0);
	while(i < s.size())
	{
		if(s[i] == '\'')
			if(const auto end(contraction_end(s, i)); end)
			{
				out.push_back(s.substr(i, end - i));
				i = end;
				continue;
			}

		if(s[i] == ' ' && i + 1 < s.size())
		{
			const auto cls(classify(decode_at(s, i + 1).value));
			if(cls != char_class::space)
			{
				const auto end(run_end(s, i + 1, cls));
				out.push_back(s.substr(i, end - i));
				i = end;
				continue;
			}
		}

		const auto first(decode_at(s, i));
		const auto cls(classify(first.value));
		if(cls != char_class::space)
		{
			const auto end(run_end(s, i, cls));
			out.push_back(s.substr(i, end - i));
			i = end;
			continue;
		}

		// Whitespace: a run at end of text is one piece; a run followed by
		// text leaves its last character to lead the next piece.
		std::size_t last_start(i), end(i);
		while(end < s.size())
		{
			const auto cp(decode_at(s, end));
			if(classify(cp.value) != char_class::space)
				break;

			last_start = end;
			end = cp.next;
		}

		if(end < s.size() && last_start > i)
			end = last_start;

		out.push_back(s.substr(i, end - i));
		i = end;
	}
	return out;
}

struct Tokenizer::Cache
{
	static constexpr std::size_t max_entries{1U << 20};

	std::shared_mutex mutex;
	std::unordered_map<std::string, std::vector<TokenId>> pieces;
};

Tokenizer::Tokenizer()
:cache_{std::make_unique<Cache>()}
{
}

Tokenizer::Tokenizer(Tokenizer &&) noexcept = default;
Tokenizer &Tokenizer::operator=(Tokenizer &&) noexcept = default;
Tokenizer::~Tokenizer() = default;

Tokenizer
Tokenizer::byte_level()
{
	Tokenizer tok;
	const auto &alpha(alphabet());
	tok.id_to_token_.resize(256);
	for(TokenId b = 0; b < 256; ++b)
	{
		tok.id_to_token_[b] = alpha.encode[b];
		tok.token_to_id_.emplace(alpha.encode[b], b);
	}
	return tok;
}

Tokenizer
Tokenizer::from_files(const std::filesystem::path &vocab_json,
                      const std::filesystem::path &merges_txt)
{
	return from_strings(read_file(vocab_json), read_file(merges_txt));
}

Tokenizer
Tokenizer::from_strings(std::string_view vocab_json, std::string_view merges_txt)
{
	Tokenizer tok;

	nlohmann::json vocab;
	try
	{
		vocab = nlohmann::json::parse(vocab_json);
	}
	catch(const nlohmann::json::exception &e)
	{
		throw Error(std::string("malformed vocab: ") + e.what());
	}

	if(!vocab.is_object() || vocab.empty())
		throw Error("malformed vocab: expected a non-empty object of token -> id");

	std::size_t max_id(0);
	for(const auto &[token, id] : vocab.items())
	{
		if(!id.is_number_unsigned() || id.get<std::uint64_t>() > std::numeric_limits<TokenId>::max())
			throw Error("malformed vocab: bad id for token " + token);

		max_id = std::max<std::size_t>(max_id, id.get<TokenId>());
	}

	tok.id_to_token_.resize(max_id + 1);
	std::vector<bool> seen(max_id + 1, false);
	for(const auto &[token, id] : vocab.items())
	{
		const auto tid(id.get<TokenId>());
		if(seen[tid])
			throw Error("malformed vocab: duplicate id " + std::to_string(tid));

		seen[tid] = true;
		tok.id_to_token_[tid] = token;
		tok.token_to_id_.emplace(token, tid);
	}

	for(const auto &sym : alphabet().encode)
		if(!tok.token_to_id_.contains(sym))
			throw Error("malformed vocab: missing byte symbol " + sym);

	std::size_t line_no(0), rank(0);
	std::size_t pos(0);
	while(pos <= merges_txt.size())
	{
		auto eol(merges_txt.find('\n', pos));
		if(eol == std::string_view::npos)
			eol = merges_txt.size();

		auto line(merges_txt.substr(pos, eol - pos));
		if(!line.empty() && line.back() == '\r')
			line.remove_suffix(1);

		pos = eol + 1;
		++line_no;
		if(line.empty() || (line_no == 1 && line.starts_with("#version")))
			continue;

		const auto sp(line.find(' '));
		if(sp == std::string_view::npos || sp == 0 || sp + 1 == line.size()
		   || line.find(' ', sp + 1) != std::string_view::npos)
			throw Error("malformed merges: line " + std::to_string(line_no));

		const std::string left(line.substr(0, sp)), right(line.substr(sp + 1));
		if(!tok.token_to_id_.contains(left) || !tok.token_to_id_.contains(right)
		   || !tok.token_to_id_.contains(left + right))
			throw Error("malformed merges: line " + std::to_string(line_no) + " references tokens outside the vocab");

		tok.merge_rank_.emplace(left + ' ' + right, rank++);
	}

	return tok;
}

std::optional<TokenId>
Tokenizer::token_id(std::string_view token) const
{
	const auto it(token_to_id_.find(std::string(token)));
	if(it == token_to_id_.end())
		return std::nullopt;

	return it->second;
}

void
Tokenizer::encode_piece(std::string_view piece, std::vector<TokenId> &out) const
{
	const std::string key(piece);
	{
		std::shared_lock lock(cache_->mutex);
		if(const auto it(cache_->pieces.find(key)); it != cache_->pieces.end())
		{
			out.insert(out.end(), it->second.begin(), it->second.end());
			return;
		}
	}

	const auto &alpha(alphabet());
	std::vector<std::string> symbols;
	symbols.reserve(piece.size());
	for(const unsigned char c : piece)
		symbols.push_back(alpha.encode[c]);

	std::string pair_key;
	while(symbols.size() > 1)
	{
		std::size_t best_rank(std::numeric_limits<std::size_t>::max()), best(0);
		for(std::size_t i = 0; i + 1 < symbols.size(); ++i)
		{
			pair_key.assign(symbols[i]).append(1, ' ').append(symbols[i + 1]);
			if(const auto it(merge_rank_.find(pair_key)); it != merge_rank_.end() && it->second < best_rank)
			{
				best_rank = it->second;
				best = i;
			}
		}

		if(best_rank == std::numeric_limits<std::size_t>::max())
			break;

		const std::string left(symbols[best]), right(symbols[best + 1]);
		std::vector<std::string> merged;
		merged.reserve(symbols.size());
		for(std::size_t i = 0; i < symbols.size(); )
		{
			if(i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right)
			{
				merged.push_back(left + right);
				i += 2;
			}
			else merged.push_back(std::move(symbols[i++]));
		}
		symbols = std::move(merged);
	}

	std::vector<TokenId> ids;
	ids.reserve(symbols.size());
	for(const auto &sym : symbols)
	{
		const auto it(token_to_id_.find(sym));
		if(it == token_to_id_.end())
			throw Error("tokenizer: symbol missing from vocab: " + sym);

		ids.push_back(it->second);
	}

	out.insert(out.end(), ids.begin(), ids.end());

	std::unique_lock lock(cache_->mutex);
	if(cache_->pieces.size() >= Cache::max_entries)
		cache_->pieces.clear();

	cache_->pieces.emplace(key, std::move(ids));
}

std::vector<TokenId>
Tokenizer::tokenize(std::string_view text) const
{
	std::vector<TokenId> ids;
	for(const auto piece : pretokenize(text))
		encode_piece(piece, ids);

	return ids;
}

std::size_t
Tokenizer::count(std::string_view text) const
{
	return tokenize(text).size();
}

std::string
Tokenizer::detokenize(std::span<const TokenId> ids) const
{
	const auto &alpha(alphabet());
	std::string out;
	for(const auto id : ids)
	{
		if(id >= id_to_token_.size() || id_to_token_[id].empty())
			throw Error("detokenize: unknown token id " + std::to_string(id));

		const std::string_view token(id_to_token_[id]);
		for(std::size_t i = 0; i < token.size(); )
		{
			const auto cp(decode_at(token, i));
			const auto byte(cp.value >= 0 && cp.value < 512 ? alpha.decode[cp.value] : -1);
			if(byte < 0)
				throw Error("detokenize: token outside the byte alphabet: " + std::string(token));

			out.push_back(static_cast<char>(byte));
			i = cp.next;
		}
	}
	return out;
}

} // namespace hintpipe
