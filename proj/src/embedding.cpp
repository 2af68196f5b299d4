#include "hintpipe/embedding.hpp"
#include "hintpipe/corpus.hpp"
#include "hintpipe/tokenizer.hpp"

#include <Eigen/Dense>

#include "http_util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

namespace hintpipe {

namespace {

constexpr std::string_view emb1_magic{"EMB1"};

double
norm2(std::span<const double> v)
{
	return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

void
put_u32(std::ostream &out, std::uint32_t v)
{
	const char bytes[4]
	{
		static_cast<char>(v & 0xff),
		static_cast<char>((v >> 8) & 0xff),
		static_cast<char>((v >> 16) & 0xff),
		static_cast<char>((v >> 24) & 0xff),
	};
	out.write(bytes, 4);
}

std::uint32_t
get_u32(const char *p)
{
	const auto *u(reinterpret_cast<const unsigned char *>(p));
	return std::uint32_t(u[0]) | std::uint32_t(u[1]) << 8 | std::uint32_t(u[2]) << 16 | std::uint32_t(u[3]) << 24;
}

void
put_floats(std::ostream &out, std::span<const float> values)
{
	if constexpr(std::endian::native == std::endian::little)
		out.write(reinterpret_cast<const char *>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
	else
		for(const float f : values)
			put_u32(out, std::bit_cast<std::uint32_t>(f));
}

std::uint32_t
checked_u32(std::size_t v, std::string_view what)
{
	if(v > std::numeric_limits<std::uint32_t>::max())
		throw Error("EMB1: " + std::string(what) + " exceeds u32");

	return static_cast<std::uint32_t>(v);
}

std::vector<double>
initial_vector(std::size_t dim)
{
	// splitmix64; any fixed start works as long as it is not orthogonal to
	// the dominant direction, which a dense pseudo-random vector avoids.
	std::uint64_t state(0x9E3779B97F4A7C15ULL);
	std::vector<double> v(dim);
	for(auto &x : v)
	{
		std::uint64_t z(state += 0x9E3779B97F4A7C15ULL);
		z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
		z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
		z ^= z >> 31;
		x = static_cast<double>(z >> 11) * 0x1.0p-53 * 2.0 - 1.0;
	}
	return v;
}

void
fix_sign(std::vector<double> &v)
{
	for(const double x : v)
	{
		if(std::abs(x) <= 1e-12)
			continue;

		if(x < 0)
			for(auto &y : v)
				y = -y;

		return;
	}
}

} // namespace

//
// BasicEmbeddingMatrix
//

template<class T>
BasicEmbeddingMatrix<T>::BasicEmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<T> values, NormStatus status)
:rows_{rows}
,dim_{dim}
,values_{std::move(values)}
,status_{status}
{
	if(values_.size() != rows_ * dim_)
		throw Error("embedding matrix: expected " + std::to_string(rows_ * dim_) + " values, got " + std::to_string(values_.size()));

	if(rows_ > 0 && dim_ == 0)
		throw Error("embedding matrix: zero dimension");

	for(std::size_t i = 0; i < rows_; ++i)
	{
		double sq(0);
		for(const T x : row(i))
		{
			if(!std::isfinite(x))
				throw Error("embedding matrix: non-finite value in row " + std::to_string(i));

			sq += double(x) * double(x);
		}

		if(status_ == NormStatus::unit && std::abs(std::sqrt(sq) - 1.0) > unit_norm_tolerance)
			throw Error("embedding matrix: row " + std::to_string(i) + " is not unit norm");
	}
}

template<class T>
BasicEmbeddingMatrix<T>
BasicEmbeddingMatrix<T>::from_rows(const std::vector<std::vector<T>> &rows, NormStatus status)
{
	const std::size_t dim(rows.empty() ? 0 : rows.front().size());
	std::vector<T> values;
	values.reserve(rows.size() * dim);
	for(const auto &r : rows)
	{
		if(r.size() != dim)
			throw Error("embedding matrix: ragged rows");

		values.insert(values.end(), r.begin(), r.end());
	}
	return BasicEmbeddingMatrix(rows.size(), dim, std::move(values), status);
}

template class BasicEmbeddingMatrix<double>;
template class BasicEmbeddingMatrix<float>;

//
// EMB1
//

void
write_emb1(std::ostream &out, std::size_t rows, std::size_t dim, std::span<const float> values)
{
	if(values.size() != rows * dim)
		throw Error("EMB1: value count does not match rows x dim");

	out.write(emb1_magic.data(), 4);
	put_u32(out, checked_u32(rows, "row count"));
	put_u32(out, checked_u32(dim, "dimension"));
	put_floats(out, values);
}

template<class T>
void
save_emb1(const std::filesystem::path &path, const BasicEmbeddingMatrix<T> &m)
{
	atomic_write(path, [&](std::ostream &out)
	{
		if constexpr(std::is_same_v<T, float>)
			write_emb1(out, m.rows(), m.dim(), m.values());
		else
		{
			const std::vector<float> f(m.values().begin(), m.values().end());
			write_emb1(out, m.rows(), m.dim(), f);
		}
	}, true);
}

template void save_emb1(const std::filesystem::path &, const BasicEmbeddingMatrix<double> &);
template void save_emb1(const std::filesystem::path &, const BasicEmbeddingMatrix<float> &);

IndexMatrix
parse_emb1(std::string_view bytes, NormStatus status)
{
	if(bytes.size() < emb1_header_bytes || bytes.substr(0, 4) != emb1_magic)
		throw Error("EMB1: bad magic or truncated header");

	const std::size_t rows(get_u32(bytes.data() + 4)), dim(get_u32(bytes.data() + 8));
	if(bytes.size() != emb1_header_bytes + 4 * rows * dim)
		throw Error("EMB1: expected " + std::to_string(emb1_header_bytes + 4 * rows * dim)
		            + " bytes for " + std::to_string(rows) + "x" + std::to_string(dim)
		            + ", got " + std::to_string(bytes.size()));

	std::vector<float> values(rows * dim);
	const char *p(bytes.data() + emb1_header_bytes);
	if constexpr(std::endian::native == std::endian::little)
		std::memcpy(values.data(), p, values.size() * sizeof(float));
	else
		for(std::size_t i = 0; i < values.size(); ++i)
			values[i] = std::bit_cast<float>(get_u32(p + 4 * i));

	return IndexMatrix(rows, dim, std::move(values), status);
}

IndexMatrix
load_emb1(const std::filesystem::path &path, NormStatus status)
{
	return parse_emb1(read_file(path), status);
}

struct Emb1Writer::Impl
{
	std::filesystem::path path, tmp;
	std::ofstream out;
	std::size_t rows, dim, written{0};
	bool committed{false};
	std::vector<float> buf;
};

Emb1Writer::Emb1Writer(const std::filesystem::path &path, std::size_t rows, std::size_t dim)
:impl_{std::make_unique<Impl>()}
{
	impl_->path = path;
	impl_->tmp = path;
	impl_->tmp += ".tmp";
	impl_->rows = rows;
	impl_->dim = dim;
	impl_->out.open(impl_->tmp, std::ios::binary | std::ios::trunc);
	if(!impl_->out)
		throw Error("cannot open for writing: " + impl_->tmp.string());

	impl_->out.write(emb1_magic.data(), 4);
	put_u32(impl_->out, checked_u32(rows, "row count"));
	put_u32(impl_->out, checked_u32(dim, "dimension"));
}

Emb1Writer::~Emb1Writer()
{
	if(impl_ && !impl_->committed)
	{
		impl_->out.close();
		std::error_code ec;
		std::filesystem::remove(impl_->tmp, ec);
	}
}

void
Emb1Writer::append(std::span<const double> row)
{
	if(row.size() != impl_->dim)
		throw Error("EMB1 writer: row dimension mismatch");
	if(impl_->written >= impl_->rows)
		throw Error("EMB1 writer: too many rows");

	impl_->buf.assign(row.begin(), row.end());
	put_floats(impl_->out, impl_->buf);
	++impl_->written;
}

void
Emb1Writer::commit()
{
	if(impl_->written != impl_->rows)
		throw Error("EMB1 writer: wrote " + std::to_string(impl_->written) + " of " + std::to_string(impl_->rows) + " rows");

	impl_->out.close();
	if(!impl_->out)
		throw Error("EMB1 writer: write failed: " + impl_->tmp.string());

	std::filesystem::rename(impl_->tmp, impl_->path);
	impl_->committed = true;
}

//
// Token probabilities
//

TokenProbTable::TokenProbTable(std::unordered_map<TokenId, std::uint64_t> counts)
:counts_{std::move(counts)}
{
	for(const auto &[id, c] : counts_)
	{
		if(c == 0)
			throw Error("token prob table: zero count for token " + std::to_string(id));

		total_ += c;
	}
}

double
TokenProbTable::prob(TokenId id) const noexcept
{
	if(const auto it(counts_.find(id)); it != counts_.end())
		return double(it->second) / double(total_);

	return 1.0 / double(total_ + 1);
}

TokenProbTable
estimate_token_probs(const SentencePool &pool, const Tokenizer &tokenizer)
{
	if(pool.empty())
		throw Error("estimate_token_probs: empty sentence pool");

	std::unordered_map<TokenId, std::uint64_t> counts;
	for(const auto &s : pool.sentences())
		for(const auto id : tokenizer.tokenize(s.text))
			++counts[id];

	return TokenProbTable(std::move(counts));
}

//
// SIF
//

double
sif_weight(double p_w, double a)
{
	if(!(a > 0))
		throw Error("sif_weight: a must be positive");
	if(!(p_w >= 0 && p_w <= 1))
		throw Error("sif_weight: probability out of range");

	return a / (a + p_w);
}

std::vector<double>
embed_sentence_sif(std::span<const TokenId> token_ids,
                   const IndexMatrix &table,
                   const TokenProbTable &probs,
                   double a)
{
	if(token_ids.empty())
		throw Error("embed_sentence_sif: empty token list");

	std::vector<double> out(table.dim(), 0.0);
	for(const auto id : token_ids)
	{
		if(id >= table.rows())
			throw Error("embed_sentence_sif: token id " + std::to_string(id) + " outside embedding table");

		const double w(sif_weight(probs.prob(id), a));
		const auto emb(table.row(id));
		for(std::size_t k = 0; k < out.size(); ++k)
			out[k] += w * double(emb[k]);
	}

	const double inv(1.0 / double(token_ids.size()));
	for(auto &x : out)
		x *= inv;

	return out;
}

struct CovarianceAccumulator::Impl
{
	static constexpr Eigen::Index block_rows{256};

	std::size_t dim;
	Eigen::VectorXd origin;
	Eigen::VectorXd dev_sum;
	Eigen::MatrixXd scatter;
	Eigen::MatrixXd block;
	Eigen::Index pending{0};

	void flush()
	{
		if(pending == 0)
			return;

		const auto b(block.topRows(pending));
		scatter.noalias() += b.transpose() * b;
		pending = 0;
	}
};

CovarianceAccumulator::CovarianceAccumulator(std::size_t dim)
:impl_{std::make_unique<Impl>()}
{
	if(dim == 0)
		throw Error("covariance: zero dimension");

	impl_->dim = dim;
	impl_->dev_sum = Eigen::VectorXd::Zero(dim);
	impl_->scatter = Eigen::MatrixXd::Zero(dim, dim);
	impl_->block.resize(Impl::block_rows, dim);
}

CovarianceAccumulator::~CovarianceAccumulator() = default;
CovarianceAccumulator::CovarianceAccumulator(CovarianceAccumulator &&) noexcept = default;

void
CovarianceAccumulator::add(std::span<const double> row)
{
	if(row.size() != impl_->dim)
		throw Error("covariance: dimension mismatch");

	const Eigen::Map<const Eigen::VectorXd> x(row.data(), Eigen::Index(row.size()));
	if(count_ == 0)
		impl_->origin = x;

	const Eigen::VectorXd dev(x - impl_->origin);
	impl_->dev_sum += dev;
	impl_->block.row(impl_->pending++) = dev.transpose();
	if(impl_->pending == Impl::block_rows)
		impl_->flush();

	++count_;
}

std::vector<double>
CovarianceAccumulator::mean() const
{
	if(count_ == 0)
		throw Error("covariance: no rows");

	const Eigen::VectorXd m(impl_->origin + impl_->dev_sum / double(count_));
	return std::vector<double>(m.data(), m.data() + m.size());
}

std::vector<double>
CovarianceAccumulator::principal_direction() const
{
	if(count_ < 2)
		throw Error("fit_first_pc: need at least two rows");

	impl_->flush();
	const Eigen::VectorXd m(impl_->dev_sum / double(count_));
	const Eigen::MatrixXd c(impl_->scatter - double(count_) * m * m.transpose());
	if(!(c.trace() > 0))
		throw Error("fit_first_pc: degenerate matrix (centered rows are all zero)");

	const auto start(initial_vector(impl_->dim));
	Eigen::VectorXd v(Eigen::Map<const Eigen::VectorXd>(start.data(), Eigen::Index(start.size())));
	v.normalize();

	// Converged when the eigen-residual |Cv - lambda v| falls below the
	// tolerance relative to lambda; this bounds the direction error, which a
	// change-in-lambda test would not.
	for(std::size_t it = 0; it < power_iteration_max_iters; ++it)
	{
		const Eigen::VectorXd w(c * v);
		const double lambda(v.dot(w));
		const double wn(w.norm());
		if(!(wn > 0))
			throw Error("fit_first_pc: power iteration collapsed");

		const bool converged((w - lambda * v).norm() <= power_iteration_tolerance * std::abs(lambda));
		v = w / wn;
		if(converged)
			break;
	}

	std::vector<double> out(v.data(), v.data() + v.size());
	fix_sign(out);
	return out;
}

std::vector<double>
fit_first_pc(const EmbeddingMatrix &matrix)
{
	if(matrix.rows() < 2)
		throw Error("fit_first_pc: need at least two rows");

	CovarianceAccumulator acc(matrix.dim());
	for(std::size_t i = 0; i < matrix.rows(); ++i)
		acc.add(matrix.row(i));

	return acc.principal_direction();
}

void
remove_pc_row(std::span<double> row, std::span<const double> pc1)
{
	if(row.size() != pc1.size())
		throw Error("remove_pc: dimension mismatch");

	const double proj(std::inner_product(row.begin(), row.end(), pc1.begin(), 0.0));
	for(std::size_t k = 0; k < row.size(); ++k)
		row[k] -= proj * pc1[k];
}

EmbeddingMatrix
remove_pc(const EmbeddingMatrix &matrix, std::span<const double> pc1)
{
	if(matrix.dim() != pc1.size())
		throw Error("remove_pc: dimension mismatch");
	if(std::abs(norm2(pc1) - 1.0) > unit_norm_tolerance)
		throw Error("remove_pc: pc1 is not unit norm");

	std::vector<double> values(matrix.values().begin(), matrix.values().end());
	for(std::size_t i = 0; i < matrix.rows(); ++i)
		remove_pc_row(std::span<double>(values).subspan(i * matrix.dim(), matrix.dim()), pc1);

	return EmbeddingMatrix(matrix.rows(), matrix.dim(), std::move(values));
}

EmbeddingMatrix
normalize_rows(const EmbeddingMatrix &matrix, const EmbeddingMatrix *fallback)
{
	if(fallback && (fallback->rows() != matrix.rows() || fallback->dim() != matrix.dim()))
		throw Error("normalize_rows: fallback shape mismatch");

	const auto d(matrix.dim());
	std::vector<double> values(matrix.values().begin(), matrix.values().end());
	for(std::size_t i = 0; i < matrix.rows(); ++i)
	{
		auto row(std::span<double>(values).subspan(i * d, d));
		double n(norm2(row));
		const double ref(fallback ? norm2(fallback->row(i)) : 0.0);
		if(!(n > 1e-6 * ref) || n == 0)
		{
			if(!fallback || ref == 0)
				throw Error("normalize_rows: row " + std::to_string(i) + " is zero");

			std::copy_n(fallback->row(i).begin(), d, row.begin());
			n = ref;
		}

		for(auto &x : row)
			x /= n;
	}
	return EmbeddingMatrix(matrix.rows(), d, std::move(values), NormStatus::unit);
}

SifEmbedder::SifEmbedder(std::shared_ptr<const Tokenizer> tokenizer,
                         std::shared_ptr<const IndexMatrix> table,
                         TokenProbTable probs,
                         SifModel model)
:tokenizer_{std::move(tokenizer)}
,table_{std::move(table)}
,probs_{std::move(probs)}
,model_{std::move(model)}
{
	if(!tokenizer_ || !table_)
		throw Error("SIF embedder: tokenizer and embedding table are required");
	if(table_->rows() < tokenizer_->vocab_size())
		throw Error("SIF embedder: embedding table has fewer rows than the vocabulary");
	if(!(model_.a > 0))
		throw Error("SIF embedder: a must be positive");

	model_.dim = table_->dim();
	if(model_.pc1)
	{
		if(model_.pc1->size() != model_.dim)
			throw Error("SIF embedder: pc1 dimension mismatch");
		if(std::abs(norm2(*model_.pc1) - 1.0) > unit_norm_tolerance)
			throw Error("SIF embedder: pc1 is not unit norm");
	}
}

std::vector<double>
SifEmbedder::raw(std::string_view text) const
{
	const auto ids(tokenizer_->tokenize(text));
	return embed_sentence_sif(ids, *table_, probs_, model_.a);
}

std::vector<double>
SifEmbedder::embed(std::string_view text) const
{
	const auto r(raw(text));
	const double rn(norm2(r));
	if(rn == 0)
		throw Error("SIF embedder: zero embedding for text: " + std::string(text));

	auto v(r);
	if(model_.pc1)
		remove_pc_row(v, *model_.pc1);

	double n(norm2(v));
	if(!(n > 1e-6 * rn))
	{
		v = r;
		n = rn;
	}

	for(auto &x : v)
		x /= n;

	return v;
}

EmbeddingMatrix
SifEmbedder::embed_all(const std::vector<std::string> &texts) const
{
	std::vector<double> values;
	values.reserve(texts.size() * dim());
	for(const auto &t : texts)
	{
		const auto v(embed(t));
		values.insert(values.end(), v.begin(), v.end());
	}
	return EmbeddingMatrix(texts.size(), dim(), std::move(values), NormStatus::unit);
}

EmbeddingMatrix
SifEmbedder::embed_pool(const SentencePool &pool) const
{
	std::vector<std::string> texts;
	texts.reserve(pool.size());
	for(const auto &s : pool.sentences())
		texts.push_back(s.text);

	return embed_all(texts);
}

SifEmbedder
fit_sif(const SentencePool &pool,
        std::shared_ptr<const Tokenizer> tokenizer,
        std::shared_ptr<const IndexMatrix> table,
        double a)
{
	auto probs(estimate_token_probs(pool, *tokenizer));
	SifEmbedder unfitted(tokenizer, table, probs, SifModel{a, std::nullopt, table->dim()});
	if(pool.size() < 2)
		return unfitted;

	CovarianceAccumulator acc(table->dim());
	for(const auto &s : pool.sentences())
		acc.add(unfitted.raw(s.text));

	SifModel model{a, std::nullopt, table->dim()};
	try
	{
		model.pc1 = acc.principal_direction();
	}
	catch(const Error &)
	{
		// identical sentence embeddings: nothing to remove
	}

	return SifEmbedder(std::move(tokenizer), std::move(table), std::move(probs), std::move(model));
}

void
save_sif_model(const std::filesystem::path &path, const SifEmbedder &embedder)
{
	std::vector<std::pair<TokenId, std::uint64_t>> counts(embedder.probs().counts().begin(), embedder.probs().counts().end());
	std::sort(counts.begin(), counts.end());

	nlohmann::json j
	{
		{"a", embedder.model().a},
		{"dim", embedder.model().dim},
		{"pc1", embedder.model().pc1 ? nlohmann::json(*embedder.model().pc1) : nlohmann::json(nullptr)},
		{"total_tokens", embedder.probs().total_tokens()},
		{"counts", counts},
	};

	atomic_write(path, [&](std::ostream &out)
	{
		out << j.dump() << '\n';
	});
}

SifEmbedder
load_sif_model(const std::filesystem::path &path,
               std::shared_ptr<const Tokenizer> tokenizer,
               std::shared_ptr<const IndexMatrix> table)
{
	try
	{
		const auto j(nlohmann::json::parse(read_file(path)));
		std::unordered_map<TokenId, std::uint64_t> counts;
		for(const auto &c : j.at("counts"))
			counts.emplace(c.at(0).get<TokenId>(), c.at(1).get<std::uint64_t>());

		SifModel model{j.at("a").get<double>(), std::nullopt, j.at("dim").get<std::size_t>()};
		if(!j.at("pc1").is_null())
			model.pc1 = j.at("pc1").get<std::vector<double>>();

		if(table->dim() != model.dim)
			throw Error("SIF model dimension " + std::to_string(model.dim) + " does not match embedding table " + std::to_string(table->dim()));

		return SifEmbedder(std::move(tokenizer), std::move(table), TokenProbTable(std::move(counts)), std::move(model));
	}
	catch(const nlohmann::json::exception &e)
	{
		throw Error("malformed SIF model " + path.string() + ": " + e.what());
	}
}

//
// Remote embedder
//

struct RemoteEmbedder::Gate : detail::InFlightGate
{
	using detail::InFlightGate::InFlightGate;
};

RemoteEmbedder::RemoteEmbedder(std::string endpoint, RemoteOptions options)
:endpoint_{std::move(endpoint)}
,options_{options}
,gate_{std::make_unique<Gate>(options.max_in_flight)}
{
	detail::parse_endpoint(endpoint_);
}

RemoteEmbedder::~RemoteEmbedder() = default;

std::vector<std::vector<double>>
RemoteEmbedder::embed_batch(std::span<const std::string> texts) const
{
	const auto ep(detail::parse_endpoint(endpoint_));
	const nlohmann::json body{{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
	const auto payload(body.dump());

	return detail::with_retries("remote_embed", options_.retries, options_.backoff, [&]
	{
		const auto permit(gate_->acquire());
		auto cli(detail::make_client(ep, options_.timeout));
		const auto res(detail::check_response(cli->Post(ep.prefix + "/v1/embed", payload, "application/json"), "remote_embed"));

		nlohmann::json j;
		try
		{
			j = nlohmann::json::parse(res.body);
		}
		catch(const nlohmann::json::exception &e)
		{
			throw Error(std::string("malformed response: ") + e.what());
		}

		const auto vectors(j.find("vectors")), dim(j.find("dim"));
		if(vectors == j.end() || !vectors->is_array() || dim == j.end() || !dim->is_number_unsigned())
			throw Error("response lacks 'vectors' / 'dim'");
		if(vectors->size() != texts.size())
			throw Error("expected " + std::to_string(texts.size()) + " vectors, got " + std::to_string(vectors->size()));

		const auto d(dim->get<std::size_t>());
		std::vector<std::vector<double>> out;
		out.reserve(texts.size());
		for(const auto &v : *vectors)
		{
			auto row(v.get<std::vector<double>>());
			if(row.size() != d)
				throw Error("inconsistent vector dimension: " + std::to_string(row.size()) + " vs declared " + std::to_string(d));
			if(!std::all_of(row.begin(), row.end(), [](double x) { return std::isfinite(x); }))
				throw Error("non-finite vector component");

			out.push_back(std::move(row));
		}
		return out;
	});
}

std::vector<std::vector<double>>
RemoteEmbedder::embed(const std::vector<std::string> &texts) const
{
	std::vector<std::vector<double>> out;
	out.reserve(texts.size());
	const auto batch(std::max<std::size_t>(1, options_.batch_size));
	for(std::size_t i = 0; i < texts.size(); i += batch)
	{
		const auto n(std::min(batch, texts.size() - i));
		auto part(embed_batch(std::span<const std::string>(texts).subspan(i, n)));
		if(!out.empty() && !part.empty() && part.front().size() != out.front().size())
			throw Error("remote_embed: dimension changed between batches");

		std::move(part.begin(), part.end(), std::back_inserter(out));
	}
	return out;
}

std::vector<std::vector<double>>
remote_embed(const std::string &endpoint, const std::vector<std::string> &texts, const RemoteOptions &options)
{
	return RemoteEmbedder(endpoint, options).embed(texts);
}

} // namespace hintpipe
