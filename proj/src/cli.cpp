#include "hintpipe/cli.hpp"
#include "hintpipe/lm.hpp"
#include "hintpipe/pipeline.hpp"
#include "hintpipe/tokenizer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace hintpipe {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string
format_double(double v)
{
	char buf[32];
	std::snprintf(buf, sizeof(buf), "%.17g", v);
	return buf;
}

template<class T>
T
parse_integer(const std::string &key, const std::string &value)
{
	T v{};
	const auto *end(value.data() + value.size());
	const auto [p, ec](std::from_chars(value.data(), end, v));
	if(ec != std::errc{} || p != end)
		throw UsageError(key + ": expected a non-negative integer, got '" + value + "'");
	return v;
}

double
parse_real(const std::string &key, const std::string &value)
{
	double v{};
	const auto *end(value.data() + value.size());
	const auto [p, ec](std::from_chars(value.data(), end, v));
	if(ec != std::errc{} || p != end || !std::isfinite(v))
		throw UsageError(key + ": expected a finite number, got '" + value + "'");
	return v;
}

bool
parse_bool(const std::string &key, const std::string &value)
{
	if(value == "true" || value == "1" || value == "yes")
		return true;
	if(value == "false" || value == "0" || value == "no")
		return false;
	throw UsageError(key + ": expected true or false, got '" + value + "'");
}

const std::map<std::string, std::string PipelineConfig::*, std::less<>> string_settings
{
	{"pool", &PipelineConfig::pool},
	{"matrix", &PipelineConfig::matrix},
	{"index", &PipelineConfig::index},
	{"examples", &PipelineConfig::examples},
	{"documents", &PipelineConfig::documents},
	{"stoplist", &PipelineConfig::stoplist},
	{"vocab", &PipelineConfig::vocab},
	{"merges", &PipelineConfig::merges},
	{"emb_table", &PipelineConfig::emb_table},
	{"lm", &PipelineConfig::lm},
	{"remote", &PipelineConfig::remote},
};

} // namespace

void
PipelineConfig::set(const std::string &key, const std::string &value)
{
	if(const auto it(string_settings.find(key)); it != string_settings.end())
	{
		this->*(it->second) = value;
		return;
	}

	if(key == "a")
	{
		a = parse_real(key, value);
		if(!(a > 0))
			throw UsageError("a: must be positive");
	}
	else if(key == "alpha")
		alpha = parse_real(key, value);
	else if(key == "top_p")
	{
		top_p = parse_real(key, value);
		if(!(top_p > 0 && top_p <= 1))
			throw UsageError("top_p: must be in (0, 1]");
	}
	else if(key == "n_candidates")
	{
		n_candidates = parse_integer<std::size_t>(key, value);
		if(n_candidates == 0)
			throw UsageError("n_candidates: must be positive");
	}
	else if(key == "max_answer_tokens")
	{
		max_answer_tokens = parse_integer<std::uint32_t>(key, value);
		if(max_answer_tokens == 0)
			throw UsageError("max_answer_tokens: must be positive");
	}
	else if(key == "seed")
		seed = parse_integer<std::uint64_t>(key, value);
	else if(key == "hint_budget")
	{
		if(value.empty())
			hint_budget.reset();
		else if(!(hint_budget = parse_integer<std::uint32_t>(key, value)))
			throw UsageError("hint_budget: must be positive");
	}
	else if(key == "context_window")
	{
		context_window = parse_integer<std::uint32_t>(key, value);
		if(context_window == 0)
			throw UsageError("context_window: must be positive");
	}
	else if(key == "top_k")
		top_k = parse_integer<std::uint32_t>(key, value);
	else if(key == "workers")
		workers = parse_integer<std::size_t>(key, value);
	else if(key == "exclude_own_doc")
		exclude_own_doc = parse_bool(key, value);
	else
		throw UsageError("unknown setting: " + key);
}

void
PipelineConfig::merge_file(const fs::path &path)
{
	std::ifstream in(path);
	if(!in)
		throw UsageError("config file not found: " + path.string());

	std::string line;
	for(std::size_t n = 1; std::getline(in, line); ++n)
	{
		const auto body(trim(std::string_view(line).substr(0, line.find('#'))));
		if(body.empty())
			continue;

		const auto eq(body.find('='));
		if(eq == std::string_view::npos)
			throw UsageError(path.string() + ":" + std::to_string(n) + ": expected key = value");

		try
		{
			set(std::string(trim(body.substr(0, eq))), std::string(trim(body.substr(eq + 1))));
		}
		catch(const UsageError &e)
		{
			throw UsageError(path.string() + ":" + std::to_string(n) + ": " + e.what());
		}
	}
}

std::string
PipelineConfig::canonical() const
{
	std::vector<std::string> lines;
	for(const auto &[key, member] : string_settings)
		lines.push_back(key + "=" + this->*member);

	lines.push_back("a=" + format_double(a));
	lines.push_back("alpha=" + format_double(alpha));
	lines.push_back("top_p=" + format_double(top_p));
	lines.push_back("n_candidates=" + std::to_string(n_candidates));
	lines.push_back("max_answer_tokens=" + std::to_string(max_answer_tokens));
	lines.push_back("seed=" + std::to_string(seed));
	lines.push_back("hint_budget=" + (hint_budget ? std::to_string(*hint_budget) : std::string()));
	lines.push_back("context_window=" + std::to_string(context_window));
	lines.push_back("top_k=" + std::to_string(top_k));
	lines.push_back(std::string("exclude_own_doc=") + (exclude_own_doc ? "true" : "false"));
	std::sort(lines.begin(), lines.end());

	std::string s;
	for(const auto &l : lines)
		s += l + '\n';
	return s;
}

std::string
PipelineConfig::hash() const
{
	std::uint64_t h(0xcbf29ce484222325ULL);
	for(const unsigned char c : canonical())
	{
		h ^= c;
		h *= 0x100000001b3ULL;
	}

	char buf[17];
	std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
	return buf;
}

DecodeConfig
PipelineConfig::decode() const
{
	DecodeConfig d;
	d.top_p = top_p;
	d.n_candidates = n_candidates;
	d.max_answer_tokens = max_answer_tokens;
	d.alpha = alpha;
	d.rng_seed = seed;
	return d;
}

GridCell
parse_grid_cell(std::string_view text)
{
	const auto colon(text.rfind(':'));
	if(colon == std::string_view::npos || colon == 0)
		throw UsageError("grid cell must look like EMBEDDING:ALPHA, got '" + std::string(text) + "'");

	return GridCell{std::string(text.substr(0, colon)), parse_real("alpha", std::string(text.substr(colon + 1)))};
}

std::vector<GridRow>
experiment_grid(const std::vector<std::pair<std::string, std::pair<const QaPipeline *, std::size_t>>> &pipelines,
                const std::vector<EvalExample> &examples,
                const DecodeConfig &base,
                const std::vector<GridCell> &cells,
                const EvalOptions &options)
{
	if(pipelines.empty())
		throw Error("experiment grid: no pipelines");

	std::vector<GridRow> rows;
	for(const auto &cell : cells)
	{
		auto cfg(base);
		cfg.alpha = cell.alpha;

		GridRow row{cell.embedding, "-", cell.alpha, {}};
		if(cell.embedding == "none")
			row.report = run_eval(*pipelines.front().second.first, examples, cfg, HintMode::none, options);
		else
		{
			const auto it(std::find_if(pipelines.begin(), pipelines.end(), [&](const auto &p)
			{
				return p.first == cell.embedding;
			}));
			if(it == pipelines.end())
				throw Error("experiment grid: no index for embedding '" + cell.embedding + "'");

			row.dim = std::to_string(it->second.second);
			row.report = run_eval(*it->second.first, examples, cfg, HintMode::retrieve, options);
		}
		rows.push_back(std::move(row));
	}
	return rows;
}

std::string
grid_table(const std::vector<GridRow> &rows)
{
	std::string s("Embedding\tdim\talpha\tScore\tCorrect\n");
	for(const auto &r : rows)
	{
		char alpha[32], score[32];
		std::snprintf(alpha, sizeof(alpha), "%g", r.alpha);
		std::string a(alpha);
		if(a.find_first_of(".e") == std::string::npos)
			a += ".0";

		std::snprintf(score, sizeof(score), "%.2f%%", 100.0 * r.report.accuracy);
		s += r.embedding + '\t' + r.dim + '\t' + a + '\t' + score + '\t'
		   + std::to_string(r.report.correct) + '/' + std::to_string(r.report.total) + '\n';
	}
	return s;
}

namespace {

void
tag_log(spdlog::logger &log, const PipelineConfig &cfg)
{
	log.set_pattern("%Y-%m-%dT%H:%M:%S.%e %l [cfg " + cfg.hash() + "] %v");
}

struct Context
{
	PipelineConfig cfg;
	std::shared_ptr<spdlog::logger> log;
	std::ostream &out;
};

std::string
absolute(const std::string &p)
{
	return fs::absolute(p).lexically_normal().string();
}

void
require_file(const std::string &path, std::string_view what)
{
	if(path.empty())
		throw UsageError("missing " + std::string(what) + " path");
	if(!fs::exists(path))
		throw UsageError(std::string(what) + " not found: " + path);
}

std::shared_ptr<const Tokenizer>
load_tokenizer(const PipelineConfig &cfg, spdlog::logger &log)
{
	if(cfg.vocab.empty() != cfg.merges.empty())
		throw UsageError("vocab and merges must be given together");

	if(cfg.vocab.empty())
	{
		log.warn("no vocab/merges configured, using the byte-level tokenizer");
		return std::make_shared<const Tokenizer>(Tokenizer::byte_level());
	}

	require_file(cfg.vocab, "vocab");
	require_file(cfg.merges, "merges");
	return std::make_shared<const Tokenizer>(Tokenizer::from_files(cfg.vocab, cfg.merges));
}

ojson
read_json(const std::string &path)
{
	try
	{
		return ojson::parse(read_file(path));
	}
	catch(const nlohmann::json::exception &e)
	{
		throw Error(path + ": " + e.what());
	}
}

void
write_text(const std::string &path, const std::string &text)
{
	atomic_write(path, [&](std::ostream &o)
	{
		o << text;
	});
}

std::size_t
resolve_workers(const PipelineConfig &cfg)
{
	if(cfg.workers)
		return cfg.workers;

	const std::size_t cores(std::max(1u, std::thread::hardware_concurrency()));
	return std::min(cores, RemoteOptions{}.max_in_flight);
}

std::vector<double>
unit(std::vector<double> v, std::string_view what)
{
	double n(0);
	for(const double x : v)
		n += x * x;

	n = std::sqrt(n);
	if(!(n > 0) || !std::isfinite(n))
		throw Error(std::string(what) + ": zero or non-finite embedding");

	for(auto &x : v)
		x /= n;
	return v;
}

/// Matrix rows reordered so that row i is sentence i.
IndexMatrix
load_sentence_matrix(const std::string &path)
{
	require_file(path, "matrix");
	auto m(load_emb1(path, NormStatus::unit));

	const auto rows_path(path + ".rows");
	if(!fs::exists(rows_path))
		return m;

	std::istringstream in(read_file(rows_path));
	std::vector<SentId> ids;
	for(std::string line; std::getline(in, line); )
		if(!trim(line).empty())
			ids.push_back(parse_integer<SentId>(rows_path, std::string(trim(line))));

	if(ids.size() != m.rows())
		throw Error(rows_path + ": " + std::to_string(ids.size()) + " ids for " + std::to_string(m.rows()) + " rows");

	std::vector<float> values(m.values().size());
	std::vector<bool> seen(ids.size(), false);
	for(std::size_t r = 0; r < ids.size(); ++r)
	{
		if(ids[r] >= ids.size() || seen[ids[r]])
			throw Error(rows_path + ": row ids are not a permutation of 0.." + std::to_string(ids.size() - 1));

		seen[ids[r]] = true;
		std::copy(m.row(r).begin(), m.row(r).end(), values.begin() + std::ptrdiff_t(ids[r] * m.dim()));
	}
	return IndexMatrix(m.rows(), m.dim(), std::move(values), NormStatus::unit);
}

struct Runtime
{
	std::shared_ptr<const Tokenizer> tokenizer;
	std::shared_ptr<const SentencePool> pool;
	std::shared_ptr<const SentenceIndex> index;
	QuestionEmbedder embed;
	std::string embedder{"none"};
	std::size_t dim{0};
};

ShiftVector
shift_from_questions(const std::string &matrix_path, const IndexMatrix &sentences, const ojson &meta)
{
	const auto q(meta.value("questions", ojson()));
	if(!q.is_string() || !fs::exists(q.get<std::string>()))
		throw UsageError("no question embeddings next to " + matrix_path
		                 + ", run embed with --examples or build the index with --no-shift");

	return compute_shift(sentences, load_emb1(q.get<std::string>(), NormStatus::unit));
}

/// Loads the pool, tokenizer and (if configured) the sentence index and
/// question embedder. With `need_index` an index or matrix must be given.
Runtime
load_runtime(Context &ctx, bool need_index, std::shared_ptr<const Tokenizer> tokenizer = nullptr)
{
	auto &cfg(ctx.cfg);
	Runtime rt;

	ojson meta;
	std::string matrix_path;
	std::optional<ShiftVector> shift;
	if(!cfg.index.empty())
	{
		require_file(cfg.index, "index");
		const auto manifest(read_json(cfg.index));
		meta = manifest.at("meta");
		matrix_path = manifest.at("matrix").get<std::string>();
		shift = ShiftVector{manifest.at("shift").get<std::vector<double>>()};
	}
	else if(!cfg.matrix.empty())
	{
		require_file(cfg.matrix + ".meta.json", "matrix metadata");
		meta = read_json(cfg.matrix + ".meta.json");
		matrix_path = cfg.matrix;
	}
	else if(need_index)
		throw UsageError("missing --index (or --pool with --matrix)");

	if(!meta.empty())
	{
		if(cfg.pool.empty())
			cfg.pool = meta.at("pool").get<std::string>();
		if(cfg.vocab.empty() && cfg.merges.empty() && !meta.value("vocab", std::string()).empty())
		{
			cfg.vocab = meta.at("vocab").get<std::string>();
			cfg.merges = meta.at("merges").get<std::string>();
		}
	}

	require_file(cfg.pool, "pool");
	rt.pool = std::make_shared<const SentencePool>(load_pool(cfg.pool));
	rt.tokenizer = tokenizer ? std::move(tokenizer) : load_tokenizer(cfg, *ctx.log);

	if(meta.empty())
		return rt;

	auto sentences(load_sentence_matrix(matrix_path));
	if(sentences.rows() != rt.pool->size())
		throw Error("matrix has " + std::to_string(sentences.rows()) + " rows but the pool has "
		            + std::to_string(rt.pool->size()) + " sentences");

	if(!shift)
		shift = shift_from_questions(matrix_path, sentences, meta);
	if(shift->delta.size() != sentences.dim())
		throw Error("shift vector dimension does not match the matrix");

	rt.embedder = meta.at("embedder").get<std::string>();
	rt.dim = sentences.dim();
	if(rt.embedder == "sif")
	{
		const auto table_path(meta.at("emb_table").get<std::string>());
		const auto model_path(meta.at("sif_model").get<std::string>());
		require_file(table_path, "embedding table");
		require_file(model_path, "SIF model");

		const auto table(std::make_shared<const IndexMatrix>(load_emb1(table_path)));
		const auto sif(std::make_shared<const SifEmbedder>(load_sif_model(model_path, rt.tokenizer, table)));
		if(sif->dim() != rt.dim)
			throw Error("SIF model dimension does not match the matrix");

		rt.embed = [sif](std::string_view q)
		{
			return sif->embed(q);
		};
	}
	else if(rt.embedder == "remote")
	{
		const auto remote(std::make_shared<const RemoteEmbedder>(meta.at("remote").get<std::string>()));
		const auto dim(rt.dim);
		rt.embed = [remote, dim](std::string_view q)
		{
			auto v(unit(remote->embed({std::string(q)}).at(0), "remote embedder"));
			if(v.size() != dim)
				throw Error("remote embedder returned dimension " + std::to_string(v.size()) + ", index has " + std::to_string(dim));
			return v;
		};
	}
	else
		throw Error("unknown embedder in matrix metadata: " + rt.embedder);

	rt.index = std::make_shared<const SentenceIndex>(std::move(sentences), std::move(*shift));
	return rt;
}

std::shared_ptr<const LanguageModel>
open_lm(const PipelineConfig &cfg, std::shared_ptr<const Tokenizer> tokenizer)
{
	if(cfg.lm.empty() && !std::getenv("HINTPIPE_LM_URL"))
		throw UsageError("no language model: pass --lm or set HINTPIPE_LM_URL");
	if(cfg.lm.starts_with("mock:"))
		require_file(cfg.lm.substr(5), "mock LM script");

	HttpLmOptions options;
	options.top_k = cfg.top_k;
	return open_language_model(cfg.lm, std::move(tokenizer), options);
}

HintedPipeline
make_pipeline(const PipelineConfig &cfg, const Runtime &rt, std::shared_ptr<const LanguageModel> lm)
{
	PipelineParts parts;
	parts.pool = rt.pool;
	parts.index = rt.index;
	parts.embed_question = rt.embed;
	parts.tokenizer = rt.tokenizer;
	parts.lm = std::move(lm);
	if(!cfg.stoplist.empty())
	{
		require_file(cfg.stoplist, "stoplist");
		parts.stoplist = Stoplist::load(cfg.stoplist);
	}
	parts.hint_budget = cfg.hint_budget;
	parts.exclude_own_doc = cfg.exclude_own_doc;
	return HintedPipeline(std::move(parts));
}

std::string
examples_path(const PipelineConfig &cfg)
{
	const auto p(cfg.examples.empty() ? cfg.pool + ".examples.jsonl" : cfg.examples);
	require_file(p, "examples");
	return p;
}

std::vector<EvalExample>
load_eval_set(Context &ctx)
{
	const auto all(load_examples(examples_path(ctx.cfg)));
	auto kept(filter_eval_set(all));
	if(kept.size() != all.size())
		ctx.log->info("evaluation set: kept {} of {} examples", kept.size(), all.size());
	return kept;
}

int
cmd_ingest(Context &ctx, const std::string &format, const std::string &out)
{
	auto &cfg(ctx.cfg);
	require_file(cfg.examples, "examples");
	require_file(cfg.documents, "documents");
	const auto fmt([&]
	{
		try
		{
			return parse_dataset_format(format);
		}
		catch(const Error &e)
		{
			throw UsageError(e.what());
		}
	}());

	const auto tokenizer(load_tokenizer(cfg, *ctx.log));
	const auto examples(load_examples(cfg.examples, fmt));
	const auto kept(filter_eval_set(examples));
	const auto documents(load_documents(cfg.documents));
	const auto pool(build_sentence_pool(kept, documents, *tokenizer));

	save_pool(out, pool);
	save_examples(out + ".examples.jsonl", kept);
	ctx.log->info("ingest: {} examples, {} kept, {} pages, {} sentences", examples.size(), kept.size(),
	              pool.by_doc().size(), pool.size());
	return 0;
}

int
cmd_embed(Context &ctx, const std::string &out)
{
	auto &cfg(ctx.cfg);
	require_file(cfg.pool, "pool");
	const auto pool(load_pool(cfg.pool));
	if(pool.empty())
		throw Error("embed: the pool is empty");

	std::vector<std::string> questions;
	const auto qpath(cfg.examples.empty() ? cfg.pool + ".examples.jsonl" : cfg.examples);
	if(!cfg.examples.empty())
		require_file(cfg.examples, "examples");
	if(fs::exists(qpath))
		for(const auto &ex : load_examples(qpath))
			questions.push_back(ex.question);
	else
		ctx.log->warn("no examples next to the pool, question embeddings are not written");

	ojson meta;
	meta["pool"] = absolute(cfg.pool);
	meta["rows"] = pool.size();

	std::size_t dim(0);
	if(!cfg.remote.empty())
	{
		const RemoteEmbedder remote(cfg.remote);
		constexpr std::size_t chunk(4096);
		std::unique_ptr<Emb1Writer> writer;
		for(std::size_t begin = 0; begin < pool.size(); begin += chunk)
		{
			std::vector<std::string> texts;
			for(std::size_t i = begin; i < std::min(pool.size(), begin + chunk); ++i)
				texts.push_back(pool[SentId(i)].text);

			for(auto &v : remote.embed(texts))
			{
				if(!writer)
				{
					dim = v.size();
					writer = std::make_unique<Emb1Writer>(out, pool.size(), dim);
				}
				if(v.size() != dim)
					throw Error("remote embedder returned mixed dimensions");
				writer->append(unit(std::move(v), "remote embedder"));
			}
		}
		writer->commit();

		if(!questions.empty())
		{
			std::vector<std::vector<double>> rows;
			for(auto &v : remote.embed(questions))
				rows.push_back(unit(std::move(v), "remote embedder"));
			save_emb1(out + ".questions", EmbeddingMatrix::from_rows(rows, NormStatus::unit));
		}

		meta["embedder"] = "remote";
		meta["remote"] = cfg.remote;
	}
	else
	{
		require_file(cfg.emb_table, "embedding table");
		const auto tokenizer(load_tokenizer(cfg, *ctx.log));
		const auto table(std::make_shared<const IndexMatrix>(load_emb1(cfg.emb_table)));
		if(table->rows() < tokenizer->vocab_size())
			throw Error("embedding table has " + std::to_string(table->rows()) + " rows for a vocabulary of "
			            + std::to_string(tokenizer->vocab_size()));

		const auto sif(fit_sif(pool, tokenizer, table, cfg.a));
		dim = sif.dim();
		save_sif_model(out + ".sif.json", sif);

		Emb1Writer writer(out, pool.size(), dim);
		for(const auto &s : pool.sentences())
			writer.append(sif.embed(s.text));
		writer.commit();

		if(!questions.empty())
			save_emb1(out + ".questions", sif.embed_all(questions));

		if(!sif.model().pc1)
			ctx.log->warn("SIF: no principal component removed (fewer than two sentences or degenerate)");

		meta["embedder"] = "sif";
		meta["emb_table"] = absolute(cfg.emb_table);
		meta["sif_model"] = absolute(out + ".sif.json");
		meta["a"] = cfg.a;
		meta["vocab"] = cfg.vocab.empty() ? "" : absolute(cfg.vocab);
		meta["merges"] = cfg.merges.empty() ? "" : absolute(cfg.merges);
	}

	meta["dim"] = dim;
	meta["questions"] = questions.empty() ? ojson(nullptr) : ojson(absolute(out + ".questions"));

	std::string rows;
	for(std::size_t i = 0; i < pool.size(); ++i)
		rows += std::to_string(i) + '\n';
	write_text(out + ".rows", rows);
	write_text(out + ".meta.json", meta.dump(2) + '\n');

	ctx.log->info("embed: {} sentences, {} questions, dim {}", pool.size(), questions.size(), dim);
	return 0;
}

int
cmd_index(Context &ctx, const std::string &out, bool no_shift)
{
	auto &cfg(ctx.cfg);
	require_file(cfg.matrix, "matrix");
	require_file(cfg.matrix + ".meta.json", "matrix metadata");
	const auto meta(read_json(cfg.matrix + ".meta.json"));
	const auto sentences(load_sentence_matrix(cfg.matrix));

	const auto shift(no_shift ? ShiftVector{std::vector<double>(sentences.dim(), 0.0)}
	                          : shift_from_questions(cfg.matrix, sentences, meta));

	ojson j;
	j["format"] = "hintpipe-index/1";
	j["matrix"] = absolute(cfg.matrix);
	j["rows"] = sentences.rows();
	j["dim"] = sentences.dim();
	j["shift"] = shift.delta;
	j["meta"] = meta;
	write_text(out, j.dump(2) + '\n');

	ctx.log->info("index: {} rows, dim {}", sentences.rows(), sentences.dim());
	return 0;
}

int
cmd_search(Context &ctx, const std::string &question, std::size_t k)
{
	const auto rt(load_runtime(ctx, true));
	const auto search(make_search_vector(rt.embed(question), rt.index->shift()));
	std::size_t rank(0);
	for(const auto &s : rank_by_cosine(search, rt.index->matrix(), k))
	{
		char score[32];
		std::snprintf(score, sizeof(score), "%.6f", s.score);
		ctx.out << ++rank << '\t' << s.sent_id << '\t' << score << '\t' << (*rt.pool)[s.sent_id].text << '\n';
	}
	return 0;
}

int
cmd_prompt(Context &ctx, const std::string &question, bool no_hints)
{
	auto &cfg(ctx.cfg);
	const auto rt(load_runtime(ctx, !no_hints));

	std::uint32_t window(cfg.context_window);
	if(!cfg.lm.empty() || std::getenv("HINTPIPE_LM_URL"))
		window = open_lm(cfg, rt.tokenizer)->info().context_window;

	HintSet hints;
	if(!no_hints)
		hints = rt.index->retrieve(rt.embed(question), *rt.pool, cfg.hint_budget.value_or(hint_budget_for(window)), 1);

	const auto p(build_prompt(hints, *rt.pool, question, *rt.tokenizer, PromptLimits{window, default_reserved_generation}));
	ctx.log->info("prompt: {} hints, {} tokens", p.hint_count, p.prompt_tokens);
	ctx.out << p.text;
	return 0;
}

int
cmd_ask(Context &ctx, const std::string &question, bool no_hints)
{
	auto &cfg(ctx.cfg);
	const auto rt(load_runtime(ctx, !no_hints));
	const auto pipeline(make_pipeline(cfg, rt, open_lm(cfg, rt.tokenizer)));
	const auto t(pipeline.run(question, cfg.decode(), no_hints ? HintMode::none : HintMode::retrieve));

	ojson arr = ojson::array();
	for(const auto &c : t.candidates)
		arr.push_back({{"text", c.text}, {"logprob", c.logprob}, {"biased_score", c.biased_score},
		               {"terminated", std::string(to_string(c.terminated))}});

	ctx.out << arr.dump(2) << '\n';
	ctx.log->info("ask: {} hints, {} candidates, answer: {}", t.prompt.hint_count, t.candidates.size(),
	              t.filtered.answer.value_or("<none>"));
	return 0;
}

ojson
config_json(const PipelineConfig &cfg, std::string_view mode)
{
	ojson j;
	std::istringstream in(cfg.canonical());
	for(std::string line; std::getline(in, line); )
	{
		const auto eq(line.find('='));
		j[line.substr(0, eq)] = line.substr(eq + 1);
	}
	j["mode"] = mode;
	j["hash"] = cfg.hash();
	return j;
}

int
cmd_eval(Context &ctx, const std::string &out, bool no_hints)
{
	auto &cfg(ctx.cfg);
	const auto rt(load_runtime(ctx, !no_hints));
	tag_log(*ctx.log, cfg);   // paths resolved from the index change the hash
	const auto examples(load_eval_set(ctx));
	const auto pipeline(make_pipeline(cfg, rt, open_lm(cfg, rt.tokenizer)));

	const auto mode(no_hints ? HintMode::none : HintMode::retrieve);
	const auto workers(resolve_workers(cfg));
	ctx.log->info("eval: {} questions, {} workers, {}", examples.size(), workers, no_hints ? "no hints" : "hints");
	const auto report(run_eval(pipeline, examples, cfg.decode(), mode, EvalOptions{workers}));

	const auto errors(std::count_if(report.per_question.begin(), report.per_question.end(), [](const auto &q)
	{
		return q.error.has_value();
	}));
	if(errors)
		ctx.log->warn("eval: {} questions failed", errors);

	const auto json(report_to_json(report, config_json(cfg, no_hints ? "no-hints" : "hints").dump()));
	if(out.empty())
		ctx.out << json;
	else
		write_text(out, json);

	ctx.out << summary_line(report) << '\n';
	return 0;
}

int
cmd_grid(Context &ctx, const std::vector<std::string> &cell_specs, const std::vector<std::string> &embeddings, const std::string &out)
{
	auto &cfg(ctx.cfg);

	std::vector<std::pair<std::string, std::string>> sources;   // name, index path
	if(!cfg.index.empty())
		sources.emplace_back("", cfg.index);
	for(const auto &e : embeddings)
	{
		const auto eq(e.find('='));
		if(eq == std::string::npos || eq == 0)
			throw UsageError("--embedding must look like NAME=INDEX, got '" + e + "'");
		sources.emplace_back(e.substr(0, eq), e.substr(eq + 1));
	}
	for(const auto &[name, path] : sources)
		require_file(path, "index");

	const auto examples_cfg(cfg);
	std::vector<Runtime> runtimes;
	std::vector<std::string> names;
	std::shared_ptr<const Tokenizer> tokenizer;
	for(const auto &[name, path] : sources)
	{
		Context sub{examples_cfg, ctx.log, ctx.out};
		sub.cfg.index = path;
		sub.cfg.pool.clear();
		runtimes.push_back(load_runtime(sub, true, tokenizer));
		tokenizer = runtimes.back().tokenizer;
		names.push_back(name.empty() ? runtimes.back().embedder : name);
		if(cfg.pool.empty())
			cfg.pool = sub.cfg.pool;
	}
	if(runtimes.empty())
		runtimes.push_back(load_runtime(ctx, false)), names.push_back("none");

	std::vector<GridCell> cells;
	for(const auto &c : cell_specs)
		cells.push_back(parse_grid_cell(c));
	if(cells.empty())
	{
		cells.push_back({"none", 0.0});
		if(names.front() != "none")
			for(const double a : {0.0, 0.2, 0.7})
				cells.push_back({names.front(), a});
	}

	const auto examples(load_eval_set(ctx));
	const auto lm(open_lm(cfg, runtimes.front().tokenizer));

	std::vector<HintedPipeline> pipelines;
	pipelines.reserve(runtimes.size());
	std::vector<std::pair<std::string, std::pair<const QaPipeline *, std::size_t>>> named;
	for(std::size_t i = 0; i < runtimes.size(); ++i)
	{
		pipelines.push_back(make_pipeline(cfg, runtimes[i], lm));
		named.push_back({names[i], {&pipelines.back(), runtimes[i].dim}});
	}

	const auto rows(experiment_grid(named, examples, cfg.decode(), cells, EvalOptions{resolve_workers(cfg)}));
	const auto table(grid_table(rows));
	if(!out.empty())
		write_text(out, table);
	ctx.out << table;
	return 0;
}

int
cmd_fetch_table(Context &ctx, const std::string &out)
{
	const auto &cfg(ctx.cfg);
	const auto url(cfg.lm.empty() ? std::string(std::getenv("HINTPIPE_LM_URL") ? std::getenv("HINTPIPE_LM_URL") : "") : cfg.lm);
	if(url.empty() || url.starts_with("mock:"))
		throw UsageError("fetch-table needs an LM service URL");

	const auto table(fetch_embedding_table(url, out));
	ctx.log->info("fetch-table: {} x {} written to {}", table.rows(), table.dim(), out);
	return 0;
}

int
cmd_parity(Context &ctx, const std::string &corpus)
{
	const auto &cfg(ctx.cfg);
	require_file(corpus, "corpus");
	if(cfg.lm.empty() || cfg.lm.starts_with("mock:"))
		throw UsageError("parity needs an LM service URL");

	const auto tokenizer(load_tokenizer(cfg, *ctx.log));
	std::istringstream in(read_file(corpus));
	std::size_t total(0), matched(0);
	for(std::string line; std::getline(in, line); ++total)
	{
		if(tokenizer->tokenize(line) == remote_tokenize(cfg.lm, line))
			++matched;
		else
			ctx.log->warn("tokenizer mismatch on line {}", total + 1);
	}

	ctx.out << "parity=" << matched << '/' << total << '\n';
	return matched == total ? 0 : 2;
}

} // namespace

int
run_command(const std::vector<std::string> &args, std::ostream &out, std::ostream &err)
{
	CLI::App app{"Answer questions with a small language model, steered by retrieved hint sentences.", "hintpipe"};
	app.require_subcommand(1);
	app.fallthrough();

	std::string config_path;
	std::string log_level("info");
	app.add_option("--config", config_path, "key = value settings file; flags override it");
	app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

	std::map<std::string, std::string> overrides;
	const auto setting([&overrides](CLI::App *sub, const std::string &flags, const std::string &key, const std::string &help)
	{
		sub->add_option_function<std::string>(flags, [&overrides, key](const std::string &v)
		{
			overrides[key] = v;
		}, help);
	});

	const auto lm_settings([&](CLI::App *sub)
	{
		setting(sub, "--lm", "lm", "LM service URL or mock:<script.json>");
		setting(sub, "--top-k", "top_k", "request only the k most likely tokens per step (0: full vocabulary)");
		setting(sub, "--alpha", "alpha", "length bias added per answer token");
		setting(sub, "--top-p", "top_p", "nucleus mass");
		setting(sub, "-n,--n,--n-candidates", "n_candidates", "distinct answers to sample");
		setting(sub, "--max-answer-tokens", "max_answer_tokens", "length limit per answer");
		setting(sub, "--seed", "seed", "random seed");
		setting(sub, "--hint-budget", "hint_budget", "hint tokens (default: half the context window)");
		setting(sub, "--stoplist", "stoplist", "file with one rejected answer per line");
	});
	const auto index_settings([&](CLI::App *sub)
	{
		setting(sub, "--index", "index", "index manifest");
		setting(sub, "--pool", "pool", "sentence pool");
		setting(sub, "--matrix", "matrix", "sentence matrix (instead of --index)");
		setting(sub, "--vocab", "vocab", "tokenizer vocab.json");
		setting(sub, "--merges", "merges", "tokenizer merges.txt");
	});

	std::string out_path, format("jsonl"), question, corpus;
	std::size_t k(20);
	bool no_shift(false), no_hints(false);
	std::vector<std::string> cells, embeddings;

	auto *ingest(app.add_subcommand("ingest", "split the pages referenced by the examples into a sentence pool"));
	setting(ingest, "--examples", "examples", "examples file");
	setting(ingest, "--documents", "documents", "documents file");
	setting(ingest, "--vocab", "vocab", "tokenizer vocab.json");
	setting(ingest, "--merges", "merges", "tokenizer merges.txt");
	ingest->add_option("--format", format, "examples format")->capture_default_str();
	ingest->add_option("--out", out_path, "pool output path")->required();

	auto *embed(app.add_subcommand("embed", "embed every pool sentence"));
	setting(embed, "--pool", "pool", "sentence pool");
	setting(embed, "--examples", "examples", "questions to embed (default: <pool>.examples.jsonl)");
	setting(embed, "--vocab", "vocab", "tokenizer vocab.json");
	setting(embed, "--merges", "merges", "tokenizer merges.txt");
	setting(embed, "--emb-table", "emb_table", "token embedding table (EMB1)");
	setting(embed, "--a", "a", "SIF smoothing constant");
	setting(embed, "--remote", "remote", "use a remote sentence embedder at this URL instead of SIF");
	embed->add_option("--out", out_path, "matrix output path")->required();

	auto *index(app.add_subcommand("index", "build a searchable index from a sentence matrix"));
	setting(index, "--matrix", "matrix", "sentence matrix");
	index->add_flag("--no-shift", no_shift, "do not shift questions toward sentences");
	index->add_option("--out", out_path, "index manifest output path")->required();

	auto *search(app.add_subcommand("search", "list the sentences closest to a question"));
	index_settings(search);
	search->add_option("--question", question, "question text")->required();
	search->add_option("-k,--k", k, "number of results")->capture_default_str();

	auto *prompt(app.add_subcommand("prompt", "print the prompt built for a question"));
	index_settings(prompt);
	setting(prompt, "--lm", "lm", "LM service URL or mock:<script.json> (for its context window)");
	setting(prompt, "--context-window", "context_window", "context window when no LM is given");
	setting(prompt, "--hint-budget", "hint_budget", "hint tokens (default: half the context window)");
	prompt->add_option("--question", question, "question text")->required();
	prompt->add_flag("--no-hints", no_hints, "render the prompt without hints");

	auto *ask(app.add_subcommand("ask", "answer one question and print the ranked candidates"));
	index_settings(ask);
	lm_settings(ask);
	ask->add_option("--question", question, "question text")->required();
	ask->add_flag("--no-hints", no_hints, "do not retrieve hints");

	auto *eval(app.add_subcommand("eval", "answer every evaluation question and score exact match"));
	index_settings(eval);
	lm_settings(eval);
	setting(eval, "--examples", "examples", "examples (default: <pool>.examples.jsonl)");
	setting(eval, "--workers", "workers", "parallel questions (0: logical cores, capped by the LM pool)");
	eval->add_flag_function("--exclude-own-doc", [&overrides](std::int64_t)
	{
		overrides["exclude_own_doc"] = "true";
	}, "never hint with sentences from the question's own page");
	eval->add_flag("--no-hints", no_hints, "baseline without hints");
	eval->add_option("--out", out_path, "report output path (default: stdout)");

	auto *grid(app.add_subcommand("grid", "evaluate a grid of embedding and alpha settings"));
	index_settings(grid);
	lm_settings(grid);
	setting(grid, "--examples", "examples", "examples (default: <pool>.examples.jsonl)");
	setting(grid, "--workers", "workers", "parallel questions");
	grid->add_option("--cell", cells, "EMBEDDING:ALPHA, repeatable; EMBEDDING is none or an index name");
	grid->add_option("--embedding", embeddings, "NAME=INDEX, repeatable");
	grid->add_option("--out", out_path, "table output path");

	auto *fetch(app.add_subcommand("fetch-table", "download the token embedding table from the LM service"));
	setting(fetch, "--lm", "lm", "LM service URL");
	fetch->add_option("--out", out_path, "EMB1 output path")->required();

	auto *parity(app.add_subcommand("parity", "compare local tokenization with the LM service"));
	setting(parity, "--lm", "lm", "LM service URL");
	setting(parity, "--vocab", "vocab", "tokenizer vocab.json");
	setting(parity, "--merges", "merges", "tokenizer merges.txt");
	parity->add_option("--corpus", corpus, "text file, one sample per line")->required();

	std::vector<const char *> argv;
	if(args.empty())
		argv.push_back("hintpipe");
	for(const auto &a : args)
		argv.push_back(a.c_str());

	try
	{
		app.parse(int(argv.size()), argv.data());
	}
	catch(const CLI::ParseError &e)
	{
		return app.exit(e, out, err) == 0 ? 0 : 1;
	}

	std::shared_ptr<spdlog::logger> log;
	try
	{
		PipelineConfig cfg;
		if(!config_path.empty())
			cfg.merge_file(config_path);
		for(const auto &[key, value] : overrides)
			cfg.set(key, value);

		const auto level(spdlog::level::from_str(log_level));
		if(level == spdlog::level::off && log_level != "off")
			throw UsageError("unknown log level: " + log_level);

		log = std::make_shared<spdlog::logger>("hintpipe", std::make_shared<spdlog::sinks::ostream_sink_mt>(err));
		tag_log(*log, cfg);
		log->set_level(level);

		Context ctx{std::move(cfg), log, out};
		if(*ingest)
			return cmd_ingest(ctx, format, out_path);
		if(*embed)
			return cmd_embed(ctx, out_path);
		if(*index)
			return cmd_index(ctx, out_path, no_shift);
		if(*search)
			return cmd_search(ctx, question, k);
		if(*prompt)
			return cmd_prompt(ctx, question, no_hints);
		if(*ask)
			return cmd_ask(ctx, question, no_hints);
		if(*eval)
			return cmd_eval(ctx, out_path, no_hints);
		if(*grid)
			return cmd_grid(ctx, cells, embeddings, out_path);
		if(*fetch)
			return cmd_fetch_table(ctx, out_path);
		if(*parity)
			return cmd_parity(ctx, corpus);
		return 1;
	}
	catch(const UsageError &e)
	{
		err << "error: " << e.what() << '\n';
		return 1;
	}
	catch(const std::exception &e)
	{
		if(log)
			log->error("{}", e.what());
		else
			err << "error: " << e.what() << '\n';
		return 2;
	}
}

} // namespace hintpipe
