#pragma once

#include "hintpipe/eval.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hintpipe {

class QaPipeline;

/// Bad invocation: unknown option, missing input, out-of-range value.
class UsageError : public Error
{
  public:
	using Error::Error;
};

/// Settings shared by every command. Read from a key=value file, then
/// overridden by command-line flags of the same name.
struct PipelineConfig
{
	std::string pool;
	std::string matrix;
	std::string index;
	std::string examples;
	std::string documents;
	std::string stoplist;
	std::string vocab;
	std::string merges;
	std::string emb_table;
	std::string lm;
	std::string remote;

	double a{1e-3};
	double alpha{0.0};
	double top_p{0.9};
	std::size_t n_candidates{100};
	std::uint32_t max_answer_tokens{24};
	std::uint64_t seed{0};
	std::optional<std::uint32_t> hint_budget;
	std::uint32_t context_window{1024};   // used only when no LM is consulted
	std::uint32_t top_k{0};
	std::size_t workers{0};               // 0: logical cores, capped by the LM pool
	bool exclude_own_doc{false};

	void set(const std::string &key, const std::string &value);
	void merge_file(const std::filesystem::path &path);

	/// Sorted key=value lines of every setting that can change results
	/// (everything but workers).
	std::string canonical() const;
	/// 16 hex digits of FNV-1a over canonical().
	std::string hash() const;

	DecodeConfig decode() const;
};

struct GridCell
{
	std::string embedding;   // "none" disables hints
	double alpha{0};
};

struct GridRow
{
	std::string embedding;
	std::string dim;
	double alpha{0};
	EvalReport report;
};

/// Runs one evaluation per cell. `pipelines` maps embedding names to a
/// pipeline and its embedding width; "none" cells use the first pipeline
/// with hints disabled.
std::vector<GridRow> experiment_grid(const std::vector<std::pair<std::string, std::pair<const QaPipeline *, std::size_t>>> &pipelines,
                                     const std::vector<EvalExample> &examples,
                                     const DecodeConfig &base,
                                     const std::vector<GridCell> &cells,
                                     const EvalOptions &options = {});

GridCell parse_grid_cell(std::string_view text);

/// Embedding, dim, alpha, Score table as TSV.
std::string grid_table(const std::vector<GridRow> &rows);

/// Entry point of the `hintpipe` tool. Returns 0 on success, 1 on usage
/// errors, 2 on runtime errors.
int run_command(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace hintpipe
