#pragma once

#include "hintpipe/lm.hpp"
#include "hintpipe/tokenizer.hpp"

#include <httplib.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <thread>

namespace test {

inline std::filesystem::path
data_dir()
{
	return HINTPIPE_TEST_DATA;
}

inline std::shared_ptr<const hintpipe::Tokenizer>
tiny_tokenizer()
{
	static const auto tok(std::make_shared<const hintpipe::Tokenizer>(
		hintpipe::Tokenizer::from_files(data_dir() / "tiny_vocab.json", data_dir() / "tiny_merges.txt")));
	return tok;
}

inline std::shared_ptr<const hintpipe::Tokenizer>
byte_tokenizer()
{
	static const auto tok(std::make_shared<const hintpipe::Tokenizer>(hintpipe::Tokenizer::byte_level()));
	return tok;
}

/// Removed with its contents on destruction.
class TempDir
{
  public:
	TempDir()
	{
		std::random_device rd;
		path_ = std::filesystem::temp_directory_path() / ("hintpipe-test-" + std::to_string(rd()) + std::to_string(rd()));
		std::filesystem::create_directories(path_);
	}

	~TempDir()
	{
		std::error_code ec;
		std::filesystem::remove_all(path_, ec);
	}

	TempDir(const TempDir &) = delete;
	TempDir &operator=(const TempDir &) = delete;

	std::filesystem::path operator/(const std::string &name) const { return path_ / name; }
	const std::filesystem::path &path() const { return path_; }

  private:
	std::filesystem::path path_;
};

/// Distribution computed by a callback from the context.
class FunctionLm : public hintpipe::LanguageModel
{
  public:
	using Fn = std::function<std::vector<double>(std::span<const hintpipe::TokenId>)>;

	FunctionLm(hintpipe::LmInfo info, Fn fn)
	:info_{std::move(info)}
	,fn_{std::move(fn)}
	{}

	hintpipe::LmInfo info() const override { return info_; }

  protected:
	hintpipe::TokenDistribution distribution(std::span<const hintpipe::TokenId> context) const override
	{
		return hintpipe::TokenDistribution{fn_(context), false};
	}

  private:
	hintpipe::LmInfo info_;
	Fn fn_;
};

/// httplib server on an ephemeral local port, running on its own thread.
class StubServer
{
  public:
	StubServer()
	{
		port_ = server_.bind_to_any_port("127.0.0.1");
	}

	~StubServer()
	{
		server_.stop();
		if(thread_.joinable())
			thread_.join();
	}

	httplib::Server &server() { return server_; }

	void start()
	{
		thread_ = std::thread([this] { server_.listen_after_bind(); });
		server_.wait_until_ready();
	}

	std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  private:
	httplib::Server server_;
	int port_{0};
	std::thread thread_;
};

} // namespace test
