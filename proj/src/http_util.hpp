#pragma once

#include "hintpipe/common.hpp"

#include <httplib.h>

#include <chrono>
#include <memory>
#include <semaphore>
#include <string>
#include <thread>

namespace hintpipe::detail {

/// Non-retryable failure (the server understood and refused the request).
class RejectedError : public Error
{
  public:
	using Error::Error;
};

struct Endpoint
{
	std::string origin;   // scheme://host[:port]
	std::string prefix;   // path prefix without trailing slash
};

inline Endpoint
parse_endpoint(std::string_view url)
{
	const auto scheme(url.find("://"));
	if(scheme == std::string_view::npos)
		throw Error("endpoint must look like http://host:port, got: " + std::string(url));

	const auto slash(url.find('/', scheme + 3));
	Endpoint ep{std::string(url.substr(0, slash)), {}};
	if(slash != std::string_view::npos)
	{
		ep.prefix = url.substr(slash);
		while(!ep.prefix.empty() && ep.prefix.back() == '/')
			ep.prefix.pop_back();
	}
	return ep;
}

inline std::unique_ptr<httplib::Client>
make_client(const Endpoint &ep, std::chrono::seconds timeout)
{
	auto cli(std::make_unique<httplib::Client>(ep.origin));
	cli->set_connection_timeout(timeout);
	cli->set_read_timeout(timeout);
	cli->set_write_timeout(timeout);
	return cli;
}

/// Throws for transport failures and non-2xx statuses. 4xx is reported as
/// RejectedError so callers skip retrying.
inline httplib::Response
check_response(httplib::Result res, std::string_view what)
{
	if(!res)
		throw Error(std::string(what) + ": transport error: " + httplib::to_string(res.error()));

	if(res->status >= 400 && res->status < 500)
		throw RejectedError(std::string(what) + ": HTTP " + std::to_string(res->status) + ": " + res->body);

	if(res->status < 200 || res->status >= 300)
		throw Error(std::string(what) + ": HTTP " + std::to_string(res->status));

	return std::move(*res);
}

template<class F>
auto
with_retries(std::string_view what, int retries, std::chrono::milliseconds backoff, F &&f)
{
	for(int attempt = 0;; ++attempt)
	{
		try
		{
			return f();
		}
		catch(const RejectedError &)
		{
			throw;
		}
		catch(const Error &e)
		{
			if(attempt >= retries)
				throw Error(std::string(what) + ": failed after " + std::to_string(retries) + " retries: " + e.what());

			std::this_thread::sleep_for(backoff * (1 << attempt));
		}
	}
}

/// Bounds the number of concurrent requests a client issues.
class InFlightGate
{
  public:
	explicit InFlightGate(std::size_t limit)
	:sem_{static_cast<std::ptrdiff_t>(limit == 0 ? 1 : limit)}
	{
	}

	struct Permit
	{
		InFlightGate *gate;
		~Permit() { gate->sem_.release(); }
	};

	Permit acquire()
	{
		sem_.acquire();
		return Permit{this};
	}

  private:
	std::counting_semaphore<> sem_;
};

} // namespace hintpipe::detail
