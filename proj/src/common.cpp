#include "hintpipe/common.hpp"

#include <fstream>
#include <sstream>

namespace hintpipe {

void
atomic_write(const std::filesystem::path &path,
             const std::function<void(std::ostream &)> &writer,
             const bool binary)
{
	auto tmp(path);
	tmp += ".tmp";

	{
		std::ofstream out(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
		if(!out)
			throw Error("cannot open for writing: " + tmp.string());

		writer(out);
		out.flush();
		if(!out)
			throw Error("write failed: " + tmp.string());
	}

	std::error_code ec;
	std::filesystem::rename(tmp, path, ec);
	if(ec)
	{
		std::filesystem::remove(tmp);
		throw Error("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
	}
}

std::string
read_file(const std::filesystem::path &path)
{
	std::ifstream in(path, std::ios::binary);
	if(!in)
		throw Error("cannot open: " + path.string());

	std::ostringstream ss;
	ss << in.rdbuf();
	return ss.str();
}

std::string_view
trim(std::string_view s)
{
	constexpr std::string_view ws{" \t\n\r\f\v"};
	const auto b(s.find_first_not_of(ws));
	if(b == std::string_view::npos)
		return {};

	const auto e(s.find_last_not_of(ws));
	return s.substr(b, e - b + 1);
}

} // namespace hintpipe
