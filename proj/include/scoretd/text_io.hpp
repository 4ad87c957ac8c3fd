#pragma once

#include "error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace scoretd::text_io {

/// Exact textual form of a double ("0x1.8p+1"). Parsing it back is bit-exact.
inline std::string hex(double v)
{
    char buf[64];
    char* p = buf;
    if (std::signbit(v)) {
        *p++ = '-';
        v = -v;
    }
    *p++ = '0';
    *p++ = 'x';
    const auto res = std::to_chars(p, buf + sizeof(buf), v, std::chars_format::hex);
    return std::string(buf, res.ptr);
}

/// Parse a double written either by hex() or as plain decimal.
inline double parse_double(std::string_view tok)
{
    bool neg = false;
    std::string_view body = tok;
    if (!body.empty() && (body.front() == '-' || body.front() == '+')) {
        neg = body.front() == '-';
        body.remove_prefix(1);
    }
    double v = 0.0;
    std::from_chars_result res{};
    if (body.size() > 2 && body[0] == '0' && (body[1] == 'x' || body[1] == 'X')) {
        body.remove_prefix(2);
        res = std::from_chars(body.data(), body.data() + body.size(), v, std::chars_format::hex);
    } else {
        res = std::from_chars(body.data(), body.data() + body.size(), v);
    }
    if (res.ec != std::errc{} || res.ptr != body.data() + body.size() || body.empty()) {
        throw Error(ErrorKind::io, "malformed number '" + std::string(tok) + "'");
    }
    return neg ? -v : v;
}

inline long long parse_int(std::string_view tok)
{
    long long v = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size() || tok.empty()) {
        throw Error(ErrorKind::io, "malformed integer '" + std::string(tok) + "'");
    }
    return v;
}

inline std::vector<std::string> split_ws(const std::string& line)
{
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) {
        out.push_back(tok);
    }
    return out;
}

inline std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::io, "cannot open '" + path + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::io, "cannot open '" + path + "' for writing");
    }
    out << content;
    if (!out) {
        throw Error(ErrorKind::io, "write to '" + path + "' failed");
    }
}

/// Line cursor over an in-memory file; errors carry the line number.
class LineReader {
public:
    explicit LineReader(std::string text, std::string source) : in_(std::move(text)), source_(std::move(source)) {}

    bool next(std::string& line)
    {
        if (!std::getline(in_, line)) {
            return false;
        }
        ++lineno_;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        return true;
    }

    std::string expect_line(std::string_view what)
    {
        std::string line;
        if (!next(line)) {
            fail("unexpected end of file, expected " + std::string(what));
        }
        return line;
    }

    [[noreturn]] void fail(const std::string& msg) const
    {
        throw Error(ErrorKind::io, source_ + ":" + std::to_string(lineno_) + ": " + msg);
    }

private:
    std::istringstream in_;
    std::string source_;
    int lineno_ = 0;
};

}  // namespace scoretd::text_io
