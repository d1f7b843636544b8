#include "httpwatt/http.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "httpwatt/error.hpp"
#include "httpwatt/util.hpp"

namespace httpwatt::http {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool iequals(std::string_view a, std::string_view b) { return lower(a) == lower(b); }

std::optional<std::uint64_t> to_u64(std::string_view s, int base = 10) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v, base);
  if (ec != std::errc() || p == s.data()) return std::nullopt;
  return v;
}

}  // namespace

std::string Url::path() const { return target.substr(0, target.find('?')); }

Url parse_url(const std::string& text) {
  const std::string scheme = "http://";
  if (text.rfind("https://", 0) == 0) throw Error(Errc::InvalidArgument, "https is not supported: " + text);
  if (text.rfind(scheme, 0) != 0) throw Error(Errc::InvalidArgument, "not an http:// URL: " + text);
  Url u;
  const auto rest = text.substr(scheme.size());
  const auto slash = rest.find('/');
  const auto authority = rest.substr(0, slash);
  u.target = slash == std::string::npos ? "/" : rest.substr(slash);
  if (authority.empty()) throw Error(Errc::InvalidArgument, "URL has no host: " + text);
  const auto colon = authority.rfind(':');
  if (colon != std::string::npos && authority.find(']') == std::string::npos) {
    u.host = authority.substr(0, colon);
    const auto port = to_u64(authority.substr(colon + 1));
    if (!port || *port == 0 || *port > 65535) throw Error(Errc::InvalidArgument, "bad port in URL: " + text);
    u.port = static_cast<int>(*port);
  } else {
    u.host = authority;
  }
  if (u.host.empty()) throw Error(Errc::InvalidArgument, "URL has no host: " + text);
  return u;
}

std::string format_request(std::string_view method, const Url& url,
                           const std::vector<std::pair<std::string, std::string>>& headers) {
  std::string r;
  r.reserve(128);
  r.append(method).append(" ").append(url.target).append(" HTTP/1.1\r\nHost: ").append(url.host);
  if (url.port != 80) r.append(":").append(std::to_string(url.port));
  r.append("\r\n");
  bool has_connection = false;
  for (const auto& [k, v] : headers) {
    has_connection = has_connection || iequals(k, "connection");
    r.append(k).append(": ").append(v).append("\r\n");
  }
  if (!has_connection) r.append("Connection: keep-alive\r\n");
  r.append("\r\n");
  return r;
}

std::optional<std::string> ResponseHead::header(std::string_view name) const {
  const auto key = lower(name);
  for (const auto& [k, v] : headers) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::optional<std::uint64_t> ResponseHead::content_length() const {
  if (auto v = header("content-length")) return to_u64(util::trim(*v));
  return std::nullopt;
}

bool ResponseHead::chunked() const {
  auto v = header("transfer-encoding");
  return v && lower(*v).find("chunked") != std::string::npos;
}

bool ResponseHead::keep_alive() const {
  const auto v = header("connection");
  if (v && lower(*v).find("close") != std::string::npos) return false;
  if (version_minor == 0) return v && lower(*v).find("keep-alive") != std::string::npos;
  return true;
}

std::optional<std::pair<std::uint64_t, std::uint64_t>> ResponseHead::content_range() const {
  auto v = header("content-range");
  if (!v) return std::nullopt;
  auto s = util::trim(*v);
  if (lower(s).rfind("bytes ", 0) != 0) return std::nullopt;
  s = s.substr(6);
  const auto dash = s.find('-');
  const auto slash = s.find('/');
  if (dash == std::string::npos || slash == std::string::npos || slash < dash) return std::nullopt;
  auto a = to_u64(s.substr(0, dash));
  auto b = to_u64(s.substr(dash + 1, slash - dash - 1));
  if (!a || !b || *b < *a) return std::nullopt;
  return std::make_pair(*a, *b);
}

std::optional<std::uint64_t> ResponseHead::content_range_total() const {
  auto v = header("content-range");
  if (!v) return std::nullopt;
  const auto slash = v->rfind('/');
  if (slash == std::string::npos) return std::nullopt;
  return to_u64(util::trim(v->substr(slash + 1)));
}

void ResponseParser::expect(bool head_only) {
  head_only_ = head_only;
  head_ = ResponseHead{};
  state_ = State::Head;
  remaining_ = 0;
  body_seen_ = 0;
}

void ResponseParser::parse_head(const std::string& text) {
  std::size_t pos = text.find("\r\n");
  const auto status_line = text.substr(0, pos);
  if (status_line.rfind("HTTP/1.", 0) != 0 || status_line.size() < 12) {
    throw Error(Errc::ProtocolError, "malformed status line: " + status_line.substr(0, 64));
  }
  head_.version_minor = status_line[7] - '0';
  const auto code = to_u64(std::string_view(status_line).substr(9, 3));
  if (!code) throw Error(Errc::ProtocolError, "malformed status code: " + status_line.substr(0, 64));
  head_.status = static_cast<int>(*code);
  while (pos != std::string::npos && pos + 2 < text.size()) {
    const auto next = text.find("\r\n", pos + 2);
    const auto line = text.substr(pos + 2, next == std::string::npos ? std::string::npos : next - pos - 2);
    pos = next;
    if (line.empty()) break;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw Error(Errc::ProtocolError, "malformed header line");
    head_.headers.emplace_back(lower(util::trim(line.substr(0, colon))), util::trim(line.substr(colon + 1)));
  }
}

void ResponseParser::after_head() {
  const int s = head_.status;
  if (head_only_ || (s >= 100 && s < 200) || s == 204 || s == 304) {
    state_ = State::Done;
    return;
  }
  if (head_.chunked()) {
    state_ = State::ChunkSize;
  } else if (auto len = head_.content_length()) {
    remaining_ = *len;
    state_ = remaining_ == 0 ? State::Done : State::Body;
  } else {
    state_ = State::UntilClose;
  }
}

std::size_t ResponseParser::feed(const char* data, std::size_t n, const BodyFn& on_body) {
  std::size_t used = 0;
  auto emit = [&](const char* p, std::size_t k) {
    body_seen_ += k;
    if (on_body && k) on_body(p, k);
  };
  while (used < n && state_ != State::Done) {
    switch (state_) {
      case State::Head: {
        const auto before = buf_.size();
        buf_.append(data + used, n - used);
        const auto end = buf_.find("\r\n\r\n");
        if (end == std::string::npos) {
          if (buf_.size() > 64 * 1024) throw Error(Errc::ProtocolError, "response head too large");
          used = n;
          break;
        }
        used += end + 4 - before;
        parse_head(buf_.substr(0, end + 2));
        buf_.clear();
        if (head_.status == 100) {  // interim response, the real one follows
          head_ = ResponseHead{};
          break;
        }
        after_head();
        break;
      }
      case State::Body: {
        const auto k = static_cast<std::size_t>(std::min<std::uint64_t>(remaining_, n - used));
        emit(data + used, k);
        used += k;
        remaining_ -= k;
        if (remaining_ == 0) state_ = State::Done;
        break;
      }
      case State::UntilClose:
        emit(data + used, n - used);
        used = n;
        break;
      case State::ChunkSize:
      case State::ChunkDataEnd:
      case State::Trailer: {
        const auto before = buf_.size();
        buf_.append(data + used, n - used);
        const auto eol = buf_.find("\r\n");
        if (eol == std::string::npos) {
          if (buf_.size() > 4096) throw Error(Errc::ProtocolError, "chunk framing line too long");
          used = n;
          break;
        }
        used += eol + 2 - before;
        const auto line = buf_.substr(0, eol);
        buf_.clear();
        if (state_ == State::ChunkDataEnd) {
          if (!line.empty()) throw Error(Errc::ProtocolError, "missing CRLF after chunk");
          state_ = State::ChunkSize;
        } else if (state_ == State::Trailer) {
          if (line.empty()) state_ = State::Done;
        } else {
          const auto size = to_u64(util::trim(line.substr(0, line.find(';'))), 16);
          if (!size) throw Error(Errc::ProtocolError, "bad chunk size");
          remaining_ = *size;
          state_ = remaining_ == 0 ? State::Trailer : State::ChunkData;
        }
        break;
      }
      case State::ChunkData: {
        const auto k = static_cast<std::size_t>(std::min<std::uint64_t>(remaining_, n - used));
        emit(data + used, k);
        used += k;
        remaining_ -= k;
        if (remaining_ == 0) state_ = State::ChunkDataEnd;
        break;
      }
      case State::Done: break;
    }
  }
  return used;
}

bool ResponseParser::finish_eof() {
  if (state_ == State::UntilClose) {
    state_ = State::Done;
    return true;
  }
  return false;
}

}  // namespace httpwatt::http
