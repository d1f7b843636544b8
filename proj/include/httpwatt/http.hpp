#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace httpwatt::http {

struct Url {
  std::string host;
  int port = 80;
  std::string target = "/";  // path plus query

  /// host:port, the key for per-host state.
  std::string authority() const { return host + ":" + std::to_string(port); }
  std::string path() const;  // target without the query string
};

/// http://host[:port]/path only; https is rejected.
Url parse_url(const std::string& text);

std::string format_request(std::string_view method, const Url& url,
                           const std::vector<std::pair<std::string, std::string>>& headers = {});

struct ResponseHead {
  int status = 0;
  int version_minor = 1;
  std::vector<std::pair<std::string, std::string>> headers;  // names lower-cased

  std::optional<std::string> header(std::string_view name) const;
  std::optional<std::uint64_t> content_length() const;
  bool chunked() const;
  bool keep_alive() const;
  /// Parses `Content-Range: bytes a-b/total`.
  std::optional<std::pair<std::uint64_t, std::uint64_t>> content_range() const;
  std::optional<std::uint64_t> content_range_total() const;
};

/// Incremental HTTP/1.1 response parser for one connection. Responses are
/// consumed back to back, so pipelined replies parse in order.
class ResponseParser {
 public:
  using BodyFn = std::function<void(const char* data, std::size_t n)>;

  /// Prepares for the next response; `head_only` for replies to HEAD.
  void expect(bool head_only);

  /// Consumes bytes; returns how many were used. Stops right after the end
  /// of the current response so the caller can expect() the next one.
  std::size_t feed(const char* data, std::size_t n, const BodyFn& on_body);
  /// Signals EOF; completes a close-delimited body. Returns true if that
  /// finished the response.
  bool finish_eof();

  bool head_done() const noexcept { return state_ > State::Head; }
  bool complete() const noexcept { return state_ == State::Done; }
  bool idle() const noexcept { return state_ == State::Head && buf_.empty(); }
  const ResponseHead& head() const noexcept { return head_; }
  std::uint64_t body_bytes() const noexcept { return body_seen_; }

 private:
  enum class State { Head, Body, ChunkSize, ChunkData, ChunkDataEnd, Trailer, UntilClose, Done };
  void parse_head(const std::string& text);
  void after_head();

  State state_ = State::Head;
  bool head_only_ = false;
  std::string buf_;
  ResponseHead head_;
  std::uint64_t remaining_ = 0;
  std::uint64_t body_seen_ = 0;
};

}  // namespace httpwatt::http
