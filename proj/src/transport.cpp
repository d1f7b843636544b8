#include "httpwatt/transport.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <unistd.h>

#include <openssl/evp.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "httpwatt/error.hpp"
#include "httpwatt/ranges.hpp"

namespace httpwatt::transport {

using SteadyClock = std::chrono::steady_clock;

namespace {

double seconds_since(SteadyClock::time_point t0) {
  return std::chrono::duration<double>(SteadyClock::now() - t0).count();
}

// Blocking connect with a timeout; the socket is left non-blocking.
int open_connection(const http::Url& url, double timeout_s, std::string& why) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(url.port);
  if (int rc = ::getaddrinfo(url.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    why = std::string("resolve ") + url.host + ": " + ::gai_strerror(rc);
    return -1;
  }
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_NONBLOCK | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      rc = ::poll(&p, 1, static_cast<int>(timeout_s * 1000));
      int err = 0;
      socklen_t len = sizeof err;
      if (rc == 1 && ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) == 0 && err == 0) {
        rc = 0;
      } else {
        errno = rc == 0 ? ETIMEDOUT : (err ? err : errno);
        rc = -1;
      }
    }
    if (rc == 0) break;
    why = "connect " + url.authority() + ": " + std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd >= 0) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  return fd;
}

// One request, waits for the response head only; the body is abandoned.
http::ResponseHead request_head(const http::Url& url, const std::string& method,
                                const std::vector<std::pair<std::string, std::string>>& headers, double timeout_s) {
  std::string why;
  int fd = open_connection(url, timeout_s, why);
  if (fd < 0) throw Error(Errc::Unreachable, why);
  const std::string req = http::format_request(method, url, headers);
  http::ResponseParser parser;
  parser.expect(method == "HEAD");
  std::size_t off = 0;
  char buf[16384];
  const auto t0 = SteadyClock::now();
  try {
    while (!parser.head_done()) {
      if (seconds_since(t0) > timeout_s) throw Error(Errc::Unreachable, "timed out probing " + url.authority());
      pollfd p{fd, static_cast<short>(POLLIN | (off < req.size() ? POLLOUT : 0)), 0};
      if (::poll(&p, 1, 100) <= 0) continue;
      if (off < req.size() && (p.revents & POLLOUT)) {
        ssize_t n = ::send(fd, req.data() + off, req.size() - off, MSG_NOSIGNAL);
        if (n > 0) off += static_cast<std::size_t>(n);
      }
      if (p.revents & (POLLIN | POLLHUP | POLLERR)) {
        ssize_t n = ::recv(fd, buf, sizeof buf, 0);
        if (n == 0) {
          if (!parser.head_done()) throw Error(Errc::ProtocolError, "connection closed before response head");
          break;
        }
        if (n < 0) {
          if (errno == EAGAIN || errno == EINTR) continue;
          throw Error(Errc::Unreachable, std::string("recv: ") + std::strerror(errno));
        }
        std::size_t used = 0;
        while (used < static_cast<std::size_t>(n) && !parser.complete()) {
          used += parser.feed(buf + used, static_cast<std::size_t>(n) - used, [](const char*, std::size_t) {});
          if (parser.head_done()) break;
        }
      }
    }
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  return parser.head();
}

bool advertises_ranges(const http::ResponseHead& h) {
  auto ar = h.header("accept-ranges");
  return ar && ar->find("bytes") != std::string::npos;
}

}  // namespace

Capabilities probe_capabilities(const std::string& url_text, double timeout_s) {
  const http::Url url = http::parse_url(url_text);
  Capabilities caps;
  http::ResponseHead h = request_head(url, "HEAD", {}, timeout_s);
  if (h.status == 405 || h.status == 501) {
    // HEAD refused: learn what we can from the first byte of a GET
    caps.head_allowed = false;
    h = request_head(url, "GET", {{"Range", "bytes=0-0"}}, timeout_s);
    if (h.status == 206) {
      caps.range_supported = true;
      caps.size = h.content_range_total();
    } else if (h.status / 100 == 2) {
      caps.range_supported = advertises_ranges(h);
      caps.size = h.content_length();
    }
  } else if (h.status / 100 == 2) {
    caps.range_supported = advertises_ranges(h);
    caps.size = h.content_length();
  }
  caps.keep_alive = h.keep_alive();
  return caps;
}

ResolvedDataset resolve_manifest(const std::vector<dataset::ManifestEntry>& manifest, double timeout_s) {
  ResolvedDataset out;
  for (const auto& e : manifest) {
    const http::Url url = http::parse_url(e.url);
    const std::string key = url.authority();
    std::optional<std::uint64_t> size = e.size;
    auto it = out.hosts.find(key);
    if (it == out.hosts.end()) {
      Capabilities caps = probe_capabilities(e.url, timeout_s);
      if (!size) size = caps.size;
      out.hosts.emplace(key, caps);
    } else if (!size) {
      size = probe_capabilities(e.url, timeout_s).size;
    }
    if (size && *size > 0) {
      out.files.push_back({e.url, *size});
    } else {
      out.unknown_size.push_back(e.url);
      out.warnings.push_back("size of " + e.url + " unknown; fetched whole with the Medium group");
    }
  }
  return out;
}

std::string destination_path(const std::string& root, const std::string& url_text) {
  const http::Url url = http::parse_url(url_text);
  std::filesystem::path p(root);
  const std::string path = url.path();
  std::size_t i = 0;
  bool any = false;
  while (i <= path.size()) {
    std::size_t j = path.find('/', i);
    if (j == std::string::npos) j = path.size();
    const std::string seg = path.substr(i, j - i);
    if (seg == "..") throw Error(Errc::InvalidArgument, "URL path escapes the output root: " + url_text);
    if (!seg.empty() && seg != ".") {
      p /= seg;
      any = true;
    }
    i = j + 1;
  }
  if (!any || path.back() == '/') p /= "index.html";
  return p.string();
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::FileFailed, "cannot read " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

// ---------------------------------------------------------------------------

struct FileJob {
  std::string url;
  http::Url where;
  std::optional<std::uint64_t> size;
  SizeClass cls = SizeClass::Small;
  std::string dest;
};

struct Shared {
  SteadyClock::time_point start = SteadyClock::now();
  std::vector<FileJob> files;
  std::map<std::string, Capabilities> hosts;
  std::string output_root;
  bool verify = false;
  double io_timeout = 30.0;

  std::mutex mu;  // guards pending, no_pipeline, warned
  std::array<std::deque<int>, 3> pending;
  std::set<std::string> no_pipeline;
  std::set<std::string> warned_no_range;

  EventQueue<TransferEvent> events;
  std::atomic<int> peak_outstanding{0};

  double now() const { return seconds_since(start); }

  std::optional<int> take(SizeClass c) {
    std::lock_guard lock(mu);
    auto& q = pending[index_of(c)];
    if (q.empty()) return std::nullopt;
    int f = q.front();
    q.pop_front();
    return f;
  }
  bool has_pending(SizeClass c) {
    std::lock_guard lock(mu);
    return !pending[index_of(c)].empty();
  }
  bool pipelining_ok(const std::string& host) {
    std::lock_guard lock(mu);
    return no_pipeline.count(host) == 0;
  }
  // true if this call flipped the flag
  bool disable_pipelining(const std::string& host) {
    std::lock_guard lock(mu);
    return no_pipeline.insert(host).second;
  }
  bool first_no_range_warning(const std::string& host) {
    std::lock_guard lock(mu);
    return warned_no_range.insert(host).second;
  }
  Capabilities caps(const std::string& host) const {
    auto it = hosts.find(host);
    return it == hosts.end() ? Capabilities{} : it->second;
  }
  void emit(TransferEvent e) {
    e.timestamp = now();
    events.push(std::move(e));
  }
};

/// One channel: a worker thread owning up to `parallelism` connections.
/// Range j of every file rides connection j, so each connection carries at
/// most one request per file in flight and never more than `pipelining`.
class ChannelWorker {
 public:
  ChannelWorker(std::shared_ptr<Shared> shared, int id, SizeClass cls, TransferParams params)
      : sh_(std::move(shared)), id_(id), cls_(cls) {
    set_params(params);
    thread_ = std::thread([this] { run(); });
  }
  ~ChannelWorker() {
    abort_ = true;
    if (thread_.joinable()) thread_.join();
  }

  void set_params(const TransferParams& p) {
    pp_ = std::max(1, p.pipelining);
    p_ = std::max(1, p.parallelism);
  }
  void close() { closing_ = true; }
  bool closing() const { return closing_; }
  int id() const { return id_; }
  SizeClass cls() const { return cls_; }
  void join() {
    if (thread_.joinable()) thread_.join();
  }

 private:
  struct Req {
    int file = 0;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;  // 0 with whole && unknown size: read to the end
    bool whole = false;        // no Range header on the first attempt
    bool known = true;         // length is meaningful
    std::uint64_t done = 0;
    int failures = 0;
    bool discard = false;      // the file already failed; drain and drop
  };
  using ReqPtr = std::shared_ptr<Req>;

  struct Slot {
    int fd = -1;
    int unresolved = 0;
    bool failed = false;
    std::string error;
  };

  struct Conn {
    int fd = -1;
    std::string host;
    std::deque<ReqPtr> queue;  // [0, sent) on the wire, in order
    std::size_t sent = 0;
    std::string out;
    std::size_t out_off = 0;
    http::ResponseParser parser;
    bool armed = false;
    bool checked = false;       // response head validated
    bool bad_status = false;
    std::uint64_t body_base = 0;  // file offset of body byte 0
    std::uint64_t body_pos = 0;
    std::uint64_t progress_this_attempt = 0;
    int responses = 0;
    bool server_closing = false;
    SteadyClock::time_point last_io = SteadyClock::now();
  };

  void run();
  void refill();
  void issue(int file);
  void pump_sends(Conn& c);
  bool read_ready(Conn& c);
  bool on_head(Conn& c, Req& r, std::string& why);
  void on_body(Conn& c, Req& r, const char* data, std::size_t n, std::string& why);
  void finish_response(Conn& c);
  void drop(Conn& c, bool penalize, const std::string& why);
  void charge(const ReqPtr& r, const std::string& why);
  void fail_file(int file, const std::string& why);
  void resolve(int file);
  void finalize(int file);
  std::string range_header(const Req& r) const;

  std::shared_ptr<Shared> sh_;
  int id_;
  SizeClass cls_;
  std::atomic<int> pp_{1};
  std::atomic<int> p_{1};
  std::atomic<bool> closing_{false};
  std::atomic<bool> abort_{false};
  std::map<int, Slot> slots_;
  std::vector<Conn> conns_;
  std::thread thread_;
};

std::string ChannelWorker::range_header(const Req& r) const {
  const std::uint64_t from = r.offset + r.done;
  if (!r.known) return "bytes=" + std::to_string(from) + "-";
  return "bytes=" + std::to_string(from) + "-" + std::to_string(r.offset + r.length - 1);
}

void ChannelWorker::refill() {
  if (closing_) return;
  while (static_cast<int>(slots_.size()) < pp_) {
    auto f = sh_->take(cls_);
    if (!f) return;
    issue(*f);
  }
}

void ChannelWorker::issue(int file) {
  const FileJob& job = sh_->files[static_cast<std::size_t>(file)];
  Slot slot;
  try {
    std::filesystem::create_directories(std::filesystem::path(job.dest).parent_path());
  } catch (const std::exception& e) {
    slot.error = e.what();
  }
  slot.fd = ::open(job.dest.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (slot.fd < 0 || (job.size && ::ftruncate(slot.fd, static_cast<off_t>(*job.size)) != 0)) {
    std::string why = "cannot open " + job.dest + ": " + std::strerror(errno);
    if (slot.fd >= 0) ::close(slot.fd);
    sh_->emit({EventKind::FileFailed, 0, 0, file, id_, job.cls, why});
    return;
  }

  const std::string host = job.where.authority();
  const Capabilities caps = sh_->caps(host);
  std::vector<RangeTask> ranges;
  int p = p_;
  if (job.size && p > 1 && !caps.range_supported) {
    if (sh_->first_no_range_warning(host))
      sh_->emit({EventKind::Warning, 0, 0, file, id_, job.cls, host + " does not serve byte ranges; parallelism 1"});
    p = 1;
  }
  if (job.size) ranges = split_ranges(*job.size, p);
  else ranges.push_back({0, 0, 0});

  if (conns_.size() < ranges.size()) conns_.resize(ranges.size());
  slot.unresolved = static_cast<int>(ranges.size());
  slots_.emplace(file, slot);
  for (const auto& rt : ranges) {
    auto r = std::make_shared<Req>();
    r->file = file;
    r->offset = rt.offset;
    r->length = rt.length;
    r->known = job.size.has_value();
    r->whole = ranges.size() == 1;
    conns_[static_cast<std::size_t>(rt.index)].queue.push_back(r);
  }
}

void ChannelWorker::pump_sends(Conn& c) {
  if (c.queue.empty() && c.fd >= 0 && c.sent == 0 && c.out_off >= c.out.size()) return;
  // drop discarded requests that never hit the wire
  for (std::size_t i = c.sent; i < c.queue.size();) {
    if (c.queue[i]->discard) {
      int f = c.queue[i]->file;
      c.queue.erase(c.queue.begin() + static_cast<std::ptrdiff_t>(i));
      resolve(f);
    } else {
      ++i;
    }
  }
  if (c.sent >= c.queue.size()) return;
  const FileJob& next = sh_->files[static_cast<std::size_t>(c.queue[c.sent]->file)];
  const std::string host = next.where.authority();
  if (c.fd >= 0 && (c.host != host || c.server_closing)) {
    if (c.sent > 0) return;  // let the connection drain first
    drop(c, false, "switching host");
  }
  if (c.fd < 0) {
    std::string why;
    c.fd = open_connection(next.where, sh_->io_timeout, why);
    if (c.fd < 0) {
      sh_->emit({EventKind::ChannelError, 0, 0, c.queue[c.sent]->file, id_, cls_, why});
      charge(c.queue[c.sent], why);
      return;
    }
    c.host = host;
    c.responses = 0;
    c.server_closing = false;
    c.last_io = SteadyClock::now();
  }
  const bool pipelined = sh_->pipelining_ok(host);
  while (c.sent < c.queue.size()) {
    if (c.sent > 0 && !pipelined) break;
    const Req& r = *c.queue[c.sent];
    const FileJob& job = sh_->files[static_cast<std::size_t>(r.file)];
    if (job.where.authority() != c.host) break;
    std::vector<std::pair<std::string, std::string>> headers;
    if (!(r.whole && r.done == 0)) headers.emplace_back("Range", range_header(r));
    c.out += http::format_request("GET", job.where, headers);
    ++c.sent;
  }
  int peak = sh_->peak_outstanding.load();
  while (static_cast<int>(c.sent) > peak && !sh_->peak_outstanding.compare_exchange_weak(peak, static_cast<int>(c.sent))) {
  }
}

bool ChannelWorker::on_head(Conn& c, Req& r, std::string& why) {
  const auto& h = c.parser.head();
  c.checked = true;
  c.body_pos = 0;
  c.bad_status = false;
  if (h.status == 206) {
    auto cr = h.content_range();
    if (!cr) {
      why = "206 without Content-Range";
      return false;
    }
    c.body_base = cr->first;
    if (c.body_base > r.offset + r.done) {
      why = "server skipped bytes";
      return false;
    }
  } else if (h.status == 200) {
    c.body_base = 0;  // whole file; the requested slice is cut out of it
  } else {
    c.bad_status = true;
  }
  return true;
}

void ChannelWorker::on_body(Conn& c, Req& r, const char* data, std::size_t n, std::string& why) {
  const std::uint64_t pos = c.body_base + c.body_pos;
  c.body_pos += n;
  if (c.bad_status || r.discard) return;
  const std::uint64_t lo = r.offset + r.done;
  const std::uint64_t hi = r.known ? r.offset + r.length : UINT64_MAX;
  if (lo >= hi) return;  // trailing bytes of a whole-file reply
  if (pos > lo) {
    why = "gap in response body";
    return;
  }
  const std::uint64_t a = std::max(pos, lo);
  const std::uint64_t b = std::min<std::uint64_t>(pos + n, hi);
  if (b <= a) return;
  const char* src = data + (a - pos);
  std::size_t len = static_cast<std::size_t>(b - a);
  int fd = slots_.at(r.file).fd;
  std::uint64_t at = a;
  while (len > 0) {
    ssize_t w = ::pwrite(fd, src, len, static_cast<off_t>(at));
    if (w < 0) {
      if (errno == EINTR) continue;
      fail_file(r.file, std::string("write failed: ") + std::strerror(errno));
      return;
    }
    src += w;
    len -= static_cast<std::size_t>(w);
    at += static_cast<std::uint64_t>(w);
  }
  r.done += b - a;
  c.progress_this_attempt += b - a;
  sh_->emit({EventKind::BytesProgress, 0, b - a, r.file, id_, sh_->files[static_cast<std::size_t>(r.file)].cls, {}});
}

void ChannelWorker::finish_response(Conn& c) {
  ReqPtr r = c.queue.front();
  c.queue.pop_front();
  --c.sent;
  ++c.responses;
  c.armed = false;
  c.checked = false;
  c.progress_this_attempt = 0;
  if (!c.parser.head().keep_alive()) c.server_closing = true;
  const int status = c.parser.head().status;
  if (r->discard) {
    resolve(r->file);
    return;
  }
  if (c.bad_status) {
    const std::string why = sh_->files[static_cast<std::size_t>(r->file)].url + ": HTTP " + std::to_string(status);
    if (status >= 500 || status == 408 || status == 429) {
      c.queue.insert(c.queue.begin() + static_cast<std::ptrdiff_t>(c.sent), r);
      charge(r, why);
    } else {
      fail_file(r->file, why);
      resolve(r->file);
    }
    return;
  }
  if (r->known && r->done < r->length) {
    c.queue.insert(c.queue.begin() + static_cast<std::ptrdiff_t>(c.sent), r);
    charge(r, "short response body");
    return;
  }
  resolve(r->file);
}

// Counts one failed attempt against a request; the second one fails its file.
void ChannelWorker::charge(const ReqPtr& r, const std::string& why) {
  if (++r->failures > 1) {
    fail_file(r->file, why);
    for (auto& c : conns_) {
      for (std::size_t i = c.sent; i < c.queue.size(); ++i) {
        if (c.queue[i] == r) {
          c.queue.erase(c.queue.begin() + static_cast<std::ptrdiff_t>(i));
          resolve(r->file);
          return;
        }
      }
    }
  }
}

void ChannelWorker::drop(Conn& c, bool penalize, const std::string& why) {
  if (c.fd >= 0) ::close(c.fd);
  c.fd = -1;
  c.out.clear();
  c.out_off = 0;
  c.parser = http::ResponseParser{};
  c.armed = false;
  c.checked = false;
  if (c.sent > 0) {
    if (c.server_closing) {
      // announced close: the rest simply goes out again
    } else if (c.responses >= 1 && c.sent > 1) {
      const std::string host = c.host;
      if (sh_->disable_pipelining(host))
        sh_->emit({EventKind::Warning, 0, 0, -1, id_, cls_, host + " closed a pipelined connection; pipelining disabled"});
    } else if (penalize && c.responses == 0 && c.progress_this_attempt == 0) {
      // a reused connection may have been closed while idle; only a fresh
      // one that never answered costs the request an attempt
      ReqPtr head = c.queue.front();
      c.sent = 0;
      sh_->emit({EventKind::ChannelError, 0, 0, head->file, id_, cls_, why});
      charge(head, why);
    }
  }
  c.sent = 0;
  c.progress_this_attempt = 0;
  c.responses = 0;
  c.server_closing = false;
}

void ChannelWorker::fail_file(int file, const std::string& why) {
  auto it = slots_.find(file);
  if (it == slots_.end() || it->second.failed) return;
  it->second.failed = true;
  it->second.error = why;
  for (auto& c : conns_) {
    for (auto& r : c.queue)
      if (r->file == file) r->discard = true;
  }
}

void ChannelWorker::resolve(int file) {
  auto it = slots_.find(file);
  if (it == slots_.end()) return;
  if (--it->second.unresolved == 0) finalize(file);
}

void ChannelWorker::finalize(int file) {
  Slot slot = slots_.at(file);
  slots_.erase(file);
  const FileJob& job = sh_->files[static_cast<std::size_t>(file)];
  if (slot.fd >= 0 && ::close(slot.fd) != 0 && !slot.failed) {
    slot.failed = true;
    slot.error = std::string("close: ") + std::strerror(errno);
  }
  if (slot.failed) {
    ::unlink(job.dest.c_str());
    sh_->emit({EventKind::FileFailed, 0, 0, file, id_, job.cls, job.url + ": " + slot.error});
    return;
  }
  std::error_code ec;
  const std::uint64_t size = std::filesystem::file_size(job.dest, ec);
  if (sh_->verify) {
    try {
      std::ofstream(job.dest + ".sha256") << sha256_file(job.dest) << "  "
                                          << std::filesystem::path(job.dest).filename().string() << "\n";
    } catch (const std::exception& e) {
      sh_->emit({EventKind::Warning, 0, 0, file, id_, job.cls, e.what()});
    }
  }
  sh_->emit({EventKind::FileComplete, 0, size, file, id_, job.cls, {}});
}

// Returns false once the connection has been dropped.
bool ChannelWorker::read_ready(Conn& c) {
  static thread_local std::vector<char> buf(1 << 18);
  ssize_t n = ::recv(c.fd, buf.data(), buf.size(), 0);
  if (n < 0) {
    if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) return true;
    drop(c, true, std::string("recv: ") + std::strerror(errno));
    return false;
  }
  c.last_io = SteadyClock::now();
  if (n == 0) {
    if (c.armed && c.parser.finish_eof()) {
      finish_response(c);
      c.server_closing = true;
      drop(c, false, {});
      return false;
    }
    drop(c, true, "connection closed by server");
    return false;
  }
  std::size_t used = 0;
  std::string why;
  while (used < static_cast<std::size_t>(n)) {
    if (c.sent == 0) {
      drop(c, true, "unsolicited data from server");
      return false;
    }
    Req& r = *c.queue.front();
    if (!c.armed) {
      c.parser.expect(false);
      c.armed = true;
      c.checked = false;
    }
    try {
      used += c.parser.feed(buf.data() + used, static_cast<std::size_t>(n) - used, [&](const char* d, std::size_t k) {
        if (!c.checked && !on_head(c, r, why)) return;
        if (why.empty()) on_body(c, r, d, k, why);
      });
    } catch (const Error& e) {
      why = e.what();
    }
    if (c.parser.head_done() && !c.checked && why.empty()) on_head(c, r, why);
    if (!why.empty()) {
      drop(c, true, why);
      return false;
    }
    if (c.parser.complete()) finish_response(c);
  }
  if (c.server_closing && c.sent == 0) {
    drop(c, false, {});
    return false;
  }
  return true;
}

void ChannelWorker::run() {
  std::vector<pollfd> fds;
  std::vector<std::size_t> which;
  while (!abort_) {
    refill();
    for (auto& c : conns_) pump_sends(c);
    if (slots_.empty() && (closing_ || !sh_->has_pending(cls_))) break;

    fds.clear();
    which.clear();
    for (std::size_t i = 0; i < conns_.size(); ++i) {
      auto& c = conns_[i];
      if (c.fd < 0) continue;
      short ev = POLLIN;
      if (c.out_off < c.out.size()) ev |= POLLOUT;
      fds.push_back({c.fd, ev, 0});
      which.push_back(i);
    }
    if (fds.empty()) {
      // nothing connected yet; pump_sends retries on the next turn
      std::this_thread::sleep_for(std::chrono::milliseconds(slots_.empty() ? 5 : 20));
      continue;
    }
    int rc = ::poll(fds.data(), fds.size(), 50);
    if (rc < 0 && errno != EINTR) break;
    for (std::size_t k = 0; k < fds.size(); ++k) {
      Conn& c = conns_[which[k]];
      if (c.fd != fds[k].fd) continue;
      const short re = fds[k].revents;
      if ((re & POLLOUT) && c.out_off < c.out.size()) {
        ssize_t w = ::send(c.fd, c.out.data() + c.out_off, c.out.size() - c.out_off, MSG_NOSIGNAL);
        if (w > 0) {
          c.out_off += static_cast<std::size_t>(w);
          c.last_io = SteadyClock::now();
          if (c.out_off == c.out.size()) {
            c.out.clear();
            c.out_off = 0;
          }
        } else if (w < 0 && errno != EAGAIN && errno != EINTR) {
          drop(c, true, std::string("send: ") + std::strerror(errno));
          continue;
        }
      }
      if (re & (POLLIN | POLLHUP | POLLERR)) read_ready(c);
    }
    for (auto& c : conns_) {
      if (c.fd >= 0 && c.sent > 0 && seconds_since(c.last_io) > sh_->io_timeout) drop(c, true, "timed out");
      if (c.fd >= 0 && c.sent == 0 && c.queue.empty() && c.out.empty() && slots_.empty() && closing_) drop(c, false, {});
    }
  }
  for (auto& c : conns_) {
    if (c.fd >= 0) ::close(c.fd);
    c.fd = -1;
  }
  for (auto& [f, slot] : slots_) {
    if (slot.fd >= 0) ::close(slot.fd);
    ::unlink(sh_->files[static_cast<std::size_t>(f)].dest.c_str());
    sh_->emit({EventKind::FileFailed, 0, 0, f, id_, sh_->files[static_cast<std::size_t>(f)].cls, "aborted"});
  }
  slots_.clear();
  sh_->emit({EventKind::ChannelClosed, 0, 0, -1, id_, cls_, {}});
}

// ---------------------------------------------------------------------------

RealSession::RealSession(const Grouping& groups, std::map<std::string, Capabilities> hosts, EngineOptions opts)
    : shared_(std::make_shared<Shared>()), opts_(std::move(opts)) {
  auto& sh = *shared_;
  sh.hosts = std::move(hosts);
  sh.output_root = opts_.output_root;
  sh.verify = opts_.verify;
  sh.io_timeout = opts_.io_timeout;
  auto add = [&](const std::string& url, std::optional<std::uint64_t> size, SizeClass c) {
    FileJob job;
    job.url = url;
    job.where = http::parse_url(url);
    job.size = size;
    job.cls = c;
    job.dest = destination_path(opts_.output_root, url);
    sh.pending[index_of(c)].push_back(static_cast<int>(sh.files.size()));
    sh.files.push_back(std::move(job));
    ++files_left_[index_of(c)];
    ++files_left_total_;
  };
  for (SizeClass c : kAllClasses)
    for (const auto& f : groups[c].files) add(f.id, f.size, c);
  for (const auto& u : groups.unknown_size) add(u, std::nullopt, SizeClass::Medium);
  total_bytes_ = groups.total_bytes();
  if (opts_.metrics) {
    std::weak_ptr<Shared> w = shared_;
    sampler_ = std::make_unique<telemetry::Sampler>(*opts_.metrics, opts_.sample_period, [w] {
      auto s = w.lock();
      return s ? s->now() : 0.0;
    });
  }
  sh.start = SteadyClock::now();
  if (sampler_) sampler_->start();
}

RealSession::~RealSession() {
  for (auto& w : workers_) w->close();
  workers_.clear();  // joins
  if (sampler_) sampler_->stop();
}

double RealSession::now() const { return shared_->now(); }

void RealSession::apply(const TransferPlan& plan) {
  plan.check();
  plan_ = plan;
  reconcile();
}

void RealSession::reconcile() {
  std::array<int, 3> open{0, 0, 0};
  for (auto& w : workers_) {
    if (w->closing()) continue;
    const int c = index_of(w->cls());
    const int want = plan_.active[c] ? plan_.params[c].concurrency : 0;
    if (open[c] >= want) {
      w->close();
    } else {
      w->set_params(plan_.params[c]);
      ++open[c];
    }
  }
  int live = static_cast<int>(workers_.size());
  for (SizeClass cls : kAllClasses) {
    const int c = index_of(cls);
    if (!plan_.active[c] || !shared_->has_pending(cls)) continue;
    while (open[c] < plan_.params[c].concurrency && live < plan_.channel_bound) {
      workers_.push_back(std::make_unique<ChannelWorker>(shared_, next_channel_++, cls, plan_.params[c]));
      ++open[c];
      ++live;
    }
  }
  max_live_ = std::max(max_live_, live);
}

void RealSession::handle(const TransferEvent& e) {
  if (opts_.observer) opts_.observer(e);
  switch (e.kind) {
    case EventKind::BytesProgress:
      bytes_ += e.bytes;
      progress_.push_back({e.timestamp, e.bytes});
      break;
    case EventKind::FileComplete:
    case EventKind::FileFailed: {
      if (e.kind == EventKind::FileFailed) failures_.push_back(e.detail);
      const int c = index_of(e.size_class);
      --files_left_total_;
      if (--files_left_[c] == 0) {
        completed_.push_back(e.size_class);
        if (opts_.observer) opts_.observer({EventKind::SubgroupComplete, e.timestamp, 0, -1, -1, e.size_class, {}});
      }
      break;
    }
    case EventKind::ChannelClosed: {
      auto it = std::find_if(workers_.begin(), workers_.end(), [&](const auto& w) { return w->id() == e.channel; });
      if (it != workers_.end()) {
        (*it)->join();
        workers_.erase(it);
      }
      reconcile();
      break;
    }
    case EventKind::Warning:
      warnings_.push_back(e.detail);
      break;
    default:
      break;
  }
}

StepReason RealSession::advance(double deadline) {
  double last_progress = now();
  std::uint64_t seen = bytes_;
  int left = files_left_total_;
  for (;;) {
    while (auto e = shared_->events.try_pop()) handle(*e);
    if (files_left_total_ == 0) return StepReason::AllDone;
    if (!completed_.empty()) return StepReason::GroupComplete;
    const double t = now();
    if (t >= deadline) return StepReason::Deadline;
    if (bytes_ != seen || files_left_total_ != left) {
      seen = bytes_;
      left = files_left_total_;
      last_progress = t;
    }
    if (workers_.empty()) {
      bool pending = false;
      for (SizeClass c : kAllClasses) pending = pending || shared_->has_pending(c);
      if (pending) reconcile();
      if (workers_.empty())
        throw Error(Errc::InvalidArgument, "transfer stalled: files remain but the plan grants no channel to them");
    }
    if (t - last_progress > 4 * opts_.io_timeout) throw Error(Errc::Unreachable, "transfer made no progress");
    const double wait = std::min(deadline - t, 0.05);
    auto until = SteadyClock::now() + std::chrono::duration_cast<SteadyClock::duration>(std::chrono::duration<double>(wait));
    if (auto e = shared_->events.pop_until(until)) handle(*e);
  }
}

std::vector<SizeClass> RealSession::take_completed_groups() {
  auto out = std::move(completed_);
  completed_.clear();
  return out;
}

bool RealSession::energy_available() const {
  return opts_.power_model.has_value() && sampler_ && sampler_->available();
}

double RealSession::energy() const {
  if (!energy_available()) return 0.0;
  auto tl = sampler_->timeline();
  if (tl.empty()) return 0.0;
  const auto& model = *opts_.power_model;
  auto watts = [&](power::UtilizationSample s) {
    s.cpu = std::clamp(s.cpu, 0.0, 1.0);
    s.mem = std::clamp(s.mem, 0.0, 1.0);
    s.disk = std::clamp(s.disk, 0.0, 1.0);
    s.nic = std::clamp(s.nic, 0.0, 1.0);
    return power::predict_power(model, s);
  };
  std::vector<std::pair<double, double>> pts;
  pts.reserve(tl.size() + 2);
  pts.emplace_back(0.0, watts(tl.front()));
  for (const auto& s : tl)
    if (s.timestamp > pts.back().first) pts.emplace_back(s.timestamp, watts(s));
  const double t = now();
  if (t > pts.back().first) pts.emplace_back(t, pts.back().second);
  return power::trapezoid(pts);
}

std::vector<std::string> RealSession::warnings() const {
  auto out = warnings_;
  if (sampler_) {
    auto w = sampler_->warnings();
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

std::vector<power::UtilizationSample> RealSession::telemetry_timeline() const {
  return sampler_ ? sampler_->timeline() : std::vector<power::UtilizationSample>{};
}

int RealSession::peak_outstanding() const noexcept { return shared_->peak_outstanding.load(); }

}  // namespace httpwatt::transport
