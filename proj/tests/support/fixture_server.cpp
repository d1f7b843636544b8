#include "support/fixture_server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <deque>
#include <random>
#include <stdexcept>

namespace fixture {

std::string generate_content(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + size);
  std::string s(size, '\0');
  for (std::size_t i = 0; i < size; i += 8) {
    std::uint64_t v = rng();
    std::memcpy(s.data() + i, &v, std::min<std::size_t>(8, size - i));
  }
  return s;
}

Server::Server(Options opts) : opts_(opts) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 128) != 0)
    throw std::runtime_error("fixture: cannot listen");
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

Server::~Server() {
  stop_ = true;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  acceptor_.join();
  {
    std::lock_guard lock(mu_);
    for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& t : workers_) t.join();
}

void Server::add(const std::string& path, std::string content) {
  std::lock_guard lock(mu_);
  files_[path] = std::move(content);
}

std::string Server::url(const std::string& path) const {
  return "http://127.0.0.1:" + std::to_string(port_) + path;
}

void Server::reset_stats() {
  max_outstanding_ = 0;
  requests_ = 0;
  connections_ = 0;
}

void Server::accept_loop() {
  while (!stop_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 100) <= 0) continue;
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    const int n = ++connections_;
    if (n <= opts_.refuse_first) {
      ::close(fd);
      continue;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(mu_);
    open_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { serve(fd); });
  }
}

namespace {

struct Request {
  std::string method;
  std::string path;
  std::string range;
};

bool send_all(int fd, const char* p, std::size_t n, double bytes_per_sec) {
  while (n > 0) {
    std::size_t k = n;
    if (bytes_per_sec > 0) k = std::min<std::size_t>(n, std::max<std::size_t>(1024, static_cast<std::size_t>(bytes_per_sec / 50)));
    ssize_t w = ::send(fd, p, k, MSG_NOSIGNAL);
    if (w <= 0) {
      if (w < 0 && errno == EINTR) continue;
      return false;
    }
    p += w;
    n -= static_cast<std::size_t>(w);
    if (bytes_per_sec > 0) std::this_thread::sleep_for(std::chrono::duration<double>(static_cast<double>(w) / bytes_per_sec));
  }
  return true;
}

// Parses every complete request head in `buf`.
void parse_requests(std::string& buf, std::deque<Request>& out) {
  for (;;) {
    auto end = buf.find("\r\n\r\n");
    if (end == std::string::npos) return;
    std::string head = buf.substr(0, end);
    buf.erase(0, end + 4);
    Request r;
    auto sp1 = head.find(' ');
    auto sp2 = head.find(' ', sp1 + 1);
    r.method = head.substr(0, sp1);
    r.path = head.substr(sp1 + 1, sp2 - sp1 - 1);
    if (auto q = r.path.find('?'); q != std::string::npos) r.path.resize(q);
    std::size_t pos = head.find("\r\n");
    while (pos != std::string::npos) {
      std::size_t next = head.find("\r\n", pos + 2);
      std::string line = head.substr(pos + 2, next == std::string::npos ? std::string::npos : next - pos - 2);
      auto colon = line.find(':');
      if (colon != std::string::npos) {
        std::string name = line.substr(0, colon);
        std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
        std::string value = line.substr(colon + 1);
        value.erase(0, value.find_first_not_of(' '));
        if (name == "range") r.range = value;
      }
      pos = next;
    }
    out.push_back(std::move(r));
  }
}

}  // namespace

void Server::serve(int fd) {
  std::string inbuf;
  std::deque<Request> queue;
  char tmp[65536];
  int replies = 0;
  bool open = true;

  auto pull = [&](int timeout_ms) {
    pollfd p{fd, POLLIN, 0};
    while (::poll(&p, 1, timeout_ms) > 0) {
      ssize_t n = ::recv(fd, tmp, sizeof tmp, 0);
      if (n <= 0) return false;
      inbuf.append(tmp, static_cast<std::size_t>(n));
      timeout_ms = 0;
    }
    return true;
  };
  auto note = [&] {
    int cur = static_cast<int>(queue.size());
    int seen = max_outstanding_.load();
    while (cur > seen && !max_outstanding_.compare_exchange_weak(seen, cur)) {
    }
  };

  while (open && !stop_) {
    if (queue.empty()) {
      if (!pull(100)) break;
    } else if (!pull(0)) {
      break;
    }
    std::size_t before = queue.size();
    parse_requests(inbuf, queue);
    requests_ += static_cast<int>(queue.size() - before);
    note();
    if (queue.empty()) continue;
    if (opts_.response_delay > 0) std::this_thread::sleep_for(std::chrono::duration<double>(opts_.response_delay));

    Request req = queue.front();
    std::string body;
    bool found = false;
    {
      std::lock_guard lock(mu_);
      auto it = files_.find(req.path);
      if (it != files_.end()) {
        body = it->second;
        found = true;
      }
    }
    int status = 200;
    std::string extra;
    std::size_t from = 0, to = body.size();
    if (!found) {
      status = 404;
      body = "not found\n";
      to = body.size();
    } else if (req.method == "HEAD" && !opts_.head_allowed) {
      status = 405;
      body.clear();
      to = 0;
    } else if (opts_.ranges && !req.range.empty() && req.range.rfind("bytes=", 0) == 0) {
      std::string spec = req.range.substr(6);
      auto dash = spec.find('-');
      std::size_t a = std::stoull(spec.substr(0, dash));
      std::size_t b = dash + 1 < spec.size() ? std::stoull(spec.substr(dash + 1)) : body.size() - 1;
      b = std::min(b, body.size() - 1);
      if (a >= body.size() || a > b) {
        status = 416;
        extra += "Content-Range: bytes */" + std::to_string(body.size()) + "\r\n";
        from = to = 0;
      } else {
        status = 206;
        extra += "Content-Range: bytes " + std::to_string(a) + "-" + std::to_string(b) + "/" + std::to_string(body.size()) + "\r\n";
        from = a;
        to = b + 1;
      }
    }
    const bool close_after_this = !opts_.keep_alive || (!opts_.content_length && !opts_.chunked);
    std::string head = "HTTP/1.1 " + std::to_string(status) + (status < 300 ? " OK" : " Error") + "\r\n";
    if (opts_.ranges) head += "Accept-Ranges: bytes\r\n";
    head += extra;
    const std::size_t n = to - from;
    if (opts_.chunked && req.method != "HEAD") head += "Transfer-Encoding: chunked\r\n";
    else if (opts_.content_length) head += "Content-Length: " + std::to_string(n) + "\r\n";
    if (close_after_this) head += "Connection: close\r\n";
    head += "\r\n";

    bool ok = send_all(fd, head.data(), head.size(), 0);
    if (ok && req.method != "HEAD") {
      if (opts_.chunked) {
        const std::size_t step = 7777;
        for (std::size_t o = from; ok && o < to; o += step) {
          std::size_t k = std::min(step, to - o);
          char sz[32];
          int m = std::snprintf(sz, sizeof sz, "%zx\r\n", k);
          ok = send_all(fd, sz, static_cast<std::size_t>(m), 0) && send_all(fd, body.data() + o, k, opts_.bytes_per_sec) &&
               send_all(fd, "\r\n", 2, 0);
        }
        if (ok) ok = send_all(fd, "0\r\n\r\n", 5, 0);
      } else {
        ok = send_all(fd, body.data() + from, n, opts_.bytes_per_sec);
      }
    }
    queue.pop_front();
    ++replies;
    if (!ok || close_after_this || (opts_.close_after > 0 && replies >= opts_.close_after)) open = false;
  }
  {
    std::lock_guard lock(mu_);
    open_fds_.erase(std::remove(open_fds_.begin(), open_fds_.end(), fd), open_fds_.end());
  }
  ::close(fd);
}

}  // namespace fixture
