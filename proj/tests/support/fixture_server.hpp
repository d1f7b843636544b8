#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace fixture {

/// Knobs for misbehaving on purpose.
struct Options {
  bool ranges = true;            // honour Range and advertise Accept-Ranges
  bool head_allowed = true;      // false: HEAD answers 405
  bool content_length = true;    // false: bodies are close-delimited
  bool chunked = false;          // chunked bodies instead of Content-Length
  bool keep_alive = true;        // false: Connection: close on every reply
  int close_after = 0;           // silently drop the connection after n replies
  int refuse_first = 0;          // accept and immediately close the first n connections
  double response_delay = 0.0;   // seconds before each reply
  double bytes_per_sec = 0.0;    // per-connection throttle, 0 = unlimited
};

/// Deterministic pseudo-random file contents.
std::string generate_content(std::size_t size, std::uint64_t seed);

/// Loopback HTTP/1.1 server, one thread per connection. Requests on a
/// connection are answered strictly in order; everything already readable
/// is parsed before each reply so the unanswered count is exact.
class Server {
 public:
  explicit Server(Options opts = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void add(const std::string& path, std::string content);
  std::string url(const std::string& path) const;
  int port() const noexcept { return port_; }

  int max_outstanding() const noexcept { return max_outstanding_; }
  int requests() const noexcept { return requests_; }
  int connections() const noexcept { return connections_; }
  void reset_stats();

 private:
  void accept_loop();
  void serve(int fd);

  Options opts_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stop_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::map<std::string, std::string> files_;
  std::vector<std::thread> workers_;
  std::vector<int> open_fds_;
  std::atomic<int> max_outstanding_{0};
  std::atomic<int> requests_{0};
  std::atomic<int> connections_{0};
};

}  // namespace fixture
