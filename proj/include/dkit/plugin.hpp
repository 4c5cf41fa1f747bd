#pragma once

// External denoiser plugins: a child process speaking a little-endian binary
// protocol over its stdin/stdout.
//
//   handshake  parent -> "DNP1" u32 dim ; child -> "DNP1" u32 dim (must match)
//   request    u8 0x01, u32 k, f64 sigma, k*dim f64 row-major
//   response   u8 0x02, u32 k, k*dim f64 row-major
//   shutdown   u8 0xFF ; child exits 0
//
// A PluginProcess is single-owner: requests must be serialized by the caller.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "dkit/binio.hpp"
#include "dkit/denoiser.hpp"

namespace dkit {

namespace wire {
inline constexpr char kMagic[] = "DNP1";
inline constexpr std::uint8_t kRequest = 0x01;
inline constexpr std::uint8_t kResponse = 0x02;
inline constexpr std::uint8_t kShutdown = 0xFF;
}  // namespace wire

namespace detail {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }
  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

// Tokenizes a command line on whitespace; single and double quotes group.
inline std::vector<std::string> split_command(const std::string& cmd) {
  std::vector<std::string> out;
  std::string cur;
  bool have = false;
  char quote = 0;
  for (char c : cmd) {
    if (quote) {
      if (c == quote) quote = 0;
      else cur += c;
    } else if (c == '"' || c == '\'') {
      quote = c;
      have = true;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      if (have) out.push_back(std::move(cur));
      cur.clear();
      have = false;
    } else {
      cur += c;
      have = true;
    }
  }
  if (quote) throw InvalidArgument("unterminated quote in command: " + cmd);
  if (have) out.push_back(std::move(cur));
  return out;
}

}  // namespace detail

class PluginProcess {
 public:
  using Clock = std::chrono::steady_clock;

  // Spawns `argv` and performs the handshake for dimension `dim`.
  PluginProcess(std::vector<std::string> argv, Eigen::Index dim,
                std::chrono::milliseconds timeout = std::chrono::seconds(30))
      : argv_(std::move(argv)), dim_(dim), timeout_(timeout) {
    if (argv_.empty()) throw InvalidArgument("empty plugin command");
    if (dim_ < 1) throw InvalidArgument("plugin dimension must be positive");
    // Writes to a dead child must fail with EPIPE, not kill us.
    ::signal(SIGPIPE, SIG_IGN);
    spawn();
    handshake();
  }

  static PluginProcess from_command_line(const std::string& cmd, Eigen::Index dim,
                                         std::chrono::milliseconds timeout = std::chrono::seconds(30)) {
    return PluginProcess(detail::split_command(cmd), dim, timeout);
  }

  PluginProcess(PluginProcess&& o) noexcept
      : argv_(std::move(o.argv_)),
        dim_(o.dim_),
        timeout_(o.timeout_),
        pid_(std::exchange(o.pid_, -1)),
        to_child_(std::move(o.to_child_)),
        from_child_(std::move(o.from_child_)) {}
  PluginProcess& operator=(PluginProcess&&) = delete;
  PluginProcess(const PluginProcess&) = delete;
  PluginProcess& operator=(const PluginProcess&) = delete;

  ~PluginProcess() { shutdown(); }

  Eigen::Index dim() const { return dim_; }
  bool alive() const { return pid_ > 0; }

  // One request/response round trip; rows of `batch` are inputs.
  Matrix request(const Matrix& batch, double sigma) {
    if (!alive()) throw PluginError(PluginFailure::process_exit, "plugin is not running");
    require_dim(batch.cols(), dim_, "plugin batch");
    const auto k = static_cast<std::uint32_t>(batch.rows());
    RowMatrix rows = batch;
    std::vector<unsigned char> msg;
    msg.reserve(13 + 8 * static_cast<std::size_t>(rows.size()));
    msg.push_back(wire::kRequest);
    binio::put_u32(msg, k);
    binio::put_f64(msg, sigma);
    binio::put_f64s(msg, std::span(rows.data(), static_cast<std::size_t>(rows.size())));
    const auto deadline = Clock::now() + timeout_;
    write_all(msg, deadline);

    unsigned char head[5];
    read_exact(head, 5, deadline);
    if (head[0] != wire::kResponse)
      fail(PluginFailure::protocol, "expected response tag 0x02, got 0x" + hex(head[0]));
    const std::uint32_t got_k = binio::get_u32(head + 1);
    if (got_k != k)
      fail(PluginFailure::dimension_mismatch,
           "response carries " + std::to_string(got_k) + " rows, request had " + std::to_string(k));
    std::vector<unsigned char> payload(8 * static_cast<std::size_t>(rows.size()));
    read_exact(payload.data(), payload.size(), deadline);
    if (pending_bytes())
      fail(PluginFailure::dimension_mismatch, "plugin sent more values than k*dim");
    RowMatrix out(batch.rows(), batch.cols());
    binio::get_f64s(payload.data(), std::span(out.data(), static_cast<std::size_t>(out.size())));
    return out;
  }

  // Sends the shutdown tag and reaps the child; kills it if it lingers.
  void shutdown() {
    if (pid_ <= 0) return;
    if (to_child_.get() >= 0) {
      unsigned char tag = wire::kShutdown;
      [[maybe_unused]] auto n = ::write(to_child_.get(), &tag, 1);
      to_child_.reset();
    }
    from_child_.reset();
    const auto deadline = Clock::now() + std::chrono::milliseconds(2000);
    int status = 0;
    while (true) {
      pid_t r = ::waitpid(pid_, &status, WNOHANG);
      if (r == pid_ || r < 0) break;
      if (Clock::now() > deadline) {
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        break;
      }
      ::usleep(1000);
    }
    pid_ = -1;
  }

 private:
  static std::string hex(unsigned v) {
    static const char* digits = "0123456789abcdef";
    return {digits[(v >> 4) & 0xF], digits[v & 0xF]};
  }

  [[noreturn]] void fail(PluginFailure kind, const std::string& detail) {
    // The stream is out of sync after any failure; drop the child.
    kill_child();
    throw PluginError(kind, argv_.front() + ": " + detail);
  }

  void kill_child() {
    to_child_.reset();
    from_child_.reset();
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
    pid_ = -1;
  }

  void spawn() {
    int in_pipe[2], out_pipe[2];
    if (::pipe(in_pipe) != 0) throw IoError("pipe() failed");
    if (::pipe(out_pipe) != 0) {
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      throw IoError("pipe() failed");
    }
    std::vector<char*> args;
    for (auto& a : argv_) args.push_back(a.data());
    args.push_back(nullptr);
    pid_t pid = ::fork();
    if (pid < 0) throw IoError("fork() failed");
    if (pid == 0) {
      ::dup2(in_pipe[0], STDIN_FILENO);
      ::dup2(out_pipe[1], STDOUT_FILENO);
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      ::close(out_pipe[0]);
      ::close(out_pipe[1]);
      ::execvp(args[0], args.data());
      ::_exit(127);
    }
    pid_ = pid;
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    to_child_ = detail::Fd(in_pipe[1]);
    from_child_ = detail::Fd(out_pipe[0]);
    ::fcntl(to_child_.get(), F_SETFD, FD_CLOEXEC);
    ::fcntl(from_child_.get(), F_SETFD, FD_CLOEXEC);
    ::fcntl(to_child_.get(), F_SETFL, ::fcntl(to_child_.get(), F_GETFL) | O_NONBLOCK);
    ::fcntl(from_child_.get(), F_SETFL, ::fcntl(from_child_.get(), F_GETFL) | O_NONBLOCK);
  }

  void handshake() {
    std::vector<unsigned char> msg;
    binio::put_bytes(msg, wire::kMagic);
    binio::put_u32(msg, static_cast<std::uint32_t>(dim_));
    const auto deadline = Clock::now() + timeout_;
    write_all(msg, deadline);
    unsigned char reply[8];
    read_exact(reply, 8, deadline);
    if (std::memcmp(reply, wire::kMagic, 4) != 0) fail(PluginFailure::protocol, "bad handshake magic");
    const std::uint32_t got = binio::get_u32(reply + 4);
    if (got != dim_)
      fail(PluginFailure::dimension_mismatch,
           "plugin reports dim " + std::to_string(got) + ", expected " + std::to_string(dim_));
  }

  int wait_for(int fd, short events, Clock::time_point deadline) {
    while (true) {
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      if (left.count() <= 0) fail(PluginFailure::timeout, "no progress within timeout");
      pollfd p{fd, events, 0};
      int r = ::poll(&p, 1, static_cast<int>(left.count()));
      if (r < 0 && errno == EINTR) continue;
      if (r < 0) fail(PluginFailure::protocol, std::string("poll failed: ") + std::strerror(errno));
      if (r == 0) continue;
      return p.revents;
    }
  }

  void write_all(std::span<const unsigned char> bytes, Clock::time_point deadline) {
    std::size_t done = 0;
    while (done < bytes.size()) {
      wait_for(to_child_.get(), POLLOUT, deadline);
      ssize_t n = ::write(to_child_.get(), bytes.data() + done, bytes.size() - done);
      if (n < 0) {
        if (errno == EAGAIN || errno == EINTR) continue;
        fail(PluginFailure::process_exit, "write failed: " + std::string(std::strerror(errno)));
      }
      done += static_cast<std::size_t>(n);
    }
  }

  void read_exact(unsigned char* out, std::size_t count, Clock::time_point deadline) {
    std::size_t done = 0;
    while (done < count) {
      wait_for(from_child_.get(), POLLIN, deadline);
      ssize_t n = ::read(from_child_.get(), out + done, count - done);
      if (n == 0) {
        fail(PluginFailure::process_exit, "stream closed after " + std::to_string(done) + " of " +
                                              std::to_string(count) + " expected bytes" + exit_note());
      }
      if (n < 0) {
        if (errno == EAGAIN || errno == EINTR) continue;
        fail(PluginFailure::process_exit, "read failed: " + std::string(std::strerror(errno)));
      }
      done += static_cast<std::size_t>(n);
    }
  }

  bool pending_bytes() {
    pollfd p{from_child_.get(), POLLIN, 0};
    if (::poll(&p, 1, 0) <= 0 || !(p.revents & POLLIN)) return false;
    unsigned char c;
    return ::read(from_child_.get(), &c, 1) == 1;
  }

  std::string exit_note() {
    int status = 0;
    for (int i = 0; i < 100; ++i) {
      pid_t r = ::waitpid(pid_, &status, WNOHANG);
      if (r == pid_) {
        pid_ = -1;
        if (WIFEXITED(status)) return " (exit status " + std::to_string(WEXITSTATUS(status)) + ")";
        if (WIFSIGNALED(status)) return " (killed by signal " + std::to_string(WTERMSIG(status)) + ")";
        return "";
      }
      ::usleep(1000);
    }
    return "";
  }

  std::vector<std::string> argv_;
  Eigen::Index dim_;
  std::chrono::milliseconds timeout_;
  pid_t pid_ = -1;
  detail::Fd to_child_;
  detail::Fd from_child_;
};

/// One round trip: k x dim in, k x dim out.
inline Matrix external_denoise(PluginProcess& plugin, const Matrix& batch, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("external denoiser needs sigma > 0");
  return plugin.request(batch, sigma);
}

// Adapts a plugin to the Denoiser interface. Evaluation locks an internal
// mutex, so concurrent callers are serialized rather than interleaved.
class ExternalDenoiser final : public Denoiser {
 public:
  explicit ExternalDenoiser(std::shared_ptr<PluginProcess> plugin) : plugin_(std::move(plugin)) {}
  Eigen::Index dim() const override { return plugin_->dim(); }
  Vector evaluate(const Vector& x, double sigma) const override {
    Matrix batch = x.transpose();
    return evaluate_batch(batch, sigma).row(0).transpose();
  }
  Matrix evaluate_batch(const Matrix& batch, double sigma) const override {
    std::lock_guard lock(mutex_);
    return external_denoise(*plugin_, batch, sigma);
  }
  bool concurrent_safe() const override { return false; }

 private:
  std::shared_ptr<PluginProcess> plugin_;
  mutable std::mutex mutex_;
};

// Child side of the protocol. `handler(batch, sigma)` returns the denoised
// batch; `dim` 0 adopts whatever dimension the parent announces. Returns the
// process exit code.
inline int serve_plugin(int in_fd, int out_fd, Eigen::Index dim,
                        const std::function<Matrix(const Matrix&, double)>& handler) {
  auto read_exact = [&](unsigned char* p, std::size_t n) {
    std::size_t done = 0;
    while (done < n) {
      ssize_t r = ::read(in_fd, p + done, n - done);
      if (r < 0 && errno == EINTR) continue;
      if (r <= 0) return false;
      done += static_cast<std::size_t>(r);
    }
    return true;
  };
  auto write_all = [&](const std::vector<unsigned char>& buf) {
    std::size_t done = 0;
    while (done < buf.size()) {
      ssize_t r = ::write(out_fd, buf.data() + done, buf.size() - done);
      if (r < 0 && errno == EINTR) continue;
      if (r <= 0) return false;
      done += static_cast<std::size_t>(r);
    }
    return true;
  };
  unsigned char hello[8];
  if (!read_exact(hello, 8) || std::memcmp(hello, wire::kMagic, 4) != 0) return 2;
  const auto requested = static_cast<Eigen::Index>(binio::get_u32(hello + 4));
  const Eigen::Index d = dim > 0 ? dim : requested;
  std::vector<unsigned char> reply;
  binio::put_bytes(reply, wire::kMagic);
  binio::put_u32(reply, static_cast<std::uint32_t>(d));
  if (!write_all(reply)) return 2;
  while (true) {
    unsigned char tag;
    if (!read_exact(&tag, 1)) return 2;
    if (tag == wire::kShutdown) return 0;
    if (tag != wire::kRequest) return 2;
    unsigned char head[12];
    if (!read_exact(head, 12)) return 2;
    const std::uint32_t k = binio::get_u32(head);
    const double sigma = binio::get_f64(head + 4);
    std::vector<unsigned char> payload(8 * std::size_t{k} * static_cast<std::size_t>(requested));
    if (!read_exact(payload.data(), payload.size())) return 2;
    RowMatrix batch(k, requested);
    binio::get_f64s(payload.data(), std::span(batch.data(), static_cast<std::size_t>(batch.size())));
    RowMatrix out = handler(batch, sigma);
    std::vector<unsigned char> resp;
    resp.push_back(wire::kResponse);
    binio::put_u32(resp, static_cast<std::uint32_t>(out.rows()));
    binio::put_f64s(resp, std::span(out.data(), static_cast<std::size_t>(out.size())));
    if (!write_all(resp)) return 2;
  }
}

}  // namespace dkit
