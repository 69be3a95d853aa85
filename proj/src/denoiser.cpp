#include "cmirror/denoiser.hpp"

#include "cmirror/io.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

namespace cmirror {

const char* to_string(DenoiserError::Kind kind) {
  switch (kind) {
    case DenoiserError::Kind::spawn_failed: return "spawn_failed";
    case DenoiserError::Kind::child_exited: return "child_exited";
    case DenoiserError::Kind::malformed_reply: return "malformed_reply";
    case DenoiserError::Kind::wrong_dimensions: return "wrong_dimensions";
    case DenoiserError::Kind::non_finite: return "non_finite";
    case DenoiserError::Kind::timeout: return "timeout";
  }
  return "unknown";
}

namespace {

using Clock = std::chrono::steady_clock;

enum class FrameState { incomplete, malformed, complete };

// Scans a PFM header at the front of `buf`. On `complete`, `frame_bytes` is the full
// frame length (header + payload).
FrameState scan_frame(const std::string& buf, std::size_t& frame_bytes) {
  std::size_t pos = 0;
  std::string tok[4];
  for (int i = 0; i < 4; ++i) {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (pos == buf.size()) {
      // token may still be growing; reject early when it already cannot be valid
      if (i == 0 && buf.size() - start >= 2 && buf.compare(start, 2, "Pf") != 0) return FrameState::malformed;
      if (buf.size() - start > 64) return FrameState::malformed;
      return FrameState::incomplete;
    }
    tok[i] = buf.substr(start, pos - start);
    ++pos;  // the single separator
    if (i == 0 && tok[0] != "Pf") return FrameState::malformed;
  }
  char* end = nullptr;
  const long w = std::strtol(tok[1].c_str(), &end, 10);
  if (*end != '\0' || w <= 0) return FrameState::malformed;
  const long h = std::strtol(tok[2].c_str(), &end, 10);
  if (*end != '\0' || h <= 0) return FrameState::malformed;
  const double s = std::strtod(tok[3].c_str(), &end);
  if (*end != '\0' || s == 0.0 || !std::isfinite(s)) return FrameState::malformed;
  frame_bytes = pos + static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 4;
  return buf.size() >= frame_bytes ? FrameState::complete : FrameState::incomplete;
}

}  // namespace

SubprocessDenoiser::SubprocessDenoiser(std::string command, double timeout_seconds)
    : command_(std::move(command)), timeout_(timeout_seconds) {
  int sv[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0)
    throw DenoiserError(DenoiserError::Kind::spawn_failed, std::string("denoiser: socketpair: ") + std::strerror(errno));
  std::fflush(nullptr);
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(sv[0]);
    ::close(sv[1]);
    throw DenoiserError(DenoiserError::Kind::spawn_failed, std::string("denoiser: fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    // own group: a kill must also reach whatever the shell started
    ::setpgid(0, 0);
    ::dup2(sv[1], STDIN_FILENO);
    ::dup2(sv[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(sv[1]);
  fd_ = sv[0];
  pid_ = pid;
  ::fcntl(fd_, F_SETFL, ::fcntl(fd_, F_GETFL) | O_NONBLOCK);
}

SubprocessDenoiser::~SubprocessDenoiser() { shutdown(); }

void SubprocessDenoiser::shutdown() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_WR);
  }
  if (pid_ > 0) {
    // give a well-behaved child a moment to see EOF and leave
    int status = 0;
    const auto until = Clock::now() + std::chrono::milliseconds(broken_ ? 0 : 500);
    while (::waitpid(pid_, &status, WNOHANG) == 0) {
      if (Clock::now() >= until) {
        ::kill(-pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    ::kill(-pid_, SIGKILL);  // stragglers left by the shell
    pid_ = -1;
  }
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void SubprocessDenoiser::fail(DenoiserError::Kind kind, const std::string& what) {
  broken_ = true;
  shutdown();
  throw DenoiserError(kind, "denoiser (" + std::string(to_string(kind)) + "): " + what);
}

Image SubprocessDenoiser::denoise(const Image& x, double sigma) {
  if (broken_ || pid_ < 0) throw DenoiserError(DenoiserError::Kind::child_exited, "denoiser is no longer running");

  std::ostringstream req;
  char line[64];
  std::snprintf(line, sizeof line, "DENOISE sigma=%.9g\n", sigma);
  req << line;
  write_pfm(x, req);
  const std::string out = req.str();

  const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(timeout_));
  std::size_t sent = 0;
  std::string reply;
  std::size_t frame_bytes = 0;
  char buf[65536];
  for (;;) {
    const auto now = Clock::now();
    if (now >= deadline) fail(DenoiserError::Kind::timeout, "no reply within " + std::to_string(timeout_) + " s");
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();

    pollfd p{fd_, static_cast<short>(POLLIN | (sent < out.size() ? POLLOUT : 0)), 0};
    const int rc = ::poll(&p, 1, static_cast<int>(std::min<long long>(left + 1, 1000)));
    if (rc < 0) {
      if (errno == EINTR) continue;
      fail(DenoiserError::Kind::child_exited, std::string("poll: ") + std::strerror(errno));
    }
    if (rc == 0) continue;

    if (sent < out.size() && (p.revents & POLLOUT)) {
      const ssize_t n = ::send(fd_, out.data() + sent, out.size() - sent, MSG_NOSIGNAL);
      if (n < 0 && errno != EAGAIN && errno != EINTR)
        fail(DenoiserError::Kind::child_exited, "child stopped reading its input");
      if (n > 0) sent += static_cast<std::size_t>(n);
    }
    if (p.revents & (POLLIN | POLLHUP | POLLERR)) {
      const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
      if (n < 0 && errno != EAGAIN && errno != EINTR)
        fail(DenoiserError::Kind::child_exited, std::string("read: ") + std::strerror(errno));
      if (n == 0) {
        if (reply.empty()) fail(DenoiserError::Kind::child_exited, "child closed its output without replying");
        fail(DenoiserError::Kind::malformed_reply, "reply truncated after " + std::to_string(reply.size()) + " bytes");
      }
      if (n > 0) reply.append(buf, static_cast<std::size_t>(n));
    }
    if (!reply.empty()) {
      const FrameState st = scan_frame(reply, frame_bytes);
      if (st == FrameState::malformed) fail(DenoiserError::Kind::malformed_reply, "reply is not a grayscale PFM frame");
      if (st == FrameState::complete) break;
    }
  }
  if (reply.size() > frame_bytes) fail(DenoiserError::Kind::malformed_reply, "unexpected bytes after reply frame");

  Image y;
  try {
    std::istringstream in(reply);
    y = read_pfm(in, "denoiser reply");
  } catch (const std::exception& e) {
    fail(DenoiserError::Kind::malformed_reply, e.what());
  }
  if (y.rows() != x.rows() || y.cols() != x.cols())
    fail(DenoiserError::Kind::wrong_dimensions,
         "reply is " + std::to_string(y.cols()) + "x" + std::to_string(y.rows()) + ", expected " +
             std::to_string(x.cols()) + "x" + std::to_string(x.rows()));
  if (!all_finite(y)) fail(DenoiserError::Kind::non_finite, "reply contains non-finite pixels");
  return y;
}

Image gaussian_blur(const Image& img, double sigma_px) {
  if (!(sigma_px > 0)) return img;
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_px)));
  Eigen::ArrayXd g(2 * r + 1);
  for (int i = -r; i <= r; ++i) g[i + r] = std::exp(-0.5 * i * i / (sigma_px * sigma_px));
  g /= g.sum();
  const Image p = pad_replicate(img, r);
  const Eigen::Index h = img.rows(), w = img.cols();
  Image rows = Image::Zero(p.rows(), w);
  for (int i = 0; i <= 2 * r; ++i) rows += g[i] * p.block(0, i, p.rows(), w);
  Image out = Image::Zero(h, w);
  for (int i = 0; i <= 2 * r; ++i) out += g[i] * rows.block(i, 0, h, w);
  return out;
}

} // namespace cmirror
