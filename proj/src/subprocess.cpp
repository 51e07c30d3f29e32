#include "sonoscan/subprocess.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>

#include "sonoscan/error.hpp"

namespace sonoscan {

std::vector<std::string> split_command(const std::string& command) {
  std::vector<std::string> parts;
  std::string current;
  bool in_token = false;
  char quote = 0;
  for (char c : command) {
    if (quote != 0) {
      if (c == quote) {
        quote = 0;
      } else {
        current += c;
      }
    } else if (c == '\'' || c == '"') {
      quote = c;
      in_token = true;
    } else if (c == ' ' || c == '\t' || c == '\n') {
      if (in_token) {
        parts.push_back(std::move(current));
        current.clear();
        in_token = false;
      }
    } else {
      current += c;
      in_token = true;
    }
  }
  if (in_token) parts.push_back(std::move(current));
  return parts;
}

namespace {

struct Pipe {
  int fds[2] = {-1, -1};
  Pipe() {
    if (::pipe2(fds, O_CLOEXEC) != 0) {
      throw ExternalCommandError(std::string("pipe: ") + std::strerror(errno), {});
    }
  }
  ~Pipe() {
    close_read();
    close_write();
  }
  void close_read() {
    if (fds[0] >= 0) ::close(fds[0]);
    fds[0] = -1;
  }
  void close_write() {
    if (fds[1] >= 0) ::close(fds[1]);
    fds[1] = -1;
  }
};

}  // namespace

ProcessResult run_process(const std::vector<std::string>& argv, const std::string& input,
                          std::optional<std::chrono::milliseconds> timeout) {
  if (argv.empty()) throw ExternalCommandError("empty command", {});
  // A child that exits without reading stdin must not kill us via SIGPIPE.
  static const bool sigpipe_ignored = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)sigpipe_ignored;

  Pipe in_pipe, out_pipe, err_pipe, exec_status;
  std::vector<char*> c_argv;
  c_argv.reserve(argv.size() + 1);
  for (const auto& a : argv) c_argv.push_back(const_cast<char*>(a.c_str()));
  c_argv.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) throw ExternalCommandError(std::string("fork: ") + std::strerror(errno), {});
  if (pid == 0) {
    ::dup2(in_pipe.fds[0], STDIN_FILENO);
    ::dup2(out_pipe.fds[1], STDOUT_FILENO);
    ::dup2(err_pipe.fds[1], STDERR_FILENO);
    ::execvp(c_argv[0], c_argv.data());
    const int err = errno;
    [[maybe_unused]] auto n = ::write(exec_status.fds[1], &err, sizeof(err));
    ::_exit(127);
  }

  in_pipe.close_read();
  out_pipe.close_write();
  err_pipe.close_write();
  exec_status.close_write();

  int exec_errno = 0;
  if (::read(exec_status.fds[0], &exec_errno, sizeof(exec_errno)) == sizeof(exec_errno)) {
    int status;
    ::waitpid(pid, &status, 0);
    throw CommandNotFoundError("cannot execute '" + argv[0] + "': " + std::strerror(exec_errno));
  }

  ProcessResult result;
  std::size_t written = 0;
  if (input.empty()) in_pipe.close_write();
  ::fcntl(in_pipe.fds[1], F_SETFL, O_NONBLOCK);

  const auto deadline = timeout ? std::chrono::steady_clock::now() + *timeout
                                : std::chrono::steady_clock::time_point::max();
  std::array<char, 8192> buffer;
  while (out_pipe.fds[0] >= 0 || err_pipe.fds[0] >= 0) {
    std::array<pollfd, 3> polls{};
    nfds_t n = 0;
    int out_idx = -1, err_idx = -1, in_idx = -1;
    if (out_pipe.fds[0] >= 0) {
      out_idx = static_cast<int>(n);
      polls[n++] = {out_pipe.fds[0], POLLIN, 0};
    }
    if (err_pipe.fds[0] >= 0) {
      err_idx = static_cast<int>(n);
      polls[n++] = {err_pipe.fds[0], POLLIN, 0};
    }
    if (in_pipe.fds[1] >= 0) {
      in_idx = static_cast<int>(n);
      polls[n++] = {in_pipe.fds[1], POLLOUT, 0};
    }
    int wait_ms = -1;
    if (timeout) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        ::kill(pid, SIGKILL);
        int status;
        ::waitpid(pid, &status, 0);
        throw ExternalCommandError("'" + argv[0] + "' timed out", result.stderr_text);
      }
      wait_ms = static_cast<int>(left.count());
    }
    if (::poll(polls.data(), n, wait_ms) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    auto drain = [&](int idx, Pipe& pipe, std::string& sink) {
      if (idx < 0 || polls[idx].revents == 0) return;
      const ssize_t got = ::read(pipe.fds[0], buffer.data(), buffer.size());
      if (got > 0) {
        sink.append(buffer.data(), static_cast<std::size_t>(got));
      } else if (got == 0 || errno != EINTR) {
        pipe.close_read();
      }
    };
    drain(out_idx, out_pipe, result.stdout_text);
    drain(err_idx, err_pipe, result.stderr_text);
    if (in_idx >= 0 && polls[in_idx].revents != 0) {
      if (polls[in_idx].revents & (POLLERR | POLLHUP)) {
        in_pipe.close_write();
      } else {
        const ssize_t put = ::write(in_pipe.fds[1], input.data() + written, input.size() - written);
        if (put > 0) written += static_cast<std::size_t>(put);
        if (written == input.size() || (put < 0 && errno == EPIPE)) in_pipe.close_write();
      }
    }
  }
  in_pipe.close_write();

  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.exit_code = 128 + WTERMSIG(status);
  }
  return result;
}

}  // namespace sonoscan
