#pragma once
// External detectors: one subprocess per task, newline-delimited JSON over
// stdin/stdout. stderr goes to a log file and is never parsed.
//
//   -> {"type":"hello","protocol":1}          <- {"type":"hello","name":str,"protocol":1}
//   -> {"type":"fit","series":[{"id":str,"values":[...]}, ...]}   <- {"type":"fit_done"}
//   -> {"type":"score","id":str,"context":[...],"values":[...]}  <- {"type":"scores","id":str,"scores":[...]}
//   -> {"type":"shutdown"}                     (process exits 0)
//   <- {"type":"error","message":str} at any point

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsadbench/core.hpp"
#include "tsadbench/schemas.hpp"

extern char** environ;

namespace tsadbench {

inline constexpr int kProtocolVersion = 1;

struct ExternalDetectorSpec {
  std::vector<std::string> command;
  double startup_timeout = 30.0;   // seconds, covers the hello exchange
  double message_timeout = 300.0;  // seconds, per fit/score reply
  std::filesystem::path stderr_log;  // empty: discard

  void validate() const {
    if (command.empty()) throw Error(ErrorCode::ConfigError, "external detector command is empty");
    if (!(startup_timeout > 0.0) || !(message_timeout > 0.0))
      throw Error(ErrorCode::ConfigError, "external detector timeouts must be positive");
  }
};

/// A spawned child with piped stdin/stdout. The destructor kills and reaps it
/// if it is still running.
class ChildProcess {
 public:
  using Clock = std::chrono::steady_clock;

  ChildProcess(const std::vector<std::string>& argv, const std::filesystem::path& stderr_log) {
    static std::once_flag sigpipe_once;
    std::call_once(sigpipe_once, [] { ::signal(SIGPIPE, SIG_IGN); });

    int in_pipe[2];
    int out_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw Error(ErrorCode::IoError, "pipe2 failed");
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
      ::close(in_pipe[0]);
      ::close(in_pipe[1]);
      throw Error(ErrorCode::IoError, "pipe2 failed");
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_pipe[0], 0);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], 1);
    const std::string log = stderr_log.empty() ? std::string("/dev/null") : stderr_log.string();
    posix_spawn_file_actions_addopen(&actions, 2, log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);

    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    const int rc = ::posix_spawnp(&pid_, args[0], &actions, nullptr, args.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    if (rc != 0) {
      ::close(in_pipe[1]);
      ::close(out_pipe[0]);
      throw Error(ErrorCode::NonZeroExit, "cannot spawn '" + argv[0] + "': " + std::strerror(rc));
    }
    in_fd_ = in_pipe[1];
    out_fd_ = out_pipe[0];
    ::fcntl(in_fd_, F_SETFL, ::fcntl(in_fd_, F_GETFL) | O_NONBLOCK);
    ::fcntl(out_fd_, F_SETFL, ::fcntl(out_fd_, F_GETFL) | O_NONBLOCK);
  }

  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  ~ChildProcess() {
    close_stdin();
    if (out_fd_ >= 0) ::close(out_fd_);
    if (!reaped_) {
      ::kill(pid_, SIGKILL);
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
  }

  /// False if the child closed its stdin.
  bool send_line(const std::string& line, double timeout_s) {
    if (in_fd_ < 0) return false;
    const auto deadline = Clock::now() + to_duration(timeout_s);
    std::string data = line + "\n";
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t w = ::write(in_fd_, data.data() + off, data.size() - off);
      if (w > 0) {
        off += static_cast<std::size_t>(w);
        continue;
      }
      if (w < 0 && errno == EPIPE) return false;
      if (w < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) return false;
      pollfd p{in_fd_, POLLOUT, 0};
      const int ms = remaining_ms(deadline);
      if (ms <= 0) throw Error(ErrorCode::Timeout, "timed out writing to external detector");
      ::poll(&p, 1, ms);
    }
    return true;
  }

  /// Next stdout line, or nullopt at EOF. Throws Timeout.
  std::optional<std::string> read_line(double timeout_s) {
    const auto deadline = Clock::now() + to_duration(timeout_s);
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      if (eof_) {
        if (buffer_.empty()) return std::nullopt;
        std::string rest = std::move(buffer_);
        buffer_.clear();
        return rest;
      }
      const int ms = remaining_ms(deadline);
      if (ms <= 0) throw Error(ErrorCode::Timeout, "external detector did not reply within " + seconds_text(timeout_s));
      pollfd p{out_fd_, POLLIN, 0};
      const int pr = ::poll(&p, 1, ms);
      if (pr <= 0) continue;
      char buf[65536];
      const ssize_t r = ::read(out_fd_, buf, sizeof buf);
      if (r > 0) buffer_.append(buf, static_cast<std::size_t>(r));
      else if (r == 0) eof_ = true;
      else if (errno != EAGAIN && errno != EINTR) eof_ = true;
    }
  }

  void close_stdin() {
    if (in_fd_ >= 0) {
      ::close(in_fd_);
      in_fd_ = -1;
    }
  }

  /// Waits for exit; returns the exit code (128+signal when killed by a
  /// signal), or nullopt if still running after the timeout.
  std::optional<int> wait(double timeout_s) {
    if (reaped_) return exit_code_;
    const auto deadline = Clock::now() + to_duration(timeout_s);
    for (;;) {
      int status = 0;
      const pid_t r = ::waitpid(pid_, &status, WNOHANG);
      if (r == pid_) {
        reaped_ = true;
        exit_code_ = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
        return exit_code_;
      }
      if (r < 0) {
        reaped_ = true;
        exit_code_ = -1;
        return exit_code_;
      }
      if (Clock::now() >= deadline) return std::nullopt;
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
  }

 private:
  static Clock::duration to_duration(double s) {
    return std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(s));
  }
  static int remaining_ms(Clock::time_point deadline) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1000 * 60 * 60));
  }
  static std::string seconds_text(double s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%gs", s);
    return buf;
  }

  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  std::string buffer_;
  bool eof_ = false;
  bool reaped_ = false;
  int exit_code_ = 0;
};

namespace detail {

class ExternalSession {
 public:
  ExternalSession(const ExternalDetectorSpec& spec) : spec_(spec), child_(spec.command, spec.stderr_log) {}

  ~ExternalSession() {
    if (!shut_down_) {
      // Best effort on the error path: ask politely, then the child's destructor kills.
      try {
        child_.send_line(R"({"type":"shutdown"})", 1.0);
        child_.close_stdin();
        child_.wait(1.0);
      } catch (...) {
      }
    }
  }

  nlohmann::json request(const nlohmann::json& msg, std::string_view expect, double timeout) {
    if (!child_.send_line(msg.dump(), timeout)) died("while sending '" + msg.at("type").get<std::string>() + "'");
    const auto line = child_.read_line(timeout);
    if (!line) died("before replying to '" + msg.at("type").get<std::string>() + "'");
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(*line);
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::ProtocolError, "malformed reply: " + line->substr(0, 200));
    }
    if (!reply.is_object() || !reply.contains("type") || !reply.at("type").is_string())
      throw Error(ErrorCode::ProtocolError, "reply has no type field");
    const auto type = reply.at("type").get<std::string>();
    if (type == "error")
      throw Error(ErrorCode::ProtocolError, "detector reported: " + reply.value("message", std::string("(no message)")));
    if (type != expect)
      throw Error(ErrorCode::ProtocolError, "expected '" + std::string(expect) + "' reply, got '" + type + "'");
    return reply;
  }

  void shutdown() {
    shut_down_ = true;
    child_.send_line(R"({"type":"shutdown"})", spec_.message_timeout);
    child_.close_stdin();
    const auto code = child_.wait(spec_.startup_timeout);
    if (!code) throw Error(ErrorCode::Timeout, "external detector did not exit after shutdown");
    if (*code != 0) throw Error(ErrorCode::NonZeroExit, "external detector exited with status " + std::to_string(*code));
  }

 private:
  [[noreturn]] void died(const std::string& when) {
    const auto code = child_.wait(spec_.startup_timeout);
    if (code && *code != 0)
      throw Error(ErrorCode::NonZeroExit, "external detector exited with status " + std::to_string(*code) + " " + when);
    throw Error(ErrorCode::ProtocolError, "external detector closed its output " + when);
  }

  const ExternalDetectorSpec& spec_;
  ChildProcess child_;
  bool shut_down_ = false;
};

inline nlohmann::json number_array(std::span<const double> v) {
  auto arr = nlohmann::json::array();
  for (double x : v) arr.push_back(x);
  return arr;
}

}  // namespace detail

using SeriesLookup = std::function<const TimeSeries*(const std::string&)>;

struct DriveResult {
  std::vector<ScoreSeries> scores;
  double fit_seconds = 0.0;
  double inference_seconds = 0.0;
};

/// Runs one task through an external detector process: hello, one fit, one
/// score request per evaluation target, shutdown. Throws Error with
/// ProtocolError, Timeout, NonZeroExit or LengthMismatch.
inline DriveResult drive_timed(const ExternalDetectorSpec& spec, const Task& task, const SeriesLookup& lookup) {
  spec.validate();
  using Clock = std::chrono::steady_clock;
  auto series_of = [&](const std::string& id) {
    const TimeSeries* s = lookup(id);
    if (!s) throw Error(ErrorCode::ConfigError, "unknown series '" + id + "' in task");
    return s;
  };

  detail::ExternalSession session(spec);
  const auto hello = session.request({{"type", "hello"}, {"protocol", kProtocolVersion}}, "hello", spec.startup_timeout);
  if (!hello.contains("protocol") || !hello.at("protocol").is_number_integer() ||
      hello.at("protocol").get<int>() != kProtocolVersion)
    throw Error(ErrorCode::ProtocolError, "detector speaks an unsupported protocol version");

  DriveResult out;
  nlohmann::json fit_msg{{"type", "fit"}, {"series", nlohmann::json::array()}};
  for (const auto& ref : task.train_refs) {
    const TimeSeries* s = series_of(ref.series_id);
    fit_msg["series"].push_back({{"id", ref.series_id}, {"values", detail::number_array(s->values_in(ref.region))}});
  }
  auto t0 = Clock::now();
  session.request(fit_msg, "fit_done", spec.message_timeout);
  out.fit_seconds = std::chrono::duration<double>(Clock::now() - t0).count();

  for (const auto& ref : task.eval_refs) {
    const TimeSeries* s = series_of(ref.series_id);
    nlohmann::json msg{{"type", "score"},
                       {"id", ref.series_id},
                       {"context", detail::number_array(s->values_in({0, ref.region.begin}))},
                       {"values", detail::number_array(s->values_in(ref.region))}};
    t0 = Clock::now();
    const auto reply = session.request(msg, "scores", spec.message_timeout);
    out.inference_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
    ScoreSeries ss;
    ss.series_id = ref.series_id;
    try {
      if (reply.value("id", std::string()) != ref.series_id)
        throw Error(ErrorCode::ProtocolError, "scores reply for wrong series");
      for (const auto& v : reply.at("scores")) ss.scores.push_back(v.get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ProtocolError, std::string("bad scores reply: ") + e.what());
    }
    validate_scores(ss, *s);
    out.scores.push_back(std::move(ss));
  }
  session.shutdown();
  return out;
}

inline std::vector<ScoreSeries> drive(const ExternalDetectorSpec& spec, const Task& task, const SeriesLookup& lookup) {
  return drive_timed(spec, task, lookup).scores;
}

}  // namespace tsadbench
