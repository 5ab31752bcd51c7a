#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfbench/error.hpp"
#include "cfbench/text.hpp"

extern char** environ;

namespace cfbench {

struct CompilerConfig {
  std::filesystem::path compiler_path = "gcc";
  // Appended after `main.c -o <scratch>`.
  std::vector<std::string> flags = {"-lm"};
  std::chrono::milliseconds timeout{30'000};
  std::filesystem::path workdir_root = std::filesystem::temp_directory_path();
  std::size_t max_source_bytes = 1u << 20;
  // Byte cap on the stderr text fed back to the model.
  std::size_t error_cap_bytes = 8u << 10;
  // Environment variables withheld from the compiler, on top of any name containing API_KEY.
  std::vector<std::string> scrub_env;

  void validate() const {
    if (timeout.count() <= 0) throw usage_error("compiler timeout must be positive");
    for (const auto& f : flags) {
      if (f.rfind("-o", 0) == 0) {
        throw usage_error("compiler flags must not set the output path: " + f);
      }
    }
  }
};

enum class Severity { error, warning, fatal, note, linker };

inline std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::error: return "error";
    case Severity::warning: return "warning";
    case Severity::fatal: return "fatal";
    case Severity::note: return "note";
    case Severity::linker: return "linker";
  }
  return "error";
}

struct Diagnostic {
  std::string file;
  std::optional<int> line;
  std::optional<int> column;
  Severity severity = Severity::error;
  std::string message;
  std::string raw;  // original stderr lines, '\n'-joined

  bool is_failure() const {
    return severity == Severity::error || severity == Severity::fatal || severity == Severity::linker;
  }
};

struct CompileOutcome {
  bool success = false;
  int exit_code = -1;
  std::vector<Diagnostic> diagnostics;
  std::string stderr_raw;
  std::chrono::milliseconds duration{0};
  bool timed_out = false;
};

class SourceTooLargeError : public Error {
 public:
  explicit SourceTooLargeError(std::size_t size)
      : Error(ErrorKind::data, "source of " + std::to_string(size) + " bytes exceeds the compile size cap") {}
};

namespace detail {

inline std::optional<int> parse_positive(std::string_view s) {
  if (s.empty() || s.size() > 9) return std::nullopt;
  int v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + (c - '0');
  }
  if (v <= 0) return std::nullopt;
  return v;
}

struct SeverityToken {
  std::string_view text;
  Severity severity;
};

constexpr SeverityToken kSeverityTokens[] = {
    {": fatal error: ", Severity::fatal},
    {": internal compiler error: ", Severity::fatal},
    {": error: ", Severity::error},
    {": sorry, unimplemented: ", Severity::error},
    {": warning: ", Severity::warning},
    {": note: ", Severity::note},
};

inline bool is_linker_tool(std::string_view tool) {
  const auto slash = tool.rfind('/');
  const std::string_view base = slash == std::string_view::npos ? tool : tool.substr(slash + 1);
  return base == "ld" || base.rfind("ld.", 0) == 0 || base == "collect2" || base == "lld" ||
         base == "ld.lld";
}

inline std::string_view first_field(std::string_view line) {
  const auto colon = line.find(':');
  return colon == std::string_view::npos ? std::string_view{} : line.substr(0, colon);
}

inline bool is_linker_line(std::string_view line) {
  if (text::contains(line, "undefined reference to") || text::contains(line, "multiple definition of")) {
    return true;
  }
  const auto tool = first_field(line);
  return !tool.empty() && is_linker_tool(tool);
}

// Header lines that introduce the diagnostic that follows them.
inline bool is_context_line(std::string_view line) {
  if (line.rfind("In file included from ", 0) == 0) return true;
  const auto body = text::trim_left(line);
  if (body.size() < line.size() && body.rfind("from ", 0) == 0) return true;
  if (!line.empty() && line.back() == ':') {
    if (text::contains(line, ": In function ") || text::contains(line, ": In member function ") ||
        text::contains(line, ": In static member function ") || text::contains(line, ": In constructor ") ||
        text::contains(line, ": In destructor ") || text::contains(line, ": In instantiation of ") ||
        text::contains(line, ": At top level:") || text::contains(line, ": At global scope:") ||
        text::contains(line, ": in function `") || text::contains(line, ": in function '")) {
      return true;
    }
  }
  return false;
}

inline std::optional<Diagnostic> parse_located(std::string_view line) {
  std::size_t best = std::string_view::npos;
  const SeverityToken* token = nullptr;
  for (const auto& t : kSeverityTokens) {
    const auto p = line.find(t.text);
    if (p != std::string_view::npos && (best == std::string_view::npos || p < best)) {
      best = p;
      token = &t;
    }
  }
  if (token == nullptr || best == 0) return std::nullopt;
  std::string_view prefix = line.substr(0, best);
  if (prefix.find(' ') != std::string_view::npos || prefix.find('\t') != std::string_view::npos) {
    return std::nullopt;
  }
  Diagnostic d;
  d.severity = token->severity;
  d.message = std::string(line.substr(best + token->text.size()));
  // Peel up to two trailing numeric fields: file:line:col or file:line.
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto colon = prefix.find(':', start);
    if (colon == std::string_view::npos) {
      fields.push_back(prefix.substr(start));
      break;
    }
    fields.push_back(prefix.substr(start, colon - start));
    start = colon + 1;
  }
  std::size_t file_fields = fields.size();
  if (fields.size() >= 3 && parse_positive(fields.back()) && parse_positive(fields[fields.size() - 2])) {
    d.line = parse_positive(fields[fields.size() - 2]);
    d.column = parse_positive(fields.back());
    file_fields -= 2;
  } else if (fields.size() >= 2 && parse_positive(fields.back())) {
    d.line = parse_positive(fields.back());
    file_fields -= 1;
  }
  d.file = std::string(prefix.substr(0, fields[0].size()));
  for (std::size_t i = 1; i < file_fields; ++i) {
    d.file += ':';
    d.file += fields[i];
  }
  if (d.file.empty()) return std::nullopt;
  return d;
}

inline Diagnostic make_linker(std::string_view line) {
  Diagnostic d;
  d.file = std::string(first_field(line));
  d.severity = text::contains(line, "warning:") && !text::contains(line, "undefined reference to")
                   ? Severity::warning
                   : Severity::linker;
  const auto ur = line.find("undefined reference to");
  if (ur != std::string_view::npos) {
    d.message = std::string(line.substr(ur));
  } else {
    const auto sep = line.find(": ");
    d.message = std::string(sep == std::string_view::npos ? line : line.substr(sep + 2));
  }
  return d;
}

inline void append_raw(std::string& raw, std::string_view line) {
  if (!raw.empty()) raw += '\n';
  raw += line;
}

}  // namespace detail

// Total over any input. Every non-empty stderr line lands in exactly one
// diagnostic's `raw`, in input order.
inline std::vector<Diagnostic> parse_diagnostics(std::string_view stderr_raw) {
  std::vector<Diagnostic> out;
  std::string pending;  // context lines waiting for the diagnostic they introduce

  auto start_diag = [&](Diagnostic d, std::string_view line) {
    d.raw = std::move(pending);
    pending.clear();
    detail::append_raw(d.raw, line);
    out.push_back(std::move(d));
  };

  for (std::string_view line : text::split_lines(stderr_raw)) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    if (detail::is_context_line(line) || (out.empty() && text::is_blank(line))) {
      detail::append_raw(pending, line);
      continue;
    }
    if (detail::is_linker_line(line)) {
      start_diag(detail::make_linker(line), line);
      continue;
    }
    if (auto located = detail::parse_located(line)) {
      start_diag(std::move(*located), line);
      continue;
    }
    // "cc1: fatal error: x: No such file or directory" with an odd prefix.
    if (text::contains(line, "fatal error:")) {
      Diagnostic d;
      d.severity = Severity::fatal;
      d.message = std::string(line.substr(line.find("fatal error:") + 13));
      start_diag(std::move(d), line);
      continue;
    }
    if (!out.empty()) {
      if (!pending.empty()) {
        detail::append_raw(out.back().raw, pending);
        pending.clear();
      }
      detail::append_raw(out.back().raw, line);
      continue;
    }
    Diagnostic catch_all;
    catch_all.severity = Severity::error;
    catch_all.message = std::string(line);
    start_diag(std::move(catch_all), line);
  }
  if (!pending.empty()) {
    if (!out.empty()) {
      detail::append_raw(out.back().raw, pending);
    } else {
      Diagnostic catch_all;
      catch_all.severity = Severity::error;
      catch_all.message = pending.substr(0, pending.find('\n'));
      catch_all.raw = std::move(pending);
      out.push_back(std::move(catch_all));
    }
  }
  return out;
}

// Feedback text: the raw stderr cut to `cap` bytes on a UTF-8 boundary, with a marker.
inline std::string truncate_error(std::string_view stderr_raw, std::size_t cap) {
  if (stderr_raw.size() <= cap) return std::string(stderr_raw);
  std::size_t cut = cap;
  while (cut > 0 && (static_cast<unsigned char>(stderr_raw[cut]) & 0xC0) == 0x80) --cut;
  std::string out(stderr_raw.substr(0, cut));
  out += "\n[... truncated " + std::to_string(stderr_raw.size() - cut) + " bytes]";
  return out;
}

// Child-process plumbing -----------------------------------------------------

struct ProcessResult {
  int exit_code = -1;
  std::string stdout_text;
  std::string stderr_text;
  bool timed_out = false;
  std::chrono::milliseconds duration{0};
};

inline bool is_executable(const std::filesystem::path& p) {
  std::error_code ec;
  return std::filesystem::is_regular_file(p, ec) && ::access(p.c_str(), X_OK) == 0;
}

// Resolves a bare program name through PATH.
inline std::optional<std::filesystem::path> find_executable(const std::filesystem::path& program) {
  if (program.empty()) return std::nullopt;
  if (program.string().find('/') != std::string::npos) {
    if (is_executable(program)) return std::filesystem::absolute(program);
    return std::nullopt;
  }
  const char* path_env = std::getenv("PATH");
  std::string_view path = path_env ? path_env : "/usr/local/bin:/usr/bin:/bin";
  std::size_t start = 0;
  while (start <= path.size()) {
    auto colon = path.find(':', start);
    if (colon == std::string_view::npos) colon = path.size();
    std::filesystem::path dir(std::string(path.substr(start, colon - start)));
    if (dir.empty()) dir = ".";
    if (auto candidate = dir / program; is_executable(candidate)) return candidate;
    start = colon + 1;
  }
  return std::nullopt;
}

inline std::vector<std::string> child_environment(const std::vector<std::string>& scrub,
                                                  const std::filesystem::path& tmpdir) {
  std::vector<std::string> env;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    std::string_view entry(*e);
    const auto eq = entry.find('=');
    const std::string_view name = entry.substr(0, eq);
    if (text::contains(name, "API_KEY") || name == "TMPDIR") continue;
    bool drop = false;
    for (const auto& s : scrub) drop = drop || name == s;
    if (!drop) env.emplace_back(entry);
  }
  if (!tmpdir.empty()) env.push_back("TMPDIR=" + tmpdir.string());
  return env;
}

// Runs argv[0] (an absolute path) in `cwd`. The child leads its own process
// group so a timeout kills the whole toolchain (cc1, as, ld).
inline ProcessResult run_process(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                                 const std::vector<std::string>& env, std::chrono::milliseconds timeout) {
  using clock = std::chrono::steady_clock;
  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);
  std::vector<char*> cenv;
  for (const auto& e : env) cenv.push_back(const_cast<char*>(e.c_str()));
  cenv.push_back(nullptr);
  const std::string cwd_str = cwd.string();

  int out_pipe[2];
  int err_pipe[2];
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) throw environment_error("pipe failed");
  if (::pipe2(err_pipe, O_CLOEXEC) != 0) {
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    throw environment_error("pipe failed");
  }

  const auto started = clock::now();
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1]}) ::close(fd);
    throw environment_error(std::string("fork failed: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::setpgid(0, 0);
    const int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) ::dup2(devnull, 0);
    ::dup2(out_pipe[1], 1);
    ::dup2(err_pipe[1], 2);
    if (!cwd_str.empty() && ::chdir(cwd_str.c_str()) != 0) ::_exit(126);
    ::execve(cargv[0], cargv.data(), cenv.data());
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);

  ProcessResult result;
  const auto deadline = started + timeout;
  pollfd fds[2] = {{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}};
  int open_fds = 2;
  char buf[8192];
  while (open_fds > 0) {
    int wait_ms = -1;
    if (!result.timed_out) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now());
      if (left.count() <= 0) {
        result.timed_out = true;
        ::kill(-pid, SIGKILL);
        ::kill(pid, SIGKILL);
        continue;
      }
      wait_ms = static_cast<int>(std::min<long long>(left.count(), 1'000'000));
    } else {
      wait_ms = 1000;
    }
    const int rc = ::poll(fds, 2, wait_ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (rc == 0) {
      if (result.timed_out) break;  // killed children left pipes open through a stray grandchild
      continue;
    }
    for (int i = 0; i < 2; ++i) {
      if (fds[i].fd < 0 || (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) == 0) continue;
      const ssize_t n = ::read(fds[i].fd, buf, sizeof buf);
      if (n > 0) {
        (i == 0 ? result.stdout_text : result.stderr_text).append(buf, static_cast<std::size_t>(n));
      } else if (n == 0 || (n < 0 && errno != EINTR && errno != EAGAIN)) {
        ::close(fds[i].fd);
        fds[i].fd = -1;
        --open_fds;
      }
    }
  }
  for (auto& f : fds) {
    if (f.fd >= 0) ::close(f.fd);
  }
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  result.duration = std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - started);
  if (result.timed_out) {
    result.exit_code = -1;
  } else if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.exit_code = 128 + WTERMSIG(status);
  }
  return result;
}

inline std::filesystem::path resolve_compiler(const CompilerConfig& cfg) {
  auto found = find_executable(cfg.compiler_path);
  if (!found) throw environment_error("compiler not found: " + cfg.compiler_path.string());
  return *found;
}

// First line of `<compiler> --version`.
inline std::string compiler_version(const CompilerConfig& cfg) {
  const auto cc = resolve_compiler(cfg);
  const auto r = run_process({cc.string(), "--version"}, {}, child_environment(cfg.scrub_env, {}),
                             std::chrono::milliseconds(10'000));
  const auto nl = r.stdout_text.find('\n');
  return r.stdout_text.substr(0, nl);
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::filesystem::path& root) {
    std::string templ = (root / "cfbench-XXXXXX").string();
    if (::mkdtemp(templ.data()) == nullptr) {
      throw environment_error("cannot create scratch directory under " + root.string());
    }
    path_ = templ;
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Writes `source` to a fresh directory as main.c and builds it; the binary is never run.
inline CompileOutcome compile(std::string_view source, const CompilerConfig& cfg) {
  cfg.validate();
  const auto cc = resolve_compiler(cfg);
  if (source.size() > cfg.max_source_bytes) throw SourceTooLargeError(source.size());

  ScratchDir dir(cfg.workdir_root);
  text::write_file(dir.path() / "main.c", source);

  std::vector<std::string> argv = {cc.string(), "main.c", "-o", "scratch.bin"};
  argv.insert(argv.end(), cfg.flags.begin(), cfg.flags.end());
  auto r = run_process(argv, dir.path(), child_environment(cfg.scrub_env, dir.path()), cfg.timeout);

  CompileOutcome outcome;
  outcome.exit_code = r.exit_code;
  outcome.timed_out = r.timed_out;
  outcome.duration = r.duration;
  outcome.stderr_raw = std::move(r.stderr_text);
  outcome.diagnostics = parse_diagnostics(outcome.stderr_raw);
  outcome.success = outcome.exit_code == 0 && !outcome.timed_out;
  return outcome;
}

}  // namespace cfbench
