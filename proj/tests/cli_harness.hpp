// Runs the installed fdm binary and captures merged stdout/stderr plus the
// exit code, so tests can assert on the real process boundary (exit codes,
// printed tables, error messages) instead of re-testing library internals.
#pragma once

#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include <sys/wait.h>

namespace cli {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved

  bool contains(const std::string& needle) const {
    return output.find(needle) != std::string::npos;
  }
};

// `args` is appended verbatim after the binary path; callers keep their
// paths free of shell metacharacters.
inline RunResult run(const std::string& args) {
  const std::string cmd = std::string(FDM_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed for: " + cmd);
  RunResult res;
  char buf[4096];
  size_t got;
  while ((got = fread(buf, 1, sizeof(buf), pipe)) > 0) res.output.append(buf, got);
  const int status = pclose(pipe);
  if (WIFEXITED(status))
    res.exit_code = WEXITSTATUS(status);
  else
    res.exit_code = -1;
  return res;
}

}  // namespace cli
