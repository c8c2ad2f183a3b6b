#pragma once

#include <charconv>
#include <concepts>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

namespace difflm::cli {

inline std::string to_text(const std::string& v) { return v; }
inline std::string to_text(bool v) { return v ? "true" : "false"; }
inline std::string to_text(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}
template <std::integral T>
std::string to_text(T v) {
  return std::to_string(v);
}

using Settings = std::vector<std::pair<std::string, std::string>>;

// A subcommand whose options are echoed, in registration order, as the run's
// resolved configuration. Every command takes --config, --seed and --threads.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& description)
      : app_(parent.add_subcommand(name, description)) {
    app_->add_option("--config", config_path_, "File of key=value option defaults");
    option("seed", seed, "Random seed");
    option("threads", threads, "Worker threads; 1 is bit-reproducible")->check(CLI::PositiveNumber);
  }
  virtual ~Command() = default;
  Command(const Command&) = delete;
  Command& operator=(const Command&) = delete;

  virtual void run() = 0;

  CLI::App* app() const { return app_; }

  template <typename T>
  CLI::Option* option(const std::string& name, T& var, const std::string& help) {
    echo_.emplace_back(name, [&var] { return to_text(var); });
    return app_->add_option("--" + name, var, help)->capture_default_str();
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    echo_.emplace_back(name, [&var] { return to_text(var); });
    return app_->add_flag("--" + name, var, help);
  }

  Settings resolved() const {
    Settings out;
    for (const auto& [name, get] : echo_) out.emplace_back(name, get());
    return out;
  }

  // "# config key=value ..." line, newline-terminated.
  std::string config_line() const {
    std::string line = "# config " + app_->get_name();
    for (const auto& [k, v] : resolved()) line += " " + k + "=" + v;
    return line + "\n";
  }

  uint64_t seed = 0;
  size_t threads = 1;

 private:
  CLI::App* app_;
  std::string config_path_;
  std::vector<std::pair<std::string, std::function<std::string()>>> echo_;
};

// Rewrites argv so that values from `--config FILE` precede the explicit
// flags (which therefore win). Unknown keys are errors.
std::vector<std::string> expand_config(const CLI::App& app, int argc, char** argv);

}  // namespace difflm::cli
