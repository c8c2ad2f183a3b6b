#include "command.hpp"

#include <fstream>
#include <stdexcept>

namespace difflm::cli {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::vector<std::string> expand_config(const CLI::App& app, int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty()) return args;
  const CLI::App* sub = app.get_subcommand_no_throw(args.front());
  if (sub == nullptr) return args;

  std::string path;
  std::vector<std::string> rest;
  for (size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 == args.size()) throw std::invalid_argument("--config requires a file path");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  std::vector<std::string> out{args.front()};
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = trim(line);
      if (line.empty() || line.front() == '#') continue;
      const std::string where = path + " line " + std::to_string(line_no) + ": ";
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::invalid_argument(where + "expected key=value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key == "config" || key == "help" ||
          sub->get_option_no_throw("--" + key) == nullptr) {
        throw std::invalid_argument(where + "unknown key '" + key + "' for command '" +
                                    sub->get_name() + "'");
      }
      out.push_back("--" + key + "=" + value);
    }
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

}  // namespace difflm::cli
