// Command-line front end over the C API.
#include "popmap/popmap.h"

#include <CLI11.hpp>

#include <cstdio>
#include <map>
#include <string>
#include <vector>

namespace {

struct ConfigHandle {
  popmap_config* ptr = nullptr;
  ConfigHandle() { popmap_config_new(&ptr); }
  ~ConfigHandle() { popmap_config_free(ptr); }
  ConfigHandle(const ConfigHandle&) = delete;
  ConfigHandle& operator=(const ConfigHandle&) = delete;
};

int report_failure(popmap_status status) {
  std::fprintf(stderr, "error: status=%s exit=%d message=%s\n", popmap_status_name(status),
               popmap_exit_code(status), popmap_last_error());
  return popmap_exit_code(status);
}

void log_line(const char* line, void* user) {
  std::fprintf(stderr, "[%s] %s\n", static_cast<const char*>(user), line);
}

struct Options {
  std::string config_file;
  std::vector<std::string> sets; // key=value
  std::map<std::string, std::string> flags;
};

// Defaults, config file, then command-line values (flags win over --set).
int build_config(ConfigHandle& cfg, const std::string& file, const Options& opt) {
  if (!cfg.ptr)
    return report_failure(POPMAP_E_INTERNAL);
  if (!file.empty())
    if (auto s = popmap_config_load(cfg.ptr, file.c_str()); s != POPMAP_OK)
      return report_failure(s);
  std::map<std::string, std::string> merged;
  for (const auto& kv : opt.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: status=UsageError exit=1 message=--set expects key=value, got '%s'\n",
                   kv.c_str());
      return 1;
    }
    merged[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  for (const auto& [k, v] : opt.flags)
    merged[k] = v;
  std::vector<const char*> keys, values;
  for (const auto& [k, v] : merged) {
    keys.push_back(k.c_str());
    values.push_back(v.c_str());
  }
  if (auto s = popmap_config_apply(cfg.ptr, keys.data(), values.data(), keys.size());
      s != POPMAP_OK)
    return report_failure(s);
  if (auto s = popmap_config_validate(cfg.ptr); s != POPMAP_OK)
    return report_failure(s);
  return 0;
}

int run_commands(const std::string& file, const Options& opt,
                 const std::vector<std::string>& commands) {
  ConfigHandle cfg;
  if (int rc = build_config(cfg, file, opt))
    return rc;
  for (const auto& name : commands) {
    auto s = popmap_run(cfg.ptr, name.c_str(), &log_line, const_cast<char*>(name.c_str()));
    if (s != POPMAP_OK)
      return report_failure(s);
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Village population mapping from two-modality imagery"};
  app.require_subcommand(1);
  app.fallthrough();

  Options opt;
  app.add_option("--config", opt.config_file, "Experiment config file (key = value lines)");
  app.add_option("--set", opt.sets, "Override any config key, as key=value");

  // One flag per config key, e.g. --seed, --out, --workers, --learning_rate.
  std::vector<std::string> flag_values(popmap_config_key_count());
  std::vector<CLI::Option*> flag_opts;
  for (size_t i = 0; i < popmap_config_key_count(); ++i) {
    const std::string key = popmap_config_key(i);
    flag_opts.push_back(app.add_option("--" + key, flag_values[i], "Config key " + key));
  }

  std::vector<std::string> command_names;
  for (size_t i = 0; i < popmap_command_count(); ++i) {
    command_names.emplace_back(popmap_command_name(i));
    app.add_subcommand(command_names.back(), "Run the " + command_names.back() + " step");
  }
  app.add_subcommand("pipeline", "Run every step in order");
  auto* sweep = app.add_subcommand("sweep", "Run steps for each of several config files");
  std::vector<std::string> sweep_files;
  std::vector<std::string> sweep_steps = command_names;
  sweep->add_option("configs", sweep_files, "Config files")->required()->check(CLI::ExistingFile);
  sweep->add_option("--steps", sweep_steps, "Steps to run (default: all)")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  for (size_t i = 0; i < flag_opts.size(); ++i)
    if (flag_opts[i]->count() > 0)
      opt.flags[popmap_config_key(i)] = flag_values[i];

  auto* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  if (name == "sweep") {
    for (const auto& file : sweep_files) {
      std::fprintf(stderr, "[sweep] %s\n", file.c_str());
      if (int rc = run_commands(file, opt, sweep_steps))
        return rc;
    }
    return 0;
  }
  if (name == "pipeline")
    return run_commands(opt.config_file, opt, command_names);
  return run_commands(opt.config_file, opt, {name});
}
