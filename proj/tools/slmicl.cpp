// Command-line entry point: slmicl <command> [--config PATH] [--key value ...]

#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "slmicl/run.hpp"

namespace {

// Turns leftover "--key value" / "--key=value" arguments into config overrides.
void apply_overrides(slmicl::RunConfig& cfg, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() < 3)
      slmicl::fail(slmicl::ErrorCode::config, "unexpected argument '" + a + "'");
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      cfg.set(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) slmicl::fail(slmicl::ErrorCode::config, "missing value for '" + a + "'");
      cfg.set(a.substr(2), extras[++i]);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-tuning warmup for in-context learning on a miniature unit language model"};
  app.require_subcommand(1, 1);
  std::optional<std::string> seed, out;
  app.add_option("--seed", seed, "Base seed for every component");
  app.add_option("--out", out, "Output directory");

  std::string config_path;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"pretrain", "Fit the codebook and pretrain the unit LM"},
      {"warmup", "Prompt-tuning (or fine-tuning) warmup on the train tasks"},
      {"eval", "Accuracy and guessing-rate reports for all methods"},
      {"attention", "Per-layer attention mass by position group"},
      {"ablate-length", "Warmup and evaluation per utterance length"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "key = value config file");
    sub->allow_extras();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    slmicl::RunConfig cfg = config_path.empty() ? slmicl::RunConfig{} : slmicl::RunConfig::from_file(config_path);
    apply_overrides(cfg, sub->remaining());
    if (seed) cfg.set("seed", *seed);
    if (out) cfg.set("out", *out);
    slmicl::run_command(sub->get_name(), cfg);
  } catch (const slmicl::Error& e) {
    std::cerr << "slmicl: " << e.what() << "\n";
    return slmicl::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "slmicl: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
