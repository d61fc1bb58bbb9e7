#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "amda/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Adversarial and mixup data augmentation experiments"};
  std::string config_path;
  std::vector<std::string> overrides;
  amda::cli::RunOptions options;
  app.add_option("-c,--config", config_path, "key = value config file")->required()->check(CLI::ExistingFile);
  app.add_option("-s,--set", overrides, "override a config key (key=value), repeatable");
  app.add_option("--name", options.name, "checkpoint name written by train / train-amda");
  app.add_option("--model", options.model, "checkpoint to attack or evaluate");
  app.add_option("--victim", options.victim, "victim checkpoint for augment and eval-sae");
  app.require_subcommand(1, 1);
  const std::map<std::string, std::string> help{
      {"train", "train a baseline classifier"},
      {"attack", "attack a checkpoint on the test split"},
      {"augment", "build the adversarially augmented training set"},
      {"train-amda", "train on augmented data with mixup"},
      {"eval-sae", "score a model on adversarial examples crafted against a victim"},
      {"eval-tae", "score a model against attacks on itself"},
      {"seed-exp", "victim vs reseeded models under both protocols"},
      {"sweep", "robustness across ada.ratio or mixup.alpha"},
      {"report", "collect reports into report.md"}};
  for (const auto& name : amda::cli::subcommands()) app.add_subcommand(name, help.at(name))->fallthrough();
  CLI11_PARSE(app, argc, argv);

  const std::string subcommand = app.get_subcommands().front()->get_name();
  try {
    auto config = amda::load_config(config_path);
    amda::cli::apply_environment(config, options);
    for (const auto& kv : overrides) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw amda::ConfigError("--set expects key=value, got '" + kv + "'");
      amda::apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    amda::cli::run(subcommand, config, options, std::cout);
  } catch (const amda::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << subcommand << " failed: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
