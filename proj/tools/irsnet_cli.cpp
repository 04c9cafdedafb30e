#include <cstdio>
#include <optional>
#include <string>

#include "irsnet/experiment.hpp"

namespace {

void print_usage() {
  std::puts(
      "usage: irsnet <command> [options]\n"
      "\n"
      "commands:\n"
      "  train           train the spec's target model, write its checkpoint\n"
      "  eval            score a stored policy checkpoint on fresh realizations\n"
      "  sweep           compare methods along the spec's sweep axis\n"
      "  cdf             empirical minimum-rate distribution per method\n"
      "  array-response  reflection and beam patterns of one decided solution\n"
      "  fit-lmmse       fit and store the linear estimator's channel statistics\n"
      "  baseline        score the training-free methods at the operating point\n"
      "\n"
      "options:\n"
      "  --spec <file>      key=value experiment description\n"
      "  --profile <name>   starting defaults: desk (default) or paper\n"
      "  --seed <n>         override the command's seed (train: training seed,\n"
      "                     fit-lmmse: statistics seed, otherwise evaluation seed)\n"
      "  --out <dir>        output root (default from the spec)\n"
      "  --workers <n>      evaluation worker threads (default 1)\n"
      "  --ckpt <file>      checkpoint to load instead of the run directory's\n"
      "  --force            overwrite existing outputs\n"
      "\n"
      "Outputs land in <out>/<id>-<hash>/, addressed by the spec's semantic\n"
      "hash, so two different configurations never share a directory.");
}

uint64_t parse_seed(const std::string& text) {
  std::size_t used = 0;
  const unsigned long long v = std::stoull(text, &used);
  if (used != text.size()) throw irsnet::ConfigError("bad seed: " + text);
  return static_cast<uint64_t>(v);
}

int run(int argc, char** argv) {
  if (argc < 2) {
    print_usage();
    return 2;
  }
  const std::string verb = argv[1];
  if (verb == "help" || verb == "--help" || verb == "-h") {
    print_usage();
    return 0;
  }

  std::string spec_path;
  std::string profile = "desk";
  std::string out_root;
  std::optional<uint64_t> seed;
  irsnet::RunOptions opt;
  for (int i = 2; i < argc; ++i) {
    const std::string flag = argv[i];
    auto value = [&]() -> std::string {
      if (i + 1 >= argc) throw irsnet::ConfigError(flag + " needs a value");
      return argv[++i];
    };
    if (flag == "--spec")
      spec_path = value();
    else if (flag == "--profile")
      profile = value();
    else if (flag == "--seed")
      seed = parse_seed(value());
    else if (flag == "--out")
      out_root = value();
    else if (flag == "--workers")
      opt.workers = std::max(1, static_cast<int>(parse_seed(value())));
    else if (flag == "--ckpt")
      opt.checkpoint_path = value();
    else if (flag == "--force")
      opt.force = true;
    else
      throw irsnet::ConfigError("unknown option: " + flag);
  }

  irsnet::ExperimentSpec spec;
  if (profile == "desk")
    spec = irsnet::desk_profile();
  else if (profile == "paper")
    spec = irsnet::paper_profile();
  else
    throw irsnet::ConfigError("unknown profile: " + profile);
  if (!spec_path.empty()) {
    const auto bytes = irsnet::read_file_bytes(spec_path);
    spec = irsnet::spec_from_kv(
        irsnet::KeyValueFile::parse(std::string(bytes.begin(), bytes.end())), spec);
  }
  if (!out_root.empty()) spec.out_root = out_root;
  if (seed) {
    if (verb == "train")
      spec.training.seed = *seed;
    else if (verb == "fit-lmmse")
      spec.stats_seed = *seed;
    else
      spec.eval_seed = *seed;
  }
  spec.validate();

  std::string result;
  if (verb == "train")
    result = irsnet::cmd_train(spec, opt);
  else if (verb == "eval")
    result = irsnet::cmd_eval(spec, opt);
  else if (verb == "sweep")
    result = irsnet::cmd_sweep(spec, opt);
  else if (verb == "cdf")
    result = irsnet::cmd_cdf(spec, opt);
  else if (verb == "array-response")
    result = irsnet::cmd_array_response(spec, opt);
  else if (verb == "fit-lmmse")
    result = irsnet::cmd_fit_lmmse(spec, opt);
  else if (verb == "baseline")
    result = irsnet::cmd_baseline(spec, opt);
  else
    throw irsnet::ConfigError("unknown command: " + verb);
  std::printf("%s\n", result.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const irsnet::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const irsnet::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
