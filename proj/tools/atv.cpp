// atv: scene synthesis, training, inference, fusion, evaluation and the
// verification suites.
//
// Exit status: 0 success, 1 usage or config error, 2 data error,
// 3 numerical failure (non-finite loss, failed verification).

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "atv/commands.hpp"
#include "atv/config.hpp"
#include "atv/verify.hpp"

namespace fs = std::filesystem;
using atv::config::RunConfig;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> direct;  // dedicated flags, applied last

  void add_to(CLI::App* app) {
    app->add_option("--config", file, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override one config key (key=value), repeatable");
  }

  // default < base (checkpoint snapshot) < --config < --set < dedicated flags
  RunConfig resolve(const std::optional<fs::path>& base = std::nullopt) const {
    RunConfig cfg;
    if (base && fs::exists(*base)) {
      atv::config::apply_text(cfg, atv::io::read_text(*base), base->string());
    }
    if (!file.empty()) atv::config::apply_text(cfg, atv::io::read_text(file), file);
    for (const std::string& s : sets) {
      const auto [k, v] = atv::config::split_assignment(s);
      cfg.set(k, v);
    }
    for (const auto& [k, v] : direct) cfg.set(k, v);
    cfg.validate();
    return cfg;
  }
};

// Registers a flag whose value is forwarded as a config key.
void direct_flag(CLI::App* app, ConfigFlags& flags, const std::string& name, const std::string& key,
                 const std::string& help) {
  app->add_option_function<std::string>(
      name, [&flags, key](const std::string& v) { flags.direct.emplace_back(key, v); }, help);
}

int run_verify(const std::vector<std::string>& suites, std::uint64_t seed,
               const std::optional<fs::path>& out) {
  std::vector<std::string> names = suites;
  if (names.empty() || (names.size() == 1 && names[0] == "all")) names = atv::verify::suite_names();
  std::string report;
  int passed = 0, total = 0;
  for (const std::string& n : names) {
    const auto r = atv::verify::run_suite(n, seed);
    std::cout << r.text() << std::flush;
    report += r.text();
    for (const auto& c : r.checks) {
      ++total;
      passed += c.pass;
    }
  }
  const std::string summary = std::to_string(passed) + "/" + std::to_string(total) + " checks passed\n";
  std::cout << summary;
  if (out) atv::io::write_text(*out / "verify_report.txt", report + summary);
  return passed == total ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view stereo depth estimation with attention features and thin cost volumes"};
  app.require_subcommand(1);

  // make-synthetic
  atv::commands::SyntheticOptions syn;
  ConfigFlags syn_flags;
  std::string syn_spec;
  int syn_views = 0;
  auto* make = app.add_subcommand("make-synthetic", "render a synthetic dataset");
  make->add_option("--out", syn.out, "output dataset directory")->required();
  make->add_option("--count", syn.count, "number of scenes")->capture_default_str();
  make->add_option("--seed", syn.seed, "root seed")->capture_default_str();
  make->add_option("--views", syn_views, "views per scene (default: spec file value, else 6)");
  make->add_option("--spec", syn_spec, "scene description file (default: random two-primitive scenes)")
      ->check(CLI::ExistingFile);
  syn_flags.add_to(make);

  // train
  atv::commands::TrainOptions tr;
  ConfigFlags tr_flags;
  auto* train = app.add_subcommand("train", "train the network on a dataset with ground-truth depth");
  train->add_option("--data", tr.data, "dataset directory")->required();
  train->add_option("--out", tr.out, "output directory for checkpoints and the loss log")->required();
  train->add_flag("--resume", tr.resume, "continue from the latest checkpoint in --out");
  tr_flags.add_to(train);
  direct_flag(train, tr_flags, "--seed", "seed", "root seed");
  direct_flag(train, tr_flags, "--steps", "steps", "optimizer steps");

  // infer
  atv::commands::InferOptions inf;
  ConfigFlags inf_flags;
  auto* infer = app.add_subcommand("infer", "predict depth and confidence maps");
  infer->add_option("--data", inf.data, "dataset directory")->required();
  infer->add_option("--checkpoint", inf.checkpoint, "tensor archive written by train")
      ->required()
      ->check(CLI::ExistingFile);
  infer->add_option("--out", inf.out, "output directory")->required();
  infer->add_option("--scene", inf.scenes, "restrict to these scenes, repeatable");
  inf_flags.add_to(infer);
  direct_flag(infer, inf_flags, "--source-views", "test_source_views", "source views per reference");

  // fuse
  atv::commands::FuseOptions fu;
  ConfigFlags fu_flags;
  auto* fuse = app.add_subcommand("fuse", "filter and fuse depth maps into point clouds");
  fuse->add_option("--data", fu.data, "dataset directory (images and cameras)")->required();
  fuse->add_option("--depths", fu.depths, "output directory of infer")->required();
  fuse->add_option("--out", fu.out, "output directory for <scene>.ply")->required();
  fuse->add_option("--scene", fu.scenes, "restrict to these scenes, repeatable");
  fu_flags.add_to(fuse);

  // eval
  atv::commands::EvalOptions ev;
  ConfigFlags ev_flags;
  std::string ev_out;
  auto* eval = app.add_subcommand("eval", "accuracy, completeness and F-score of a point cloud");
  eval->add_option("--recon", ev.recon, "reconstructed PLY")->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", ev.gt, "ground-truth PLY")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", ev_out, "directory for report.txt and metrics.txt");
  ev_flags.add_to(eval);
  direct_flag(eval, ev_flags, "--tau", "tau", "F-score distance threshold (required)");
  direct_flag(eval, ev_flags, "--max-dist", "max_dist", "outlier cap for accuracy and completeness");

  // verify
  std::vector<std::string> suites;
  std::uint64_t verify_seed = 0;
  std::string verify_out;
  auto* verify = app.add_subcommand("verify", "run the oracle, gradient and invariant suites");
  verify->add_option("suites", suites, "suite names or 'all'")
      ->check(CLI::IsMember([] {
        auto n = atv::verify::suite_names();
        n.push_back("all");
        return n;
      }()));
  verify->add_option("--seed", verify_seed, "root seed")->capture_default_str();
  verify->add_option("--out", verify_out, "directory for verify_report.txt");

  // config
  ConfigFlags show_flags;
  bool list_keys = false;
  auto* show = app.add_subcommand("config", "print the effective config");
  show->add_flag("--keys", list_keys, "list keys with descriptions instead");
  show_flags.add_to(show);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*make) {
      if (syn_views) syn.views = syn_views;
      if (!syn_spec.empty()) syn.spec_file = syn_spec;
      atv::commands::make_synthetic(syn, syn_flags.resolve(), std::cout);
    } else if (*train) {
      const auto s = atv::commands::train(tr_flags.resolve(), tr, std::cout);
      std::cout << "finished at step " << s.last_step << ", last loss " << s.last_loss << "\n";
    } else if (*infer) {
      atv::commands::infer(inf_flags.resolve(atv::commands::checkpoint_config_path(inf.checkpoint)), inf,
                           std::cout);
    } else if (*fuse) {
      atv::commands::fuse(fu_flags.resolve(), fu, std::cout);
    } else if (*eval) {
      if (!ev_out.empty()) ev.out = ev_out;
      std::cout << atv::commands::eval(ev_flags.resolve(), ev).text();
    } else if (*verify) {
      return run_verify(suites, verify_seed,
                        verify_out.empty() ? std::nullopt : std::optional<fs::path>(verify_out));
    } else if (*show) {
      if (list_keys) {
        for (const auto& [k, h] : atv::config::describe_keys()) std::cout << k << "\t" << h << "\n";
      } else {
        std::cout << show_flags.resolve().to_text();
      }
    }
  } catch (const atv::config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const atv::pipeline::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const atv::geometry::CameraParseError& e) {
    std::cerr << "camera file error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
