#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "atv/config.hpp"
#include "atv/evalmetrics.hpp"
#include "atv/io.hpp"
#include "atv/pipeline.hpp"
#include "atv/synthetic.hpp"

// Implementations of the `atv` subcommands, kept out of main() so tests can
// drive them directly.
namespace atv::commands {

namespace fs = std::filesystem;

/// One scene of the dataset layout:
///   scenes/<name>/images/%08d.png, cams/%08d_cam.txt, depths/%08d.pfm, pair.txt
struct Scene {
  std::string name;
  std::vector<Tensor> images;
  std::vector<geometry::Camera> cameras;
  std::vector<Tensor> depths;  // empty unless requested
  std::vector<io::ViewPair> pairs;
};

/// Sorted scene names under data_dir/scenes. Throws io::DataError when
/// there are none.
std::vector<std::string> list_scenes(const fs::path& data_dir);
Scene load_scene(const fs::path& data_dir, const std::string& name, bool with_depths);

/// Reference view plus the first `sources` entries of its pair list.
pipeline::ViewSet view_set(const Scene& scene, const io::ViewPair& pair, int sources);

/// Union of the back-projected depth maps of every view, colored from the
/// images.
PointCloud ground_truth_cloud(const std::vector<Tensor>& depths, const std::vector<Tensor>& images,
                              const std::vector<geometry::Camera>& cameras);

// make-synthetic

struct SyntheticOptions {
  fs::path out;
  int count = 10;
  std::uint64_t seed = 0;
  std::optional<int> views;  // spec file value, else 6 (a reference plus five sources)
  std::optional<fs::path> spec_file;  // random two-primitive scenes when unset
};

/// Writes scenes/scene_%04d/... plus gt.ply per scene, and scene_spec.txt
/// snapshots. Scene i uses the seed derived from (seed, "scene/i").
void make_synthetic(const SyntheticOptions& opt, const config::RunConfig& cfg, std::ostream& log);

// train

/// Epoch-wise shuffled sample order: step s draws `batch` consecutive
/// entries of the permutation of its epoch. Depends only on (seed, step).
std::vector<std::size_t> batch_indices(std::size_t samples, int batch, std::uint64_t seed,
                                       std::int64_t step);

struct TrainOptions {
  fs::path data;
  fs::path out;
  bool resume = false;
};

struct TrainSummary {
  std::int64_t first_step = 0;
  std::int64_t last_step = 0;
  double last_loss = 0.0;
  std::vector<std::string> dead_parameters;
};

/// Trains on every (scene, reference view) with ground truth, writing
/// out/config.txt, out/loss_log.txt and out/checkpoints/. Throws
/// pipeline::NumericalError on a non-finite loss.
TrainSummary train(const config::RunConfig& cfg, const TrainOptions& opt, std::ostream& log);

/// Latest out/checkpoints/ckpt_%08d.atvt, if any.
std::optional<fs::path> latest_checkpoint(const fs::path& out);
/// The config snapshot stored next to a checkpoint archive.
fs::path checkpoint_config_path(const fs::path& checkpoint);

// infer

struct InferOptions {
  fs::path data;
  fs::path checkpoint;
  fs::path out;
  std::vector<std::string> scenes;  // all when empty
};

/// Writes out/<scene>/depth/%08d.pfm and out/<scene>/confidence/%08d.pfm
/// for every reference view listed in the scene's pair file.
void infer(const config::RunConfig& cfg, const InferOptions& opt, std::ostream& log);

// fuse

struct FuseOptions {
  fs::path data;    // images and cameras
  fs::path depths;  // output directory of infer
  fs::path out;
  std::vector<std::string> scenes;
};

/// Writes out/<scene>.ply for every scene with depth maps.
void fuse(const config::RunConfig& cfg, const FuseOptions& opt, std::ostream& log);

// eval

struct EvalOptions {
  fs::path recon;
  fs::path gt;
  std::optional<fs::path> out;  // report.txt, metrics.txt, config.txt
};

evalmetrics::MetricReport eval(const config::RunConfig& cfg, const EvalOptions& opt);

/// Writes `cfg` as out/config.txt (creating `out`).
void write_config_snapshot(const fs::path& out, const config::RunConfig& cfg);

}  // namespace atv::commands
