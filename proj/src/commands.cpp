#include "atv/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "atv/fusion.hpp"
#include "atv/nn.hpp"

namespace atv::commands {

namespace {

std::string format(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

std::string scene_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04d", i);
  return buf;
}

std::string checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%08lld.atvt", static_cast<long long>(step));
  return buf;
}

void require_dir(const fs::path& p, const std::string& what) {
  if (!fs::is_directory(p)) throw io::DataError(what + " '" + p.string() + "' is not a directory");
}

// Same window in every view; principal points shift with the crop.
pipeline::TrainSample crop_sample(const pipeline::TrainSample& s, int top, int left, int h, int w) {
  pipeline::TrainSample out;
  for (std::size_t v = 0; v < s.views.images.size(); ++v) {
    const Tensor& img = s.views.images[v];
    Tensor ci({3, h, w});
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) ci.at(c, i, j) = img.at(c, top + i, left + j);
    geometry::Camera cam = s.views.cameras[v];
    cam.K(0, 2) -= left;
    cam.K(1, 2) -= top;
    out.views.images.push_back(std::move(ci));
    out.views.cameras.push_back(cam);
  }
  out.gt_depth = Tensor({h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) out.gt_depth.at(i, j) = s.gt_depth.at(top + i, left + j);
  return out;
}

std::string loss_line(std::int64_t step, const pipeline::LossBreakdown& b) {
  std::ostringstream o;
  o.precision(10);
  o << step << ' ' << b.total;
  for (int s = 0; s < 3; ++s) o << ' ' << b.position[s];
  for (int s = 0; s < 3; ++s) o << ' ' << b.neighbor[s];
  for (int s = 0; s < 3; ++s) o << ' ' << b.depth[s];
  return o.str();
}

constexpr const char* kLossHeader =
    "# step total position0 position1 position2 neighbor0 neighbor1 neighbor2 depth0 depth1 depth2\n";

void save_checkpoint(const fs::path& path, const pipeline::Network& net, const pipeline::AdamState& opt,
                     const config::RunConfig& cfg) {
  io::NamedTensors t = net.state();
  for (auto& e : opt.state(net.params())) t.push_back(std::move(e));
  io::write_archive(path, t);
  io::write_text(checkpoint_config_path(path), cfg.to_text());
}

std::vector<std::string> selected_scenes(const fs::path& data, const std::vector<std::string>& only) {
  if (!only.empty()) return only;
  return list_scenes(data);
}

}  // namespace

std::vector<std::string> list_scenes(const fs::path& data_dir) {
  require_dir(data_dir / "scenes", "scene directory");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(data_dir / "scenes")) {
    if (e.is_directory()) names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw io::DataError("no scenes under '" + (data_dir / "scenes").string() + "'");
  return names;
}

Scene load_scene(const fs::path& data_dir, const std::string& name, bool with_depths) {
  const fs::path root = data_dir / "scenes" / name;
  require_dir(root, "scene");
  Scene s;
  s.name = name;
  s.pairs = io::read_pairs(root / "pair.txt");
  int views = 0;
  for (const io::ViewPair& p : s.pairs) {
    views = std::max(views, p.ref + 1);
    for (int v : p.sources) views = std::max(views, v + 1);
  }
  for (int v = 0; v < views; ++v) {
    const std::string stem = io::view_stem(v);
    s.images.push_back(io::read_png(root / "images" / (stem + ".png")));
    s.cameras.push_back(geometry::read_camera_file(root / "cams" / (stem + "_cam.txt")).camera);
    if (with_depths) {
      Tensor d = io::read_pfm(root / "depths" / (stem + ".pfm"));
      if (d.dim(0) != s.images.back().dim(1) || d.dim(1) != s.images.back().dim(2)) {
        throw io::DataError(name + ": depth map " + shape_str(d.shape()) + " does not match image " +
                            shape_str(s.images.back().shape()) + " for view " + stem);
      }
      s.depths.push_back(std::move(d));
    }
  }
  return s;
}

pipeline::ViewSet view_set(const Scene& scene, const io::ViewPair& pair, int sources) {
  if (pair.sources.empty()) {
    throw io::DataError(scene.name + ": view " + std::to_string(pair.ref) + " has no source views");
  }
  pipeline::ViewSet vs;
  vs.images.push_back(scene.images.at(pair.ref));
  vs.cameras.push_back(scene.cameras.at(pair.ref));
  const int n = std::min<int>(sources, static_cast<int>(pair.sources.size()));
  for (int k = 0; k < n; ++k) {
    vs.images.push_back(scene.images.at(pair.sources[k]));
    vs.cameras.push_back(scene.cameras.at(pair.sources[k]));
  }
  return vs;
}

PointCloud ground_truth_cloud(const std::vector<Tensor>& depths, const std::vector<Tensor>& images,
                              const std::vector<geometry::Camera>& cameras) {
  PointCloud cloud;
  for (std::size_t v = 0; v < depths.size(); ++v) {
    const Tensor& d = depths[v];
    for (int i = 0; i < d.dim(0); ++i) {
      for (int j = 0; j < d.dim(1); ++j) {
        if (!(d.at(i, j) > 0.0)) continue;
        cloud.points.push_back(cameras[v].back_project(geometry::Vec2(j, i), d.at(i, j)));
        std::array<std::uint8_t, 3> c;
        for (int k = 0; k < 3; ++k) {
          c[k] = static_cast<std::uint8_t>(std::lround(std::clamp(images[v].at(k, i, j), 0.0, 1.0) * 255));
        }
        cloud.colors.push_back(c);
        cloud.source_view.push_back(static_cast<int>(v));
      }
    }
  }
  return cloud;
}

void write_config_snapshot(const fs::path& out, const config::RunConfig& cfg) {
  fs::create_directories(out);
  io::write_text(out / "config.txt", cfg.to_text());
}

// ------------------------------------------------------------ make-synthetic

void make_synthetic(const SyntheticOptions& opt, const config::RunConfig& cfg, std::ostream& log) {
  if (opt.count < 1) throw config::ConfigError("--count must be >= 1");
  if (opt.views && *opt.views < 2) throw config::ConfigError("--views must be >= 2 (a reference and a source)");
  std::string spec_text;
  if (opt.spec_file) spec_text = io::read_text(*opt.spec_file);
  write_config_snapshot(opt.out, cfg);
  for (int i = 0; i < opt.count; ++i) {
    const std::uint64_t seed = nn::derive_seed(opt.seed, "scene/" + std::to_string(i));
    synthetic::SceneSpec spec;
    if (opt.spec_file) {
      spec = synthetic::parse_scene_spec(spec_text, opt.spec_file->string(), seed);
    } else {
      spec = synthetic::random_two_primitive_spec(spec, seed);
      spec.views = 6;
    }
    if (opt.views) spec.views = *opt.views;
    if (spec.views < 2) throw config::ConfigError("scenes need at least 2 views");
    const auto scene = synthetic::generate_synthetic_scene(spec, seed);
    const fs::path dir = opt.out / "scenes" / scene_name(i);
    synthetic::write_scene(scene, dir.string());
    write_ply(dir / "gt.ply", ground_truth_cloud(scene.depths, scene.images, scene.cameras));
    io::write_text(dir / "scene_spec.txt", synthetic::format_scene_spec(spec));
    log << "wrote " << dir.string() << " (" << spec.views << " views, " << spec.height << "x"
        << spec.width << ")\n";
  }
}

// --------------------------------------------------------------------- train

std::vector<std::size_t> batch_indices(std::size_t samples, int batch, std::uint64_t seed,
                                       std::int64_t step) {
  std::vector<std::size_t> out;
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> perm(samples);
  for (int b = 0; b < batch; ++b) {
    const std::int64_t k = step * batch + b;
    const std::int64_t epoch = k / static_cast<std::int64_t>(samples);
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), 0);
      std::mt19937_64 rng(nn::derive_seed(seed, "epoch/" + std::to_string(epoch)));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[k % static_cast<std::int64_t>(samples)]);
  }
  return out;
}

fs::path checkpoint_config_path(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p.replace_extension(".config.txt");
  return p;
}

std::optional<fs::path> latest_checkpoint(const fs::path& out) {
  const fs::path dir = out / "checkpoints";
  if (!fs::is_directory(dir)) return std::nullopt;
  std::optional<fs::path> best;
  long long best_step = -1;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string f = e.path().filename().string();
    long long step = 0;
    char tail[8] = {};
    if (std::sscanf(f.c_str(), "ckpt_%lld.%7s", &step, tail) == 2 && std::string(tail) == "atvt" &&
        step > best_step) {
      best_step = step;
      best = e.path();
    }
  }
  return best;
}

TrainSummary train(const config::RunConfig& cfg, const TrainOptions& opt, std::ostream& log) {
  cfg.validate();
  const int N = cfg.network.source_views;
  std::vector<pipeline::TrainSample> samples;
  for (const std::string& name : list_scenes(opt.data)) {
    const Scene s = load_scene(opt.data, name, true);
    for (const io::ViewPair& p : s.pairs) {
      if (static_cast<int>(p.sources.size()) < N) {
        log << "skipping " << name << " view " << p.ref << ": fewer than " << N << " sources\n";
        continue;
      }
      samples.push_back({view_set(s, p, N), s.depths.at(p.ref)});
    }
  }
  if (samples.empty()) throw io::DataError("no training samples under '" + opt.data.string() + "'");
  const int H = samples[0].gt_depth.dim(0), W = samples[0].gt_depth.dim(1);
  if (cfg.crop_height > H || cfg.crop_width > W) {
    throw config::ConfigError("crop " + std::to_string(cfg.crop_height) + "x" +
                              std::to_string(cfg.crop_width) + " exceeds the " + std::to_string(H) +
                              "x" + std::to_string(W) + " training images");
  }

  const std::int64_t total =
      cfg.steps > 0 ? cfg.steps
                    : static_cast<std::int64_t>(cfg.epochs) *
                          ((static_cast<std::int64_t>(samples.size()) + cfg.batch_size - 1) / cfg.batch_size);
  if (total < 1) throw config::ConfigError("nothing to train: steps and epochs are both zero");

  pipeline::Network net(cfg.network);
  pipeline::AdamState adam;
  const fs::path ckpt_dir = opt.out / "checkpoints";
  const fs::path log_path = opt.out / "loss_log.txt";
  write_config_snapshot(opt.out, cfg);
  fs::create_directories(ckpt_dir);

  std::string loss_log = kLossHeader;
  const auto resume_from = opt.resume ? latest_checkpoint(opt.out) : std::nullopt;
  if (resume_from) {
    const io::NamedTensors state = io::read_archive(*resume_from);
    net.load_state(state);
    adam.load_state(net.params(), state);
    // Keep the log lines the checkpoint already accounts for.
    if (fs::exists(log_path)) {
      std::istringstream in(io::read_text(log_path));
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (std::stoll(line) <= adam.step) loss_log += line + "\n";
      }
    }
    log << "resuming from " << resume_from->string() << " at step " << adam.step << "\n";
  } else {
    for (const auto& e : fs::directory_iterator(ckpt_dir)) {
      const std::string f = e.path().filename().string();
      if (f.rfind("ckpt_", 0) == 0 || f.rfind("final.", 0) == 0) fs::remove(e.path());
    }
  }
  io::write_text(log_path, loss_log);

  const std::uint64_t seed = cfg.network.seed;
  auto make_batch = [&](std::int64_t step) {
    std::vector<pipeline::TrainSample> batch;
    const auto idx = batch_indices(samples.size(), cfg.batch_size, seed, step);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const pipeline::TrainSample& s = samples[idx[b]];
      if (cfg.crop_height > 0 && cfg.crop_width > 0) {
        std::mt19937_64 rng(nn::derive_seed(seed, "crop/" + std::to_string(step) + "/" + std::to_string(b)));
        const int top = std::uniform_int_distribution<int>(0, H - cfg.crop_height)(rng);
        const int left = std::uniform_int_distribution<int>(0, W - cfg.crop_width)(rng);
        batch.push_back(crop_sample(s, top, left, cfg.crop_height, cfg.crop_width));
      } else {
        batch.push_back(s);
      }
    }
    return batch;
  };

  TrainSummary summary;
  summary.first_step = adam.step;
  summary.dead_parameters = pipeline::dead_parameters(net, make_batch(adam.step).front());
  if (!summary.dead_parameters.empty()) {
    log << "warning: " << summary.dead_parameters.size() << " parameter tensors get no gradient:";
    for (const std::string& n : summary.dead_parameters) log << ' ' << n;
    log << "\n";
  }

  log << "training " << samples.size() << " samples for " << total << " steps\n";
  for (std::int64_t step = adam.step; step < total; ++step) {
    const pipeline::LossBreakdown b = pipeline::train_step(net, adam, make_batch(step));
    const std::int64_t done = step + 1;
    summary.last_loss = b.total;
    if (done % cfg.log_every == 0 || done == total) {
      loss_log += loss_line(done, b) + "\n";
      io::write_text(log_path, loss_log);
      log << "step " << done << "/" << total << " loss " << format("%.6g", b.total) << " (depth "
          << format("%.6g", b.depth[0]) << ", position " << format("%.6g", b.position[0]) << ")\n";
    }
    if (done % cfg.checkpoint_every == 0 || done == total) {
      save_checkpoint(ckpt_dir / checkpoint_name(done), net, adam, cfg);
    }
  }
  save_checkpoint(ckpt_dir / "final.atvt", net, adam, cfg);
  summary.last_step = adam.step;
  return summary;
}

// --------------------------------------------------------------------- infer

void infer(const config::RunConfig& cfg, const InferOptions& opt, std::ostream& log) {
  cfg.validate();
  pipeline::Network net(cfg.network);
  net.load_state(io::read_archive(opt.checkpoint));
  write_config_snapshot(opt.out, cfg);
  for (const std::string& name : selected_scenes(opt.data, opt.scenes)) {
    const Scene s = load_scene(opt.data, name, false);
    for (const io::ViewPair& p : s.pairs) {
      const pipeline::ViewSet vs = view_set(s, p, cfg.test_source_views);
      const pipeline::DepthEstimate est = pipeline::infer(net, vs);
      const std::string stem = io::view_stem(p.ref);
      io::write_pfm(opt.out / name / "depth" / (stem + ".pfm"), est.depth);
      io::write_pfm(opt.out / name / "confidence" / (stem + ".pfm"), est.confidence);
    }
    log << "inferred " << s.pairs.size() << " depth maps for " << name << "\n";
  }
}

// ---------------------------------------------------------------------- fuse

void fuse(const config::RunConfig& cfg, const FuseOptions& opt, std::ostream& log) {
  cfg.validate();
  require_dir(opt.depths, "depth directory");
  std::vector<std::string> names = opt.scenes;
  if (names.empty()) {
    for (const auto& e : fs::directory_iterator(opt.depths)) {
      if (fs::is_directory(e.path() / "depth")) names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
  }
  if (names.empty()) throw io::DataError("no <scene>/depth directories under '" + opt.depths.string() + "'");
  write_config_snapshot(opt.out, cfg);
  for (const std::string& name : names) {
    const Scene s = load_scene(opt.data, name, false);
    std::vector<Tensor> depths, images;
    std::vector<geometry::Camera> cams;
    std::vector<Mask> photo;
    for (std::size_t v = 0; v < s.images.size(); ++v) {
      const std::string stem = io::view_stem(static_cast<int>(v));
      const fs::path dp = opt.depths / name / "depth" / (stem + ".pfm");
      if (!fs::exists(dp)) continue;
      Tensor d = io::read_pfm(dp);
      const Tensor c = io::read_pfm(opt.depths / name / "confidence" / (stem + ".pfm"));
      if (d.dim(0) != s.images[v].dim(1) || d.dim(1) != s.images[v].dim(2)) {
        throw io::DataError(dp.string() + ": depth map " + shape_str(d.shape()) +
                            " does not match image " + shape_str(s.images[v].shape()));
      }
      photo.push_back(fusion::photometric_filter(d, c, cfg.fusion.prob_min));
      depths.push_back(std::move(d));
      images.push_back(s.images[v]);
      cams.push_back(s.cameras[v]);
    }
    if (depths.empty()) throw io::DataError(name + ": no depth maps under " + (opt.depths / name).string());
    const auto masks = fusion::geometric_filter(depths, cams, cfg.fusion, &photo);
    const PointCloud cloud = fusion::fuse(depths, images, cams, masks, cfg.fusion);
    write_ply(opt.out / (name + ".ply"), cloud);
    log << "fused " << depths.size() << " views of " << name << " into " << cloud.size() << " points\n";
  }
}

// ---------------------------------------------------------------------- eval

evalmetrics::MetricReport eval(const config::RunConfig& cfg, const EvalOptions& opt) {
  cfg.validate();
  if (!(cfg.tau > 0.0)) {
    throw config::ConfigError("eval needs a positive F-score threshold: pass --tau or set tau");
  }
  const PointCloud recon = read_ply(opt.recon);
  const PointCloud gt = read_ply(opt.gt);
  if (recon.empty()) throw io::DataError(opt.recon.string() + ": point cloud is empty");
  if (gt.empty()) throw io::DataError(opt.gt.string() + ": point cloud is empty");
  const auto report = evalmetrics::evaluate(recon, gt, cfg.max_dist, cfg.tau);
  if (opt.out) {
    write_config_snapshot(*opt.out, cfg);
    io::write_text(*opt.out / "report.txt", report.text());
    io::write_text(*opt.out / "metrics.txt", report.key_values());
  }
  return report;
}

}  // namespace atv::commands
