#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "atv/fusion.hpp"
#include "atv/pipeline.hpp"

namespace atv::config {

/// Unknown key or malformed value. The CLI maps it to exit status 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  pipeline::NetworkConfig network;
  fusion::FusionThresholds fusion;

  // training
  int batch_size = 1;
  int steps = 0;  // 0: epochs * number of training views
  int epochs = 16;
  int checkpoint_every = 500;
  int log_every = 1;
  int crop_height = 0;  // 0: no cropping
  int crop_width = 0;

  // inference
  int test_source_views = 5;

  // evaluation
  double max_dist = 20.0;
  double tau = 0.0;  // 0: unset; the eval command requires it

  /// Applies one "key = value" assignment.
  void set(const std::string& key, const std::string& value);
  /// Every key, one "key = value" line each, in a fixed order.
  std::string to_text() const;
  /// Checks the cross-field invariants of the network and fusion sections.
  void validate() const;
};

/// Keys with one-line descriptions, in serialization order.
std::vector<std::pair<std::string, std::string>> describe_keys();

/// Applies a key = value file over `cfg`. Blank lines and '#' comments are
/// skipped; errors name the source and line.
void apply_text(RunConfig& cfg, const std::string& text, const std::string& source);

/// Parses "key=value".
std::pair<std::string, std::string> split_assignment(const std::string& s);

}  // namespace atv::config
