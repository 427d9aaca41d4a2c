#pragma once

#include <string>
#include <vector>

#include "atv/pointcloud.hpp"

namespace atv::evalmetrics {

using geometry::Vec3;

/// Static 3-d tree answering exact nearest-neighbour distance queries.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);
  /// Euclidean distance to the closest stored point. The tree must be
  /// non-empty.
  double nearest(const Vec3& q) const;
  std::size_t size() const { return pts_.size(); }

 private:
  struct NodeRec {
    int begin, end;  // range in order_
    int axis;        // -1 for leaves
    double split;
    int left, right;
  };
  int build(int begin, int end);
  void search(int node, const Vec3& q, double& best) const;

  std::vector<Vec3> pts_;
  std::vector<int> order_;
  std::vector<NodeRec> nodes_;
};

/// For every point of A, the distance to its nearest neighbour in B.
std::vector<double> nearest_neighbor_distances(const std::vector<Vec3>& A,
                                               const std::vector<Vec3>& B);

struct DistanceMetric {
  double value = 0.0;   // NaN when every distance was rejected
  std::size_t kept = 0;
  bool warning = false;  // set when the mean is over an empty set
};

/// Mean nearest distance recon -> gt over distances <= max_dist.
DistanceMetric accuracy(const PointCloud& recon, const PointCloud& gt, double max_dist);
/// Mean nearest distance gt -> recon over distances <= max_dist.
DistanceMetric completeness(const PointCloud& recon, const PointCloud& gt, double max_dist);

struct FScore {
  double precision = 0.0, recall = 0.0, f = 0.0;  // percent
};

FScore f_score(const PointCloud& recon, const PointCloud& gt, double tau);

struct MetricReport {
  double accuracy_mm = 0.0, completeness_mm = 0.0, overall_mm = 0.0;
  double precision_pct = 0.0, recall_pct = 0.0, f_score_pct = 0.0;
  double tau = 0.0, max_dist = 0.0;
  std::size_t recon_points = 0, gt_points = 0;
  std::vector<std::string> warnings;

  /// Table-style rows for side-by-side comparison.
  std::string text() const;
  /// "key = value" lines.
  std::string key_values() const;
};

MetricReport evaluate(const PointCloud& recon, const PointCloud& gt, double max_dist, double tau);

}  // namespace atv::evalmetrics
