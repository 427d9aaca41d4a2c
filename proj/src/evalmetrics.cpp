#include "atv/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace atv::evalmetrics {

namespace {

constexpr int kLeafSize = 8;

double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

void require_non_empty(const PointCloud& c, const char* what) {
  if (c.empty()) throw std::invalid_argument(std::string(what) + " point cloud is empty");
}

DistanceMetric mean_within(const std::vector<double>& d, double max_dist) {
  DistanceMetric m;
  double sum = 0.0;
  for (double x : d) {
    if (x <= max_dist) {
      sum += x;
      ++m.kept;
    }
  }
  if (m.kept == 0) {
    m.value = std::numeric_limits<double>::quiet_NaN();
    m.warning = true;
  } else {
    m.value = sum / m.kept;
  }
  return m;
}

double percent_within(const std::vector<double>& d, double tau) {
  const auto n = std::count_if(d.begin(), d.end(), [tau](double x) { return x <= tau; });
  return 100.0 * static_cast<double>(n) / static_cast<double>(d.size());
}

}  // namespace

KdTree::KdTree(std::vector<Vec3> points) : pts_(std::move(points)), order_(pts_.size()) {
  std::iota(order_.begin(), order_.end(), 0);
  if (!pts_.empty()) build(0, static_cast<int>(pts_.size()));
}

int KdTree::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end, -1, 0.0, -1, -1});
  if (end - begin <= kLeafSize) return id;
  // Split on the axis of largest extent.
  Vec3 lo = pts_[order_[begin]], hi = lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(pts_[order_[i]]);
    hi = hi.cwiseMax(pts_[order_[i]]);
  }
  int axis;
  (hi - lo).maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return pts_[a][axis] < pts_[b][axis]; });
  const double split = pts_[order_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int node, const Vec3& q, double& best) const {
  const NodeRec& n = nodes_[node];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) best = std::min(best, squared_distance(q, pts_[order_[i]]));
    return;
  }
  // Left holds coordinates <= split, right holds coordinates >= split.
  const double diff = q[n.axis] - n.split;
  const int near = diff <= 0.0 ? n.left : n.right;
  const int far = diff <= 0.0 ? n.right : n.left;
  search(near, q, best);
  if (diff * diff < best) search(far, q, best);
}

double KdTree::nearest(const Vec3& q) const {
  if (pts_.empty()) throw std::invalid_argument("KdTree::nearest on an empty tree");
  double best = std::numeric_limits<double>::infinity();
  search(0, q, best);
  return std::sqrt(best);
}

std::vector<double> nearest_neighbor_distances(const std::vector<Vec3>& A,
                                               const std::vector<Vec3>& B) {
  if (B.empty()) throw std::invalid_argument("nearest_neighbor_distances: target set is empty");
  const KdTree tree(B);
  std::vector<double> out;
  out.reserve(A.size());
  for (const Vec3& a : A) out.push_back(tree.nearest(a));
  return out;
}

DistanceMetric accuracy(const PointCloud& recon, const PointCloud& gt, double max_dist) {
  require_non_empty(recon, "reconstructed");
  require_non_empty(gt, "ground-truth");
  return mean_within(nearest_neighbor_distances(recon.points, gt.points), max_dist);
}

DistanceMetric completeness(const PointCloud& recon, const PointCloud& gt, double max_dist) {
  require_non_empty(recon, "reconstructed");
  require_non_empty(gt, "ground-truth");
  return mean_within(nearest_neighbor_distances(gt.points, recon.points), max_dist);
}

FScore f_score(const PointCloud& recon, const PointCloud& gt, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("f_score: tau must be positive");
  require_non_empty(recon, "reconstructed");
  require_non_empty(gt, "ground-truth");
  FScore s;
  s.precision = percent_within(nearest_neighbor_distances(recon.points, gt.points), tau);
  s.recall = percent_within(nearest_neighbor_distances(gt.points, recon.points), tau);
  s.f = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

MetricReport evaluate(const PointCloud& recon, const PointCloud& gt, double max_dist, double tau) {
  MetricReport r;
  r.tau = tau;
  r.max_dist = max_dist;
  r.recon_points = recon.size();
  r.gt_points = gt.size();
  const DistanceMetric acc = accuracy(recon, gt, max_dist);
  const DistanceMetric comp = completeness(recon, gt, max_dist);
  if (acc.warning) r.warnings.push_back("accuracy: every distance exceeds max_dist");
  if (comp.warning) r.warnings.push_back("completeness: every distance exceeds max_dist");
  r.accuracy_mm = acc.value;
  r.completeness_mm = comp.value;
  r.overall_mm = (acc.value + comp.value) / 2.0;
  const FScore f = f_score(recon, gt, tau);
  r.precision_pct = f.precision;
  r.recall_pct = f.recall;
  r.f_score_pct = f.f;
  return r;
}

std::string MetricReport::text() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%-10s %10s %10s %10s\n%-10s %10.4f %10.4f %10.4f\n\n"
                "%-10s %10s %10s %10s\n%-10s %10.2f %10.2f %10.2f\n",
                "", "Acc.", "Comp.", "Overall", "distance", accuracy_mm, completeness_mm,
                overall_mm, "", "Prec.", "Recall", "F-score", "percent", precision_pct,
                recall_pct, f_score_pct);
  std::string out = buf;
  std::snprintf(buf, sizeof(buf), "(tau = %g, max_dist = %g, %zu recon / %zu gt points)\n", tau,
                max_dist, recon_points, gt_points);
  out += buf;
  for (const std::string& w : warnings) out += "warning: " + w + "\n";
  return out;
}

std::string MetricReport::key_values() const {
  char buf[1024];
  std::snprintf(buf, sizeof(buf),
                "accuracy_mm = %.17g\ncompleteness_mm = %.17g\noverall_mm = %.17g\n"
                "precision_pct = %.17g\nrecall_pct = %.17g\nf_score_pct = %.17g\n"
                "tau = %.17g\nmax_dist = %.17g\nrecon_points = %zu\ngt_points = %zu\n",
                accuracy_mm, completeness_mm, overall_mm, precision_pct, recall_pct, f_score_pct,
                tau, max_dist, recon_points, gt_points);
  return buf;
}

}  // namespace atv::evalmetrics
