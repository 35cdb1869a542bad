#include "slc/knn_entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <queue>
#include <vector>

#include "slc/error.hpp"

namespace slc {

namespace {

double digamma(double x) {
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double f = 1.0 / (x * x);
  return result + std::log(x) - 0.5 / x -
         f * (1.0 / 12 - f * (1.0 / 120 - f * (1.0 / 252 - f * (1.0 / 240 - f / 132))));
}

double log_unit_ball_volume(int d) {
  return 0.5 * d * std::log(std::numbers::pi) - std::lgamma(0.5 * d + 1.0);
}

// Sorted sweep for one dimension.
void knn_1d(const Eigen::MatrixXd& points, int k, Eigen::VectorXd& dist, Eigen::MatrixXi* nb) {
  const Eigen::Index n = points.cols();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return points(0, a) < points(0, b); });
  for (Eigen::Index r = 0; r < n; ++r) {
    const double x = points(0, order[r]);
    Eigen::Index lo = r - 1, hi = r + 1;
    double kth = 0.0;
    for (int found = 0; found < k; ++found) {
      const double dl = lo >= 0 ? x - points(0, order[lo]) : INFINITY;
      const double dh = hi < n ? points(0, order[hi]) - x : INFINITY;
      Eigen::Index pick;
      if (dl <= dh) {
        kth = dl;
        pick = order[lo--];
      } else {
        kth = dh;
        pick = order[hi++];
      }
      if (nb) (*nb)(found, order[r]) = static_cast<int>(pick);
    }
    dist(order[r]) = kth;
  }
}

class KdTree {
 public:
  explicit KdTree(const Eigen::MatrixXd& pts) : pts_(pts), idx_(pts.cols()) {
    std::iota(idx_.begin(), idx_.end(), 0);
    nodes_.reserve(2 * pts.cols() / kLeaf + 2);
    build(0, static_cast<Eigen::Index>(idx_.size()));
  }

  // k nearest excluding `self`; returns squared distances in a max-heap.
  void query(Eigen::Index self, int k, std::priority_queue<std::pair<double, Eigen::Index>>& heap) const {
    search(0, self, k, heap);
  }

 private:
  static constexpr Eigen::Index kLeaf = 16;
  struct Node {
    Eigen::Index begin, end;
    int axis = -1;
    double split = 0;
    int left = -1, right = -1;
  };

  int build(Eigen::Index begin, Eigen::Index end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= kLeaf) return id;
    const Eigen::Index d = pts_.rows();
    int axis = 0;
    double best = -1;
    for (Eigen::Index a = 0; a < d; ++a) {
      double lo = INFINITY, hi = -INFINITY;
      for (Eigen::Index i = begin; i < end; ++i) {
        lo = std::min(lo, pts_(a, idx_[i]));
        hi = std::max(hi, pts_(a, idx_[i]));
      }
      if (hi - lo > best) {
        best = hi - lo;
        axis = static_cast<int>(a);
      }
    }
    const Eigen::Index mid = (begin + end) / 2;
    std::nth_element(idx_.begin() + begin, idx_.begin() + mid, idx_.begin() + end,
                     [&](Eigen::Index a, Eigen::Index b) { return pts_(axis, a) < pts_(axis, b); });
    nodes_[id].axis = axis;
    nodes_[id].split = pts_(axis, idx_[mid]);
    const int l = build(begin, mid);
    const int r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void search(int id, Eigen::Index self, int k,
              std::priority_queue<std::pair<double, Eigen::Index>>& heap) const {
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (Eigen::Index i = node.begin; i < node.end; ++i) {
        const Eigen::Index j = idx_[i];
        if (j == self) continue;
        const double d2 = (pts_.col(j) - pts_.col(self)).squaredNorm();
        if (static_cast<int>(heap.size()) < k) {
          heap.emplace(d2, j);
        } else if (d2 < heap.top().first) {
          heap.pop();
          heap.emplace(d2, j);
        }
      }
      return;
    }
    const double diff = pts_(node.axis, self) - node.split;
    const int near = diff < 0 ? node.left : node.right;
    const int far = diff < 0 ? node.right : node.left;
    search(near, self, k, heap);
    if (static_cast<int>(heap.size()) < k || diff * diff < heap.top().first) {
      search(far, self, k, heap);
    }
  }

  const Eigen::MatrixXd& pts_;
  std::vector<Eigen::Index> idx_;
  std::vector<Node> nodes_;
};

}  // namespace

Eigen::VectorXd kth_neighbor_distances(const Eigen::MatrixXd& points, int k, Eigen::MatrixXi* nb) {
  const Eigen::Index n = points.cols();
  if (k < 1 || n <= k) {
    fail(ErrorCode::kPreconditionViolated, "kNN entropy needs more than k samples");
  }
  Eigen::VectorXd dist(n);
  if (nb) nb->resize(k, n);
  if (points.rows() == 1) {
    knn_1d(points, k, dist, nb);
    return dist;
  }
  KdTree tree(points);
  std::priority_queue<std::pair<double, Eigen::Index>> heap;
  for (Eigen::Index i = 0; i < n; ++i) {
    heap = {};
    tree.query(i, k, heap);
    dist(i) = std::sqrt(heap.top().first);
    if (nb) {
      int slot = k - 1;
      while (!heap.empty()) {
        (*nb)(slot--, i) = static_cast<int>(heap.top().second);
        heap.pop();
      }
    }
  }
  return dist;
}

double knn_entropy_nats(const Eigen::MatrixXd& points, const Eigen::VectorXd& weights, int k) {
  const Eigen::Index n = points.cols();
  const int d = static_cast<int>(points.rows());
  if (weights.size() != n) fail(ErrorCode::kDimensionMismatch, "kNN entropy: weights size");
  Eigen::MatrixXi nb;
  const Eigen::VectorXd eps = kth_neighbor_distances(points, k, &nb);
  const double log_vd = log_unit_ball_volume(d);
  const double total = weights.sum();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = weights(i) / total;
    if (w == 0.0) continue;
    double mass = 0.0;
    for (int j = 0; j < k; ++j) mass += weights(nb(j, i)) / total;
    const double e = std::max(eps(i), 1e-300);
    acc += w * (log_vd + d * std::log(e) - std::log(mass));
  }
  const double nn = static_cast<double>(n);
  return acc + (std::log(static_cast<double>(k)) - digamma(k)) + (digamma(nn) - std::log(nn));
}

double knn_entropy_nats(const Eigen::MatrixXd& points, int k) {
  return knn_entropy_nats(points, Eigen::VectorXd::Ones(points.cols()), k);
}

}  // namespace slc
