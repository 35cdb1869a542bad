#pragma once

#include <Eigen/Dense>

namespace slc {

/// Kozachenko-Leonenko k-nearest-neighbour differential entropy, in nats.
/// `points` holds one sample per column. Weighted samples use the local
/// neighbour mass in place of k/N; uniform weights reduce to the classic
/// estimator psi(N) - psi(k) + log V_d + (d/N) sum log eps_i.
double knn_entropy_nats(const Eigen::MatrixXd& points, const Eigen::VectorXd& weights, int k = 4);

double knn_entropy_nats(const Eigen::MatrixXd& points, int k = 4);

/// Distances from each point to its k-th nearest other point (Euclidean).
Eigen::VectorXd kth_neighbor_distances(const Eigen::MatrixXd& points, int k,
                                       Eigen::MatrixXi* neighbors = nullptr);

}  // namespace slc
