#ifndef CERTKIT_TYPES_HPP_
#define CERTKIT_TYPES_HPP_

#include <Eigen/Dense>

#include <limits>
#include <vector>

namespace certkit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Time series of states and the zero-order-hold inputs that produced them.
/// `inputs[k]` is applied on [times[k], times[k+1]); the last state has no input.
struct Trajectory
{
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<Vector> inputs;
};

}  // namespace certkit

#endif  // CERTKIT_TYPES_HPP_
