#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <vector>

namespace seqtomo {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

// 10 log10(peak^2 / MSE); kInfinitePsnr when MSE is zero. peak <= 0 selects max(ref).
double psnr(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& ref,
            double peak = 0.0);

using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

// 2|A and B| / (|A| + |B|); two empty masks give 1. Entries must be 0 or 1.
double dice(const Eigen::Ref<const Mask>& a, const Eigen::Ref<const Mask>& b);
double dice_squared(const Eigen::Ref<const Mask>& a, const Eigen::Ref<const Mask>& b);

// Mean of values[center - half_width .. center + half_width].
double block_average(const std::vector<double>& values, int center, int half_width = 5);

}  // namespace seqtomo
