#include "seqtomo/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace seqtomo {

double psnr(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& ref, double peak) {
  if (x.size() != ref.size())
    throw std::invalid_argument("psnr: image sizes differ (" + std::to_string(x.size()) + " vs " +
                                std::to_string(ref.size()) + ")");
  if (ref.size() == 0) throw std::invalid_argument("psnr: empty image");
  if (peak <= 0.0) peak = ref.maxCoeff();
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
  const double mse = (x - ref).squaredNorm() / static_cast<double>(x.size());
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(peak * peak / mse);
}

double dice(const Eigen::Ref<const Mask>& a, const Eigen::Ref<const Mask>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dice: mask sizes differ");
  long na = 0, nb = 0, both = 0;
  for (long i = 0; i < a.size(); ++i) {
    if (a[i] > 1 || b[i] > 1) throw std::invalid_argument("dice: masks must be binary");
    na += a[i];
    nb += b[i];
    both += a[i] & b[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double dice_squared(const Eigen::Ref<const Mask>& a, const Eigen::Ref<const Mask>& b) {
  const double d = dice(a, b);
  return d * d;
}

double block_average(const std::vector<double>& values, int center, int half_width) {
  if (half_width < 0) throw std::invalid_argument("block_average: negative half width");
  const long lo = static_cast<long>(center) - half_width, hi = static_cast<long>(center) + half_width;
  if (lo < 0 || hi >= static_cast<long>(values.size()))
    throw std::out_of_range("block_average: window [" + std::to_string(lo) + ", " + std::to_string(hi) +
                            "] outside " + std::to_string(values.size()) + " values");
  double sum = 0.0;
  for (long i = lo; i <= hi; ++i) sum += values[i];
  return sum / static_cast<double>(hi - lo + 1);
}

}  // namespace seqtomo
