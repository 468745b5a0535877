#pragma once

namespace pivotal {

double normal_pdf(double z) noexcept;
double normal_log_pdf(double z) noexcept;
/// Phi(z), through the complementary error function.
double normal_cdf(double z) noexcept;
/// Phi^{-1}(p) for p in (0, 1): rational approximation refined by one Halley
/// step, absolute error below 1e-9 across the range. Returns +-inf at 0 and 1.
double normal_quantile(double p);

}  // namespace pivotal
