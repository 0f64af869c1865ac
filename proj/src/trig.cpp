#include "trig.hpp"

#include <cmath>

namespace dfm::detail {

void cos_sin(const double* a, std::size_t n, double* c, double* s) {
  for (std::size_t i = 0; i < n; ++i) {
    c[i] = std::cos(a[i]);
    s[i] = std::sin(a[i]);
  }
}

void cos_only(const double* a, std::size_t n, double* c) {
  for (std::size_t i = 0; i < n; ++i) c[i] = std::cos(a[i]);
}

}  // namespace dfm::detail
