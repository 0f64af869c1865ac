#pragma once

#include <cstddef>

namespace dfm::detail {

// Elementwise c[i] = cos(a[i]), s[i] = sin(a[i]) over finite inputs. Built
// with vectorised libm variants.
void cos_sin(const double* a, std::size_t n, double* c, double* s);
void cos_only(const double* a, std::size_t n, double* c);

}  // namespace dfm::detail
