#include "pbact/numerics.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "pbact/errors.hpp"

namespace pbact {

double exact_sum(std::span<const double> xs) {
  // Shewchuk's algorithm: maintain a list of non-overlapping partials whose
  // exact sum equals the running sum, then round once at the end (including
  // the half-ulp tie correction used by CPython's math.fsum).
  std::vector<double> partials;
  for (double x : xs) {
    if (!std::isfinite(x)) throw NumericError("exact_sum: non-finite input");
    size_t i = 0;
    for (size_t j = 0; j < partials.size(); ++j) {
      double y = partials[j];
      if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }

  double total = 0.0;
  size_t n = partials.size();
  if (n == 0) return 0.0;
  --n;
  total = partials[n];
  // Fold remaining partials from largest to smallest, fixing the final
  // rounding if the discarded tail straddles a rounding boundary.
  while (n > 0) {
    double x = total;
    double y = partials[--n];
    total = x + y;
    const double err = y - (total - x);
    if (err != 0.0) {
      // Half-way case: err and the next partial agree in sign, so the
      // correctly rounded result is one ulp away.
      if (n > 0 && ((err < 0.0 && partials[n - 1] < 0.0) ||
                    (err > 0.0 && partials[n - 1] > 0.0))) {
        const double candidate = total + 2.0 * err;
        if (2.0 * err == candidate - total) total = candidate;
      }
      break;
    }
  }
  return total;
}

double exact_mean(std::span<const double> xs) {
  if (xs.empty()) throw UsageError("exact_mean: empty input");
  return exact_sum(xs) / static_cast<double>(xs.size());
}

double sample_stddev(std::span<const double> xs) {
  const size_t n = xs.size();
  if (n < 2) return 0.0;
  const double m = exact_mean(xs);
  std::vector<double> sq(n);
  for (size_t i = 0; i < n; ++i) sq[i] = (xs[i] - m) * (xs[i] - m);
  return std::sqrt(exact_sum(sq) / static_cast<double>(n - 1));
}

uint64_t fnv1a64(std::span<const unsigned char> bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericError("format_double: to_chars failed");
  return std::string(buf, ptr);
}

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return std::string(buf);
}

}  // namespace pbact
