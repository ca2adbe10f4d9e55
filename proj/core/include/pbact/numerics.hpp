#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pbact {

/// Correctly-rounded sum of doubles (Shewchuk partials, as in Python's
/// math.fsum). The result is the exact real sum rounded once, so summing a
/// duplicated multiset yields exactly twice the original sum and the result
/// does not depend on input order.
double exact_sum(std::span<const double> xs);

/// exact_sum(xs) / xs.size().
double exact_mean(std::span<const double> xs);

/// Sample standard deviation (n-1 denominator); 0.0 when n < 2.
double sample_stddev(std::span<const double> xs);

/// FNV-1a 64-bit hash; used for artifact provenance, not security.
uint64_t fnv1a64(std::span<const unsigned char> bytes);
uint64_t fnv1a64(const std::string& s);

/// Shortest round-trip decimal text for a double (std::to_chars), giving
/// byte-stable CSV/JSON-free number output.
std::string format_double(double v);

/// Fixed-decimal text, e.g. format_fixed(1.5, 2) == "1.50".
std::string format_fixed(double v, int decimals);

}  // namespace pbact
