#pragma once

namespace gtforge::predicates {

/// Sign of the signed area of (a, b, c): +1 counter-clockwise, -1 clockwise, 0 collinear.
/// Exact: a floating-point filter with a rigorous error bound, falling back to
/// rational arithmetic when the filter cannot decide.
int orient2d(const double* a, const double* b, const double* c);

/// +1 if d lies strictly inside the circle through counter-clockwise (a, b, c),
/// -1 outside, 0 cocircular. Exact, same strategy as orient2d.
int incircle(const double* a, const double* b, const double* c, const double* d);

/// Non-robust double evaluation of the in-circle determinant, for tolerance checks.
double incircle_fast(const double* a, const double* b, const double* c, const double* d);

}  // namespace gtforge::predicates
