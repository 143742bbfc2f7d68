#include "gtforge/predicates.hpp"

#include <gmpxx.h>

#include <cmath>
#include <limits>

namespace gtforge::predicates {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon() / 2.0;  // 2^-53
constexpr double kCcwBound = (3.0 + 16.0 * kEps) * kEps;
constexpr double kIccBound = (10.0 + 96.0 * kEps) * kEps;

int sign(const mpq_class& v) { return sgn(v); }

int orient2d_exact(const double* a, const double* b, const double* c) {
  const mpq_class acx = mpq_class(a[0]) - mpq_class(c[0]);
  const mpq_class bcx = mpq_class(b[0]) - mpq_class(c[0]);
  const mpq_class acy = mpq_class(a[1]) - mpq_class(c[1]);
  const mpq_class bcy = mpq_class(b[1]) - mpq_class(c[1]);
  return sign(acx * bcy - acy * bcx);
}

int incircle_exact(const double* a, const double* b, const double* c, const double* d) {
  const mpq_class dx(d[0]), dy(d[1]);
  const mpq_class adx = mpq_class(a[0]) - dx, ady = mpq_class(a[1]) - dy;
  const mpq_class bdx = mpq_class(b[0]) - dx, bdy = mpq_class(b[1]) - dy;
  const mpq_class cdx = mpq_class(c[0]) - dx, cdy = mpq_class(c[1]) - dy;
  const mpq_class alift = adx * adx + ady * ady;
  const mpq_class blift = bdx * bdx + bdy * bdy;
  const mpq_class clift = cdx * cdx + cdy * cdy;
  const mpq_class det = alift * (bdx * cdy - cdx * bdy) + blift * (cdx * ady - adx * cdy) + clift * (adx * bdy - bdx * ady);
  return sign(det);
}

}  // namespace

int orient2d(const double* a, const double* b, const double* c) {
  const double detleft = (a[0] - c[0]) * (b[1] - c[1]);
  const double detright = (a[1] - c[1]) * (b[0] - c[0]);
  const double det = detleft - detright;
  const double detsum = std::abs(detleft) + std::abs(detright);
  if (std::abs(det) > kCcwBound * detsum) return det > 0.0 ? 1 : -1;
  return orient2d_exact(a, b, c);
}

double incircle_fast(const double* a, const double* b, const double* c, const double* d) {
  const double adx = a[0] - d[0], ady = a[1] - d[1];
  const double bdx = b[0] - d[0], bdy = b[1] - d[1];
  const double cdx = c[0] - d[0], cdy = c[1] - d[1];
  const double alift = adx * adx + ady * ady;
  const double blift = bdx * bdx + bdy * bdy;
  const double clift = cdx * cdx + cdy * cdy;
  return alift * (bdx * cdy - cdx * bdy) + blift * (cdx * ady - adx * cdy) + clift * (adx * bdy - bdx * ady);
}

int incircle(const double* a, const double* b, const double* c, const double* d) {
  const double adx = a[0] - d[0], ady = a[1] - d[1];
  const double bdx = b[0] - d[0], bdy = b[1] - d[1];
  const double cdx = c[0] - d[0], cdy = c[1] - d[1];

  const double bdxcdy = bdx * cdy, cdxbdy = cdx * bdy;
  const double cdxady = cdx * ady, adxcdy = adx * cdy;
  const double adxbdy = adx * bdy, bdxady = bdx * ady;
  const double alift = adx * adx + ady * ady;
  const double blift = bdx * bdx + bdy * bdy;
  const double clift = cdx * cdx + cdy * cdy;

  const double det = alift * (bdxcdy - cdxbdy) + blift * (cdxady - adxcdy) + clift * (adxbdy - bdxady);
  const double permanent = (std::abs(bdxcdy) + std::abs(cdxbdy)) * alift +
                           (std::abs(cdxady) + std::abs(adxcdy)) * blift +
                           (std::abs(adxbdy) + std::abs(bdxady)) * clift;
  if (std::abs(det) > kIccBound * permanent) return det > 0.0 ? 1 : -1;
  return incircle_exact(a, b, c, d);
}

}  // namespace gtforge::predicates
