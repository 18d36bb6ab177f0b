#include "stspot/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace stspot::geom {

namespace {
constexpr double kEps = 1e-9;
int sgn(double d) { return (d > kEps) - (d < -kEps); }
}  // namespace

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (b.x - o.x) * (a.y - o.y);
}

double signed_area(const Polygon& p) {
  double s = 0.0;
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = p[i];
    const Point& b = p[(i + 1) % n];
    s += a.x * b.y - a.y * b.x;
  }
  return 0.5 * s;
}

double area(const Polygon& p) { return std::abs(signed_area(p)); }

static bool on_segment(const Point& a, const Point& b, const Point& q) {
  return sgn(cross(a, b, q)) == 0 &&
         q.x >= std::min(a.x, b.x) - kEps && q.x <= std::max(a.x, b.x) + kEps &&
         q.y >= std::min(a.y, b.y) - kEps && q.y <= std::max(a.y, b.y) + kEps;
}

bool segments_intersect(const Point& a, const Point& b, const Point& c,
                        const Point& d) {
  const int d1 = sgn(cross(a, b, c));
  const int d2 = sgn(cross(a, b, d));
  const int d3 = sgn(cross(c, d, a));
  const int d4 = sgn(cross(c, d, b));
  if (d1 * d2 < 0 && d3 * d4 < 0) return true;
  if (d1 == 0 && on_segment(a, b, c)) return true;
  if (d2 == 0 && on_segment(a, b, d)) return true;
  if (d3 == 0 && on_segment(c, d, a)) return true;
  if (d4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

bool is_simple(const Polygon& p) {
  const std::size_t n = p.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = p[i];
    const Point& b = p[(i + 1) % n];
    if (std::abs(a.x - b.x) < kEps && std::abs(a.y - b.y) < kEps)
      return false;  // zero-length edge
    for (std::size_t j = i + 1; j < n; ++j) {
      const Point& c = p[j];
      const Point& d = p[(j + 1) % n];
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      if (adjacent) {
        // Shared endpoint is fine; any further contact is not.
        const Point& shared = (j == i + 1) ? b : a;
        const Point& far_ab = (j == i + 1) ? a : b;
        const Point& far_cd = (j == i + 1) ? d : c;
        if (on_segment(c, d, far_ab) &&
            !(std::abs(far_ab.x - shared.x) < kEps &&
              std::abs(far_ab.y - shared.y) < kEps))
          return false;
        if (on_segment(a, b, far_cd) &&
            !(std::abs(far_cd.x - shared.x) < kEps &&
              std::abs(far_cd.y - shared.y) < kEps))
          return false;
        continue;
      }
      if (segments_intersect(a, b, c, d)) return false;
    }
  }
  return true;
}

bool point_in_polygon(const Point& q, const Polygon& p) {
  // Even-odd ray casting.
  bool inside = false;
  const std::size_t n = p.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const bool straddles = (p[i].y > q.y) != (p[j].y > q.y);
    if (straddles) {
      const double x_at =
          p[j].x + (p[i].x - p[j].x) * (q.y - p[j].y) / (p[i].y - p[j].y);
      if (q.x < x_at) inside = !inside;
    }
  }
  return inside;
}

Polygon convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Point& a, const Point& b) {
                          return a.x == b.x && a.y == b.y;
                        }),
            pts.end());
  const std::size_t n = pts.size();
  if (n < 3) return pts;
  Polygon hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

namespace {

// Clip triangle (o,a,b) by half-plane left of (c,d); both triangles are
// assumed counter-clockwise. Small fixed-capacity polygon buffers.
struct Poly8 {
  Point p[16];
  int n = 0;
};

void half_plane_cut(Poly8& poly, const Point& a, const Point& b) {
  Poly8 out;
  for (int i = 0; i < poly.n; ++i) {
    const Point& cur = poly.p[i];
    const Point& nxt = poly.p[(i + 1) % poly.n];
    const double s1 = cross(a, b, cur);
    const double s2 = cross(a, b, nxt);
    if (sgn(s1) >= 0) out.p[out.n++] = cur;
    if (sgn(s1) * sgn(s2) < 0) {
      const double t = s1 / (s1 - s2);
      out.p[out.n] = {cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)};
      ++out.n;
    }
  }
  poly = out;
}

double poly8_area(const Poly8& poly) {
  double s = 0.0;
  for (int i = 0; i < poly.n; ++i) {
    const Point& a = poly.p[i];
    const Point& b = poly.p[(i + 1) % poly.n];
    s += a.x * b.y - a.y * b.x;
  }
  return 0.5 * s;
}

// Signed intersection area of triangles (o,a,b) and (o,c,d), o the origin.
double tri_tri_overlap(Point a, Point b, Point c, Point d) {
  const Point o{0.0, 0.0};
  int s1 = sgn(cross(o, a, b));
  int s2 = sgn(cross(o, c, d));
  if (s1 == 0 || s2 == 0) return 0.0;
  if (s1 < 0) std::swap(a, b);
  if (s2 < 0) std::swap(c, d);
  Poly8 poly;
  poly.p[0] = o;
  poly.p[1] = a;
  poly.p[2] = b;
  poly.n = 3;
  half_plane_cut(poly, o, c);
  if (poly.n > 2) half_plane_cut(poly, c, d);
  if (poly.n > 2) half_plane_cut(poly, d, o);
  if (poly.n < 3) return 0.0;
  const double res = poly8_area(poly);
  return s1 * s2 < 0 ? -res : res;
}

}  // namespace

double intersection_area(const Polygon& a, const Polygon& b) {
  if (a.size() < 3 || b.size() < 3) return 0.0;
  Polygon pa = a, pb = b;
  if (signed_area(pa) < 0) std::reverse(pa.begin(), pa.end());
  if (signed_area(pb) < 0) std::reverse(pb.begin(), pb.end());
  double total = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const Point& p0 = pa[i];
    const Point& p1 = pa[(i + 1) % pa.size()];
    for (std::size_t j = 0; j < pb.size(); ++j) {
      const Point& q0 = pb[j];
      const Point& q1 = pb[(j + 1) % pb.size()];
      total += tri_tri_overlap(p0, p1, q0, q1);
    }
  }
  return std::abs(total);
}

double iou(const Polygon& a, const Polygon& b) {
  const double aa = area(a), ab = area(b);
  if (aa <= 0.0 || ab <= 0.0) return 0.0;
  const double inter = intersection_area(a, b);
  const double uni = aa + ab - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

Box bounding_box(const Polygon& p) {
  Box b{p[0].x, p[0].y, p[0].x, p[0].y};
  for (const auto& q : p) {
    b.x0 = std::min(b.x0, q.x);
    b.y0 = std::min(b.y0, q.y);
    b.x1 = std::max(b.x1, q.x);
    b.y1 = std::max(b.y1, q.y);
  }
  return b;
}

Polygon box_polygon(const Box& b) {
  return {{b.x0, b.y0}, {b.x1, b.y0}, {b.x1, b.y1}, {b.x0, b.y1}};
}

double box_iou(const Box& a, const Box& b) {
  const double ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  const double ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  const double iw = std::max(ix1 - ix0, 0.0), ih = std::max(iy1 - iy0, 0.0);
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace stspot::geom
