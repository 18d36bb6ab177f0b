#ifndef STSPOT_GEOMETRY_HPP_
#define STSPOT_GEOMETRY_HPP_

#include <vector>

namespace stspot::geom {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

using Polygon = std::vector<Point>;

double cross(const Point& o, const Point& a, const Point& b);

/// Signed area, positive for counter-clockwise vertex order.
double signed_area(const Polygon& p);
double area(const Polygon& p);

/// Proper or touching intersection of segments ab and cd.
bool segments_intersect(const Point& a, const Point& b, const Point& c,
                        const Point& d);

/// Simple polygon test: >= 3 vertices, no two non-adjacent edges intersect,
/// adjacent edges meet only at their shared vertex.
bool is_simple(const Polygon& p);

bool point_in_polygon(const Point& q, const Polygon& p);

Polygon convex_hull(std::vector<Point> pts);

/// Area of intersection of two simple polygons, computed by summing signed
/// overlaps of origin-fanned triangles; exact for any simple polygons.
double intersection_area(const Polygon& a, const Polygon& b);

/// intersection / union, in [0,1]. Degenerate input yields 0.
double iou(const Polygon& a, const Polygon& b);

struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
};

Box bounding_box(const Polygon& p);
Polygon box_polygon(const Box& b);
double box_iou(const Box& a, const Box& b);

}  // namespace stspot::geom

#endif  // STSPOT_GEOMETRY_HPP_
