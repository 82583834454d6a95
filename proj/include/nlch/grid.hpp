#pragma once

#include "nlch/common.hpp"
#include "nlch/quadrature.hpp"

#include <algorithm>
#include <array>
#include <sstream>

namespace nlch {

/// Axis-aligned box in one or two dimensions.
template <class Scalar>
struct Box {
  int dim = 1;
  Point<Scalar> lo = Point<Scalar>::Zero();
  Point<Scalar> hi = Point<Scalar>::Zero();

  static Box interval(Scalar a, Scalar b) {
    Box box;
    box.dim = 1;
    box.lo << a, 0;
    box.hi << b, 0;
    return box;
  }
  static Box rectangle(Scalar ax, Scalar bx, Scalar ay, Scalar by) {
    Box box;
    box.dim = 2;
    box.lo << ax, ay;
    box.hi << bx, by;
    return box;
  }

  Scalar extent(int axis) const { return hi[axis] - lo[axis]; }

  Scalar volume() const {
    Scalar v = 1;
    for (int k = 0; k < dim; ++k) v *= extent(k);
    return v;
  }

  Scalar diameter() const { return (hi - lo).head(dim).norm(); }

  bool degenerate() const {
    for (int k = 0; k < dim; ++k)
      if (!(extent(k) > Scalar(0)) || !std::isfinite(double(extent(k)))) return true;
    return false;
  }

  bool contains(const Point<Scalar>& p) const {
    for (int k = 0; k < dim; ++k)
      if (p[k] < lo[k] || p[k] > hi[k]) return false;
    return true;
  }

  /// Euclidean distance from p to the closed box (zero inside).
  Scalar distance(const Point<Scalar>& p) const {
    Scalar acc = 0;
    for (int k = 0; k < dim; ++k) {
      const Scalar e = std::max({lo[k] - p[k], Scalar(0), p[k] - hi[k]});
      acc += e * e;
    }
    return std::sqrt(acc);
  }

  /// Distance from an interior point to the boundary.
  Scalar boundary_distance(const Point<Scalar>& p) const {
    Scalar d = infinity<Scalar>();
    for (int k = 0; k < dim; ++k) d = std::min({d, p[k] - lo[k], hi[k] - p[k]});
    return d;
  }
};

/// Cell-centred discretization of a box (or a finite union of disjoint boxes)
/// with midpoint weights, plus an exterior annulus quadrature used for
/// zero-extension tails. Immutable after construction.
template <class Scalar>
struct Grid {
  int dim = 1;
  std::vector<Box<Scalar>> components;
  int n_per_axis = 0;
  std::vector<Point<Scalar>> nodes;
  Vector<Scalar> weights;
  std::vector<int> component_of;
  Scalar ext_radius = 0;
  int ext_refine = 0;
  std::vector<Point<Scalar>> ext_nodes;
  Vector<Scalar> ext_weights;

  Eigen::Index size() const { return static_cast<Eigen::Index>(nodes.size()); }
  bool single_box() const { return components.size() == 1; }
  const Box<Scalar>& box() const { return components.front(); }

  /// Mesh width along `axis` of the first component.
  Scalar h(int axis = 0) const { return box().extent(axis) / Scalar(n_per_axis); }

  Scalar volume() const {
    Scalar v = 0;
    for (const auto& c : components) v += c.volume();
    return v;
  }

  Scalar diameter() const {
    Scalar d = 0;
    for (const auto& a : components)
      for (const auto& b : components) {
        Point<Scalar> span;
        for (int k = 0; k < 2; ++k)
          span[k] = std::max(std::abs(b.hi[k] - a.lo[k]), std::abs(a.hi[k] - b.lo[k]));
        d = std::max(d, span.head(dim).norm());
      }
    return d;
  }

  /// Weighted mean (the mass functional).
  Scalar mean(const Vector<Scalar>& u) const { return weights.dot(u) / weights.sum(); }

  /// Distance of a point of the domain to the boundary of its component.
  Scalar boundary_distance(const Point<Scalar>& p) const {
    Scalar d = infinity<Scalar>();
    for (const auto& c : components)
      if (c.contains(p)) d = std::min(d, c.boundary_distance(p));
    return d;
  }

  bool contains(const Point<Scalar>& p) const {
    return std::any_of(components.begin(), components.end(),
                       [&](const auto& c) { return c.contains(p); });
  }
};

namespace detail {

/// One-dimensional exterior rule on (0, radius]: Gauss panels whose widths
/// double away from the boundary, the first one `first` wide.
template <class Scalar>
void exterior_axis_rule(Scalar first, Scalar radius, std::vector<Scalar>& offsets,
                        std::vector<Scalar>& w) {
  const auto& rule = gauss_legendre<Scalar>(4);
  Scalar lo = 0;
  Scalar width = first;
  while (lo < radius) {
    const Scalar hi = std::min(radius, lo + width);
    const Scalar half = (hi - lo) / 2, mid = (hi + lo) / 2;
    for (int k = 0; k < 4; ++k) {
      offsets.push_back(mid + half * rule.nodes[k]);
      w.push_back(half * rule.weights[k]);
    }
    lo = hi;
    width *= 2;
  }
}

template <class Scalar>
void add_cells(const Box<Scalar>& box, int n, Grid<Scalar>& grid, int component) {
  const Scalar hx = box.extent(0) / Scalar(n);
  if (box.dim == 1) {
    for (int i = 0; i < n; ++i) {
      Point<Scalar> p(box.lo[0] + (Scalar(i) + Scalar(0.5)) * hx, 0);
      grid.nodes.push_back(p);
      grid.component_of.push_back(component);
    }
    return;
  }
  const Scalar hy = box.extent(1) / Scalar(n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      Point<Scalar> p(box.lo[0] + (Scalar(i) + Scalar(0.5)) * hx,
                      box.lo[1] + (Scalar(j) + Scalar(0.5)) * hy);
      grid.nodes.push_back(p);
      grid.component_of.push_back(component);
    }
}

}  // namespace detail

/// Uniform cell-centred grid on `box` with n_per_axis cells per axis.
/// The exterior annulus {0 < dist(y, box) <= ext_radius} is discretized with
/// panels of width h / ext_refine next to the boundary, doubling outwards.
template <class Scalar>
Grid<Scalar> build_grid(int dim, const Box<Scalar>& box_in, int n_per_axis, Scalar ext_radius = 0,
                        int ext_refine = 4) {
  if (dim != 1 && dim != 2) throw ConfigError("grid.dim must be 1 or 2");
  Box<Scalar> box = box_in;
  box.dim = dim;
  if (box.degenerate()) throw ConfigError("grid.box is degenerate");
  if (n_per_axis < 2) throw ConfigError("grid.n_per_axis must be >= 2");
  if (!(ext_radius >= 0)) throw ConfigError("grid.ext_radius must be >= 0");
  if (ext_refine < 1) throw ConfigError("grid.ext_refine must be >= 1");

  Grid<Scalar> grid;
  grid.dim = dim;
  grid.components = {box};
  grid.n_per_axis = n_per_axis;
  grid.ext_radius = ext_radius;
  grid.ext_refine = ext_refine;
  detail::add_cells(box, n_per_axis, grid, 0);
  const Scalar cell = box.volume() / std::pow(Scalar(n_per_axis), Scalar(dim));
  grid.weights = Vector<Scalar>::Constant(grid.size(), cell);

  if (ext_radius > 0) {
    std::vector<Point<Scalar>> pts;
    std::vector<Scalar> ws;
    // Per-axis coordinate rules: left exterior, the box span, right exterior.
    std::array<std::vector<Scalar>, 2> coord, cw;
    for (int k = 0; k < dim; ++k) {
      const Scalar hk = box.extent(k) / Scalar(n_per_axis);
      std::vector<Scalar> off, w;
      detail::exterior_axis_rule<Scalar>(hk / Scalar(ext_refine), ext_radius, off, w);
      for (std::size_t m = 0; m < off.size(); ++m) {
        coord[k].push_back(box.lo[k] - off[m]);
        cw[k].push_back(w[m]);
        coord[k].push_back(box.hi[k] + off[m]);
        cw[k].push_back(w[m]);
      }
      if (dim == 2) {
        const int cells = n_per_axis * ext_refine;
        const Scalar width = box.extent(k) / Scalar(cells);
        const auto& rule = gauss_legendre<Scalar>(2);
        for (int c = 0; c < cells; ++c) {
          const Scalar mid = box.lo[k] + (Scalar(c) + Scalar(0.5)) * width;
          for (int g = 0; g < 2; ++g) {
            coord[k].push_back(mid + width / 2 * rule.nodes[g]);
            cw[k].push_back(width / 2 * rule.weights[g]);
          }
        }
      }
    }
    if (dim == 1) {
      for (std::size_t m = 0; m < coord[0].size(); ++m) {
        pts.emplace_back(coord[0][m], 0);
        ws.push_back(cw[0][m]);
      }
    } else {
      for (std::size_t a = 0; a < coord[0].size(); ++a)
        for (std::size_t b = 0; b < coord[1].size(); ++b) {
          Point<Scalar> p(coord[0][a], coord[1][b]);
          const Scalar d = box.distance(p);
          if (d > 0 && d <= ext_radius) {
            pts.push_back(p);
            ws.push_back(cw[0][a] * cw[1][b]);
          }
        }
    }
    grid.ext_nodes = std::move(pts);
    grid.ext_weights = Eigen::Map<Vector<Scalar>>(ws.data(), static_cast<Eigen::Index>(ws.size()));
  } else {
    grid.ext_weights.resize(0);
  }
  return grid;
}

/// Cell-centred grid on a union of pairwise disjoint boxes (no exterior data).
template <class Scalar>
Grid<Scalar> build_union_grid(int dim, const std::vector<Box<Scalar>>& boxes, int n_per_axis) {
  if (boxes.empty()) throw ConfigError("grid: at least one box is required");
  if (n_per_axis < 2) throw ConfigError("grid.n_per_axis must be >= 2");
  Grid<Scalar> grid;
  grid.dim = dim;
  grid.n_per_axis = n_per_axis;
  std::vector<Scalar> ws;
  for (std::size_t c = 0; c < boxes.size(); ++c) {
    Box<Scalar> box = boxes[c];
    box.dim = dim;
    if (box.degenerate()) throw ConfigError("grid: degenerate component box");
    for (std::size_t o = 0; o < c; ++o) {
      bool overlap = true;
      for (int k = 0; k < dim; ++k)
        overlap = overlap && box.lo[k] < grid.components[o].hi[k] && grid.components[o].lo[k] < box.hi[k];
      if (overlap) throw ConfigError("grid: component boxes overlap");
    }
    grid.components.push_back(box);
    const auto before = grid.nodes.size();
    detail::add_cells(box, n_per_axis, grid, static_cast<int>(c));
    const Scalar cell = box.volume() / std::pow(Scalar(n_per_axis), Scalar(dim));
    ws.insert(ws.end(), grid.nodes.size() - before, cell);
  }
  grid.weights = Eigen::Map<Vector<Scalar>>(ws.data(), static_cast<Eigen::Index>(ws.size()));
  grid.ext_weights.resize(0);
  return grid;
}

template <class Scalar>
Scalar pairwise_distance(const Grid<Scalar>& grid, Eigen::Index i, Eigen::Index j) {
  if (i < 0 || j < 0 || i >= grid.size() || j >= grid.size())
    throw std::out_of_range("pairwise_distance: node index out of range");
  return (grid.nodes[i] - grid.nodes[j]).norm();
}

/// Same parameters, n_per_axis multiplied by `factor`.
template <class Scalar>
Grid<Scalar> refined(const Grid<Scalar>& grid, int factor = 2) {
  if (grid.single_box())
    return build_grid<Scalar>(grid.dim, grid.box(), grid.n_per_axis * factor, grid.ext_radius,
                              grid.ext_refine);
  return build_union_grid<Scalar>(grid.dim, grid.components, grid.n_per_axis * factor);
}

}  // namespace nlch
