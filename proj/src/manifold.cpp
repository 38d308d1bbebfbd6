#include "skad/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "skad/errors.hpp"

namespace skad {
namespace {

constexpr double kMaxRadius = 1.0 - kBallMargin;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void require_same_width(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": width mismatch " + std::to_string(a) + " vs " +
                         std::to_string(b));
  }
}

void require_in_ball(std::span<const double> x, const char* op) {
  if (!(norm(x) < 1.0)) {
    throw DomainError(std::string(op) + ": point with norm " + std::to_string(norm(x)) +
                      " is outside the open unit ball");
  }
}

void require_unit(std::span<const double> x, const char* op) {
  if (!(std::abs(norm(x) - 1.0) <= kSphereTolerance)) {
    throw DomainError(std::string(op) + ": point with norm " + std::to_string(norm(x)) +
                      " is not on the unit sphere");
  }
}

// Pulls points in (1 - margin, 1) back to radius 1 - margin.
std::vector<double> clip_to_ball(std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  const double r = norm(x);
  if (r > kMaxRadius) {
    for (double& e : out) e *= kMaxRadius / r;
  }
  return out;
}

struct HyperbolicTerms {
  double a, b, q, u;
};

HyperbolicTerms hyperbolic_terms(std::span<const double> x, std::span<const double> y) {
  double xx = 0.0, yy = 0.0, q = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx += x[i] * x[i];
    yy += y[i] * y[i];
    q += (x[i] - y[i]) * (x[i] - y[i]);
  }
  const double a = 1.0 - xx, b = 1.0 - yy;
  return {a, b, q, 2.0 * q / (a * b)};
}

// arccosh(1 + u) without cancellation for small u.
double acosh1p(double u) { return std::log1p(u + std::sqrt(u * (u + 2.0))); }

void require_batch(const Tensor& x, const Tensor& c, const char* op) {
  if (x.rank() != 2 || c.rank() != 1 || x.dim(1) != c.dim(0)) {
    throw DimensionError(std::string(op) + ": expected [N,n] and [n], got " + to_string(x.shape()) +
                         " and " + to_string(c.shape()));
  }
}

std::span<const double> row(const Tensor& t, std::size_t i, std::size_t n) {
  return t.data().subspan(i * n, n);
}

}  // namespace

Manifold parse_manifold(std::string_view name) {
  if (name == "euclidean") return Manifold::euclidean;
  if (name == "hyperbolic") return Manifold::hyperbolic;
  if (name == "spherical") return Manifold::spherical;
  throw ConfigError("unknown manifold '" + std::string(name) +
                    "' (expected euclidean | hyperbolic | spherical)");
}

std::string_view to_string(Manifold m) {
  switch (m) {
    case Manifold::euclidean: return "euclidean";
    case Manifold::hyperbolic: return "hyperbolic";
    case Manifold::spherical: return "spherical";
  }
  return "?";
}

LatentPoint::LatentPoint(Manifold manifold, std::vector<double> coords)
    : manifold_(manifold), coords_(std::move(coords)) {
  if (!valid(manifold_, coords_)) {
    throw DomainError("point with norm " + std::to_string(norm(coords_)) + " is not on the " +
                      std::string(to_string(manifold_)) + " manifold");
  }
}

bool LatentPoint::valid(Manifold manifold, std::span<const double> coords) {
  for (double e : coords)
    if (!std::isfinite(e)) return false;
  switch (manifold) {
    case Manifold::euclidean: return true;
    case Manifold::hyperbolic: return norm(coords) < 1.0;
    case Manifold::spherical: return std::abs(norm(coords) - 1.0) <= kSphereTolerance;
  }
  return false;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double dist_euclidean(std::span<const double> x, std::span<const double> y) {
  require_same_width(x.size(), y.size(), "dist_euclidean");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(s);
}

LatentPoint exp_origin(std::span<const double> v) {
  const double r = norm(v);
  std::vector<double> out(v.size(), 0.0);
  if (r > 0.0) {
    const double radius = std::min(std::tanh(r), kMaxRadius);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = radius * v[i] / r;
  }
  return LatentPoint(Manifold::hyperbolic, std::move(out));
}

double dist_hyperbolic(std::span<const double> x, std::span<const double> y) {
  require_same_width(x.size(), y.size(), "dist_hyperbolic");
  require_in_ball(x, "dist_hyperbolic");
  require_in_ball(y, "dist_hyperbolic");
  const auto xc = clip_to_ball(x);
  const auto yc = clip_to_ball(y);
  return acosh1p(hyperbolic_terms(xc, yc).u);
}

double dist_hyperbolic(const LatentPoint& x, const LatentPoint& y) {
  return dist_hyperbolic(x.coords(), y.coords());
}

LatentPoint project_sphere(std::span<const double> v) {
  const double r = norm(v);
  if (!(r > 0.0)) throw DegenerateDirectionError("project_sphere: zero vector has no direction");
  std::vector<double> out(v.begin(), v.end());
  for (double& e : out) e /= r;
  return LatentPoint(Manifold::spherical, std::move(out));
}

double dist_spherical(std::span<const double> x, std::span<const double> c) {
  require_same_width(x.size(), c.size(), "dist_spherical");
  require_unit(x, "dist_spherical");
  require_unit(c, "dist_spherical");
  return std::clamp(1.0 - dot(x, c), 0.0, 2.0);
}

double dist_spherical(const LatentPoint& x, const LatentPoint& c) {
  return dist_spherical(x.coords(), c.coords());
}

double manifold_distance(Manifold m, std::span<const double> x, std::span<const double> y) {
  switch (m) {
    case Manifold::euclidean: return dist_euclidean(x, y);
    case Manifold::hyperbolic: return dist_hyperbolic(x, y);
    case Manifold::spherical: return dist_spherical(x, y);
  }
  return 0.0;
}

LatentPoint centroid(std::span<const LatentPoint> points, Manifold m) {
  if (points.empty()) throw EmptySetError("centroid of an empty point set");
  const std::size_t n = points.front().dim();
  Tensor rows({points.size(), n});
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].manifold() != m) throw DomainError("centroid: point on a different manifold");
    require_same_width(points[i].dim(), n, "centroid");
    for (std::size_t j = 0; j < n; ++j) rows[i * n + j] = points[i].coords()[j];
  }
  return LatentPoint(m, centroid(rows, m).values());
}

Tensor centroid(const Tensor& points, Manifold m) {
  if (points.rank() != 2) throw DimensionError("centroid: expected [N,n], got " + to_string(points.shape()));
  const std::size_t count = points.dim(0), n = points.dim(1);
  if (count == 0) throw EmptySetError("centroid of an empty point set");
  Tensor c({n});
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < n; ++j) c[j] += points[i * n + j];
  for (double& e : c.values()) e /= static_cast<double>(count);
  if (m == Manifold::spherical) {
    const double r = norm(c.data());
    if (r < kMinDirectionNorm) {
      throw DegenerateDirectionError("spherical centroid: mean direction has norm " + std::to_string(r));
    }
    for (double& e : c.values()) e /= r;
  }
  if (!LatentPoint::valid(m, c.data())) {
    throw DomainError("centroid left the " + std::string(to_string(m)) + " manifold");
  }
  return c;
}

Var exp_origin(Tape& tape, Var v) {
  const Tensor& vv = tape.value(v);
  if (vv.rank() != 2) throw DimensionError("exp_origin: expected [N,n], got " + to_string(vv.shape()));
  const std::size_t count = vv.dim(0), n = vv.dim(1);
  Tensor out({count, n});
  for (std::size_t i = 0; i < count; ++i) {
    const double r = norm(row(vv, i, n));
    if (r == 0.0) continue;
    const double radius = std::min(std::tanh(r), kMaxRadius);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = radius * vv[i * n + j] / r;
  }
  return tape.record(std::move(out), {v}, [v, count, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    const Tensor& in = tp.value(v);
    Tensor& gv = tp.grad_buffer(v.id);
    for (std::size_t i = 0; i < count; ++i) {
      const auto vi = row(in, i, n);
      const auto gi = row(g, i, n);
      const double r = norm(vi);
      // out = s(r)·v with s = tanh(r)/r; d out/dv = s·I + (s'/r)·v vᵀ.
      double s, ds_over_r;
      if (r < 1e-3) {
        s = 1.0 - r * r / 3.0;
        ds_over_r = -2.0 / 3.0 + 8.0 * r * r / 15.0;
      } else if (std::tanh(r) >= kMaxRadius) {
        // Capped radius: out = R·v/r, only the tangential part survives.
        s = kMaxRadius / r;
        ds_over_r = -kMaxRadius / (r * r * r);
      } else {
        const double th = std::tanh(r);
        s = th / r;
        ds_over_r = ((1.0 - th * th) * r - th) / (r * r * r);
      }
      const double vg = dot(vi, gi);
      for (std::size_t j = 0; j < n; ++j) gv[i * n + j] += s * gi[j] + ds_over_r * vg * vi[j];
    }
  });
}

Var project_sphere(Tape& tape, Var v) {
  const Tensor& vv = tape.value(v);
  if (vv.rank() != 2) throw DimensionError("project_sphere: expected [N,n], got " + to_string(vv.shape()));
  const std::size_t count = vv.dim(0), n = vv.dim(1);
  Tensor out({count, n});
  for (std::size_t i = 0; i < count; ++i) {
    const double r = norm(row(vv, i, n));
    if (!(r > 0.0)) throw DegenerateDirectionError("project_sphere: zero vector has no direction");
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = vv[i * n + j] / r;
  }
  return tape.record(std::move(out), {v}, [v, count, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    const Tensor& y = tp.value(self);
    const Tensor& in = tp.value(v);
    Tensor& gv = tp.grad_buffer(v.id);
    for (std::size_t i = 0; i < count; ++i) {
      const double r = norm(row(in, i, n));
      const double yg = dot(row(y, i, n), row(g, i, n));
      for (std::size_t j = 0; j < n; ++j) gv[i * n + j] += (g[i * n + j] - yg * y[i * n + j]) / r;
    }
  });
}

Var to_manifold(Tape& tape, Var latent, Manifold m) {
  switch (m) {
    case Manifold::euclidean: return latent;
    case Manifold::hyperbolic: return exp_origin(tape, latent);
    case Manifold::spherical: return project_sphere(tape, latent);
  }
  return latent;
}

Var dist_euclidean(Tape& tape, Var x, const Tensor& c) {
  const Tensor& xv = tape.value(x);
  require_batch(xv, c, "dist_euclidean");
  const std::size_t count = xv.dim(0), n = xv.dim(1);
  Tensor out({count});
  for (std::size_t i = 0; i < count; ++i) out[i] = dist_euclidean(row(xv, i, n), c.data());
  return tape.record(std::move(out), {x}, [x, c, count, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    const Tensor& d = tp.value(self);
    const Tensor& xv2 = tp.value(x);
    Tensor& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < count; ++i) {
      if (d[i] == 0.0) continue;  // subgradient 0 at coincidence
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i] * (xv2[i * n + j] - c[j]) / d[i];
    }
  });
}

Var dist_hyperbolic(Tape& tape, Var x, const Tensor& c) {
  const Tensor& xv = tape.value(x);
  require_batch(xv, c, "dist_hyperbolic");
  require_in_ball(c.data(), "dist_hyperbolic");
  const std::size_t count = xv.dim(0), n = xv.dim(1);
  const Tensor cc({n}, clip_to_ball(c.data()));
  Tensor out({count});
  for (std::size_t i = 0; i < count; ++i) {
    // NaN rows pass through so the caller's loss check can report them
    if (std::isfinite(norm(row(xv, i, n)))) require_in_ball(row(xv, i, n), "dist_hyperbolic");
    out[i] = acosh1p(hyperbolic_terms(clip_to_ball(row(xv, i, n)), cc.data()).u);
  }
  return tape.record(std::move(out), {x}, [x, cc, count, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    const Tensor& xv2 = tp.value(x);
    Tensor& gx = tp.grad_buffer(x.id);
    std::vector<double> gclip(n);
    for (std::size_t i = 0; i < count; ++i) {
      const auto xi = row(xv2, i, n);
      const auto xc = clip_to_ball(xi);
      const HyperbolicTerms h = hyperbolic_terms(xc, cc.data());
      if (h.u == 0.0) continue;
      // d/du acosh(1+u) · du/dx, with du/dx = 4/(ab)·((x - c) + q·x/a)
      const double dd_du = 1.0 / std::sqrt(h.u * (h.u + 2.0));
      const double k = g[i] * dd_du * 4.0 / (h.a * h.b);
      for (std::size_t j = 0; j < n; ++j) gclip[j] = k * ((xc[j] - cc[j]) + h.q * xc[j] / h.a);
      const double r = norm(xi);
      if (r > kMaxRadius) {
        // chain through x -> R·x/r
        double xg = 0.0;
        for (std::size_t j = 0; j < n; ++j) xg += xi[j] * gclip[j];
        for (std::size_t j = 0; j < n; ++j)
          gx[i * n + j] += kMaxRadius / r * (gclip[j] - xg * xi[j] / (r * r));
      } else {
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += gclip[j];
      }
    }
  });
}

Var dist_spherical(Tape& tape, Var x, const Tensor& c) {
  const Tensor& xv = tape.value(x);
  require_batch(xv, c, "dist_spherical");
  const std::size_t count = xv.dim(0), n = xv.dim(1);
  Tensor out({count});
  for (std::size_t i = 0; i < count; ++i) out[i] = std::clamp(1.0 - dot(row(xv, i, n), c.data()), 0.0, 2.0);
  for (std::size_t i = 0; i < count; ++i) {
    require_unit(row(xv, i, n), "dist_spherical");
  }
  require_unit(c.data(), "dist_spherical");
  return tape.record(std::move(out), {x}, [x, c, count, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.out_grad(self);
    Tensor& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] -= g[i] * c[j];
  });
}

Var distance_to_center(Tape& tape, Var x, Manifold m, const Tensor& c) {
  switch (m) {
    case Manifold::euclidean: return dist_euclidean(tape, x, c);
    case Manifold::hyperbolic: return dist_hyperbolic(tape, x, c);
    case Manifold::spherical: return dist_spherical(tape, x, c);
  }
  return x;
}

}  // namespace skad
