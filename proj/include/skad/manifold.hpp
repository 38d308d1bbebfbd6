#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "skad/tape.hpp"

namespace skad {

enum class Manifold { euclidean, hyperbolic, spherical };

Manifold parse_manifold(std::string_view name);
std::string_view to_string(Manifold m);

/// Points of the Poincaré ball are kept at radius <= 1 - kBallMargin.
inline constexpr double kBallMargin = 1e-7;
/// Allowed deviation of a spherical point from unit norm.
inline constexpr double kSphereTolerance = 1e-9;
/// Mean directions shorter than this cannot be normalized.
inline constexpr double kMinDirectionNorm = 1e-9;

/// Coordinates tagged with the manifold they live on. Construction validates:
/// hyperbolic points lie in the open unit ball, spherical points on the unit sphere.
class LatentPoint {
 public:
  LatentPoint(Manifold manifold, std::vector<double> coords);

  Manifold manifold() const { return manifold_; }
  std::span<const double> coords() const { return coords_; }
  std::size_t dim() const { return coords_.size(); }

  static bool valid(Manifold manifold, std::span<const double> coords);

  friend bool operator==(const LatentPoint&, const LatentPoint&) = default;

 private:
  Manifold manifold_;
  std::vector<double> coords_;
};

double norm(std::span<const double> v);

double dist_euclidean(std::span<const double> x, std::span<const double> y);
/// tanh(|v|)·v/|v|, radius capped at 1 - kBallMargin.
LatentPoint exp_origin(std::span<const double> v);
/// arccosh(1 + 2|x-y|² / ((1-|x|²)(1-|y|²))) on the Poincaré ball.
double dist_hyperbolic(std::span<const double> x, std::span<const double> y);
double dist_hyperbolic(const LatentPoint& x, const LatentPoint& y);
LatentPoint project_sphere(std::span<const double> v);
/// Cosine distance 1 - x·c between unit vectors, in [0, 2].
double dist_spherical(std::span<const double> x, std::span<const double> c);
double dist_spherical(const LatentPoint& x, const LatentPoint& c);

/// Distance on `m` between points already mapped onto it.
double manifold_distance(Manifold m, std::span<const double> x, std::span<const double> y);

/// Euclidean: mean. Spherical: mean renormalized to unit length.
/// Hyperbolic: mean of ball coordinates (stays inside the ball by convexity).
LatentPoint centroid(std::span<const LatentPoint> points, Manifold m);
/// Row-wise variant over points [N,n].
Tensor centroid(const Tensor& points, Manifold m);

// Differentiable row-wise maps over a batch of points [N,n].
Var exp_origin(Tape& tape, Var v);
Var project_sphere(Tape& tape, Var v);
/// Maps raw projector output onto the manifold (identity for Euclidean).
Var to_manifold(Tape& tape, Var latent, Manifold m);

// Differentiable distances from each row of x [N,n] to a fixed point c [n].
// Result has shape [N]; c receives no gradient.
Var dist_euclidean(Tape& tape, Var x, const Tensor& c);
Var dist_hyperbolic(Tape& tape, Var x, const Tensor& c);
Var dist_spherical(Tape& tape, Var x, const Tensor& c);
Var distance_to_center(Tape& tape, Var x, Manifold m, const Tensor& c);

}  // namespace skad
