// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "scno/rng.hpp"

namespace scno {

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Vec = Eigen::VectorXd;

struct GridSpec {
  int m = 256;
  double length = 1.0;
  double dt = 0.005;       // macro timestep
  int steps = 100;         // macro steps
  int substep_multiplier = 1;

  double h() const { return length / m; }
  double final_time() const { return dt * steps; }
  void validate() const {
    if (m < 8) throw SolverError("grid: m must be >= 8");
    if (dt <= 0) throw SolverError("grid: dt must be positive");
    if (steps <= 0) throw SolverError("grid: steps must be positive");
  }
  Vec points() const {
    Vec x(m);
    for (int i = 0; i < m; ++i) x[i] = h() * i;
    return x;
  }
};

enum class FamilyTag {
  Convection,
  Diffusion,
  Reaction,
  ConvDiff,
  ReactDiff,
  NeutronDiff,
  Burgers,
  AdvReact,
};

inline const std::vector<std::pair<std::string, FamilyTag>>& family_names() {
  static const std::vector<std::pair<std::string, FamilyTag>> names = {
      {"convection", FamilyTag::Convection}, {"diffusion", FamilyTag::Diffusion},
      {"reaction", FamilyTag::Reaction},     {"conv_diff", FamilyTag::ConvDiff},
      {"react_diff", FamilyTag::ReactDiff},  {"neutron_diff", FamilyTag::NeutronDiff},
      {"burgers", FamilyTag::Burgers},       {"adv_react", FamilyTag::AdvReact}};
  return names;
}

inline std::string family_name(FamilyTag t) {
  for (const auto& [n, tag] : family_names())
    if (tag == t) return n;
  return "?";
}

inline FamilyTag parse_family(const std::string& s) {
  for (const auto& [n, tag] : family_names())
    if (n == s) return tag;
  std::string valid;
  for (const auto& [n, tag] : family_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw SolverError("unknown PDE family '" + s + "' (valid: " + valid + ")");
}

struct PdeFamily {
  FamilyTag tag = FamilyTag::Convection;
  double c = 1.0;          // convection speed
  double nu = 0.01;        // viscosity / diffusivity
  double k_r = 1.0;        // logistic reaction rate
  double D = 1.0;          // neutron diffusion coefficient
  double sigma_a = 0.1;    // absorption
  double nu_sigma_f = 0.12;  // production

  void validate() const {
    if (nu < 0) throw SolverError("family: nu must be non-negative");
    if (D <= 0) throw SolverError("family: D must be positive");
  }

  bool has_linear_convection() const {
    return tag == FamilyTag::Convection || tag == FamilyTag::ConvDiff ||
           tag == FamilyTag::AdvReact;
  }
  bool has_burgers_convection() const { return tag == FamilyTag::Burgers; }
  bool has_diffusion() const {
    return tag == FamilyTag::Diffusion || tag == FamilyTag::ConvDiff ||
           tag == FamilyTag::ReactDiff || tag == FamilyTag::NeutronDiff ||
           tag == FamilyTag::Burgers;
  }
  double diffusion_coef() const {
    return tag == FamilyTag::NeutronDiff ? D : nu;
  }
  bool has_logistic_reaction() const {
    return tag == FamilyTag::Reaction || tag == FamilyTag::ReactDiff ||
           tag == FamilyTag::AdvReact;
  }
  bool has_neutron_reaction() const { return tag == FamilyTag::NeutronDiff; }
  /// Families whose initial conditions must stay inside (0, 1).
  bool bounded_ic() const { return has_logistic_reaction() || has_neutron_reaction(); }
};

// ---------------------------------------------------------------------------
// Random Fourier initial conditions
// ---------------------------------------------------------------------------

struct FourierCoeffs {
  std::vector<double> a;  // sin coefficients, a[n-1] for mode n
  std::vector<double> b;  // cos coefficients
};

/// Evaluates sum_n a_n sin(2*pi*n*x/L) + b_n cos(2*pi*n*x/L) on the grid and
/// applies the family rescale convention: max-abs 1 for unconstrained
/// families, affine map onto [0.05, 0.95] for bounded-IC families.
/// Zero-amplitude input maps to the constant 0 (unconstrained) or 0.5 (bounded).
inline Vec fourier_ic_from_coeffs(const FourierCoeffs& fc, const GridSpec& grid,
                                  const PdeFamily& family) {
  Vec u = Vec::Zero(grid.m);
  const double two_pi_over_L = 2.0 * M_PI / grid.length;
  for (size_t n = 1; n <= fc.a.size(); ++n) {
    for (int i = 0; i < grid.m; ++i) {
      double phase = two_pi_over_L * double(n) * (grid.h() * i);
      u[i] += fc.a[n - 1] * std::sin(phase) + fc.b[n - 1] * std::cos(phase);
    }
  }
  const double tiny = 1e-12;
  if (family.bounded_ic()) {
    double lo = u.minCoeff(), hi = u.maxCoeff();
    if (hi - lo < tiny) return Vec::Constant(grid.m, 0.5);
    return 0.05 + 0.9 * (u.array() - lo) / (hi - lo);
  }
  double amax = u.cwiseAbs().maxCoeff();
  if (amax < tiny) return Vec::Zero(grid.m);
  return u / amax;
}

/// Draws 3..7 Fourier modes with coefficients N(0, 1/n^2) and rescales.
inline Vec sample_fourier_ic(Rng& rng, const GridSpec& grid, const PdeFamily& family) {
  int nmodes = int(rng.uniform_int(3, 7));
  FourierCoeffs fc;
  fc.a.resize(nmodes);
  fc.b.resize(nmodes);
  for (int n = 1; n <= nmodes; ++n) {
    fc.a[n - 1] = rng.normal(0.0, 1.0 / n);
    fc.b[n - 1] = rng.normal(0.0, 1.0 / n);
  }
  return fourier_ic_from_coeffs(fc, grid, family);
}

// ---------------------------------------------------------------------------
// Reference solver: method of lines with periodic boundaries.
//
// Diffusion is advanced by Crank-Nicolson half-steps (Strang split) with a
// prefactored dense LU; convection and reaction are advanced together by
// SSP-RK3 over fixed spatial stencils: third-order upwind-biased conservative
// flux for linear convection, MUSCL-minmod Rusanov flux for Burgers,
// pointwise reaction.
// ---------------------------------------------------------------------------

namespace pdedetail {

inline int wrap(int i, int m) { return (i % m + m) % m; }

inline double minmod(double a, double b) {
  if (a * b <= 0.0) return 0.0;
  return std::abs(a) < std::abs(b) ? a : b;
}

/// d/dt from linear convection -c du/dx, conservative 3rd-order upwind flux.
inline void add_linear_convection_rhs(const Vec& u, double c, double h, Vec& rhs) {
  const int m = int(u.size());
  // F[i] is the flux through the i+1/2 face.
  Vec F(m);
  if (c >= 0.0) {
    for (int i = 0; i < m; ++i)
      F[i] = c * (-u[wrap(i - 1, m)] + 5.0 * u[i] + 2.0 * u[wrap(i + 1, m)]) / 6.0;
  } else {
    for (int i = 0; i < m; ++i)
      F[i] = c * (2.0 * u[i] + 5.0 * u[wrap(i + 1, m)] - u[wrap(i + 2, m)]) / 6.0;
  }
  for (int i = 0; i < m; ++i) rhs[i] -= (F[i] - F[wrap(i - 1, m)]) / h;
}

/// d/dt from Burgers -d(u^2/2)/dx, MUSCL-minmod reconstruction with a
/// Rusanov (local Lax-Friedrichs) flux.
inline void add_burgers_rhs(const Vec& u, double h, Vec& rhs) {
  const int m = int(u.size());
  auto f = [](double v) { return 0.5 * v * v; };
  Vec F(m);
  for (int i = 0; i < m; ++i) {
    int ip = wrap(i + 1, m), im = wrap(i - 1, m), ipp = wrap(i + 2, m);
    double sl = minmod(u[i] - u[im], u[ip] - u[i]);
    double sr = minmod(u[ip] - u[i], u[ipp] - u[ip]);
    double uL = u[i] + 0.5 * sl;
    double uR = u[ip] - 0.5 * sr;
    double a = std::max(std::abs(uL), std::abs(uR));
    F[i] = 0.5 * (f(uL) + f(uR)) - 0.5 * a * (uR - uL);
  }
  for (int i = 0; i < m; ++i) rhs[i] -= (F[i] - F[wrap(i - 1, m)]) / h;
}

inline void add_reaction_rhs(const Vec& u, const PdeFamily& fam, Vec& rhs) {
  if (fam.has_logistic_reaction())
    rhs.array() += fam.k_r * u.array() * (1.0 - u.array());
  if (fam.has_neutron_reaction())
    rhs.array() += (fam.nu_sigma_f - fam.sigma_a) * u.array();
}

inline Vec explicit_rhs(const Vec& u, const PdeFamily& fam, double h) {
  Vec rhs = Vec::Zero(u.size());
  if (fam.has_linear_convection()) add_linear_convection_rhs(u, fam.c, h, rhs);
  if (fam.has_burgers_convection()) add_burgers_rhs(u, h, rhs);
  add_reaction_rhs(u, fam, rhs);
  return rhs;
}

inline Vec ssp_rk3(const Vec& u, const PdeFamily& fam, double h, double dt) {
  Vec u1 = u + dt * explicit_rhs(u, fam, h);
  Vec u2 = 0.75 * u + 0.25 * (u1 + dt * explicit_rhs(u1, fam, h));
  return (1.0 / 3.0) * u + (2.0 / 3.0) * (u2 + dt * explicit_rhs(u2, fam, h));
}

/// Periodic second-difference Laplacian as a dense matrix.
inline Eigen::MatrixXd periodic_laplacian(int m, double h) {
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(m, m);
  const double ih2 = 1.0 / (h * h);
  for (int i = 0; i < m; ++i) {
    L(i, i) = -2.0 * ih2;
    L(i, wrap(i + 1, m)) = ih2;
    L(i, wrap(i - 1, m)) = ih2;
  }
  return L;
}

struct CrankNicolson {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;  // of (I - a L)
  Eigen::MatrixXd rhs_mat;                  // (I + a L)
  void factor(int m, double h, double coef, double dt_half) {
    Eigen::MatrixXd L = periodic_laplacian(m, h);
    double a = 0.5 * coef * dt_half;
    Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);
    lu.compute(I - a * L);
    rhs_mat = I + a * L;
  }
  Vec step(const Vec& u) const { return lu.solve(rhs_mat * u); }
};

}  // namespace pdedetail

/// Number of internal substeps per macro step so the advective CFL number
/// stays <= 0.9 (and the explicit diffusion number <= 0.4 when diffusion is
/// integrated explicitly, which the default Crank-Nicolson path never does).
inline int required_substeps(const PdeFamily& fam, const GridSpec& grid,
                             double max_speed) {
  double h = grid.h();
  int n = 1;
  double speed = 0.0;
  if (fam.has_linear_convection()) speed = std::abs(fam.c);
  if (fam.has_burgers_convection()) speed = std::max(speed, max_speed);
  if (speed > 0.0) n = std::max(n, int(std::ceil(grid.dt * speed / (0.9 * h))));
  return n * std::max(1, grid.substep_multiplier);
}

/// Reference solution at T = steps * dt.
inline Vec solve_pde(const PdeFamily& fam, const Vec& u0, const GridSpec& grid) {
  grid.validate();
  fam.validate();
  if (int(u0.size()) != grid.m) throw SolverError("solve_pde: u0 length != m");
  if (fam.has_logistic_reaction()) {
    if (u0.minCoeff() <= 0.0 || u0.maxCoeff() >= 1.0)
      throw SolverError("solve_pde: logistic reaction requires u0 in (0, 1)");
  }
  const double h = grid.h();
  const double u0_scale = std::max(u0.cwiseAbs().maxCoeff(), 1e-12);
  const bool diffusive = fam.has_diffusion() && fam.diffusion_coef() > 0.0;
  const bool advective_or_reactive =
      fam.has_linear_convection() || fam.has_burgers_convection() ||
      fam.has_logistic_reaction() || fam.has_neutron_reaction();

  Vec u = u0;
  pdedetail::CrankNicolson cn;
  int cn_substeps = -1;
  for (int step = 0; step < grid.steps; ++step) {
    double max_speed = u.cwiseAbs().maxCoeff();
    int nsub = required_substeps(fam, grid, max_speed);
    double dt_sub = grid.dt / nsub;
    if (diffusive && nsub != cn_substeps) {
      cn.factor(grid.m, h, fam.diffusion_coef(), 0.5 * dt_sub);
      cn_substeps = nsub;
    }
    for (int s = 0; s < nsub; ++s) {
      if (diffusive) u = cn.step(u);
      if (advective_or_reactive) u = pdedetail::ssp_rk3(u, fam, h, dt_sub);
      if (diffusive) u = cn.step(u);
    }
    double amax = u.cwiseAbs().maxCoeff();
    if (!u.allFinite() || amax > 1e3 * u0_scale)
      throw SolverError("solve_pde: instability in family '" + family_name(fam.tag) +
                        "' at macro step " + std::to_string(step) +
                        " (max |u| = " + std::to_string(amax) + ")");
  }
  return u;
}

}  // namespace scno
