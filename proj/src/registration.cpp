#include "xreg/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <cstdlib>

#include "xreg/parallel.hpp"
#include "xreg/rng.hpp"

namespace xreg {
namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
// Eigenvalues ascending; eigenvectors in the columns of V.
void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& eigenvalues, std::vector<double>& V) {
  V.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) V[i * n + i] = 1.0;

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-26) break;

    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double aip = a[i * n + p], aiq = a[i * n + q];
          a[i * n + p] = c * aip - s * aiq;
          a[i * n + q] = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          const double api = a[p * n + i], aqi = a[q * n + i];
          a[p * n + i] = c * api - s * aqi;
          a[q * n + i] = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = V[i * n + p], viq = V[i * n + q];
          V[i * n + p] = c * vip - s * viq;
          V[i * n + q] = s * vip + c * viq;
        }
      }
    }
  }

  eigenvalues.resize(n);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int x, int y) { return a[x * n + x] < a[y * n + y]; });
  std::vector<double> sortedV(V.size());
  for (int j = 0; j < n; ++j) {
    eigenvalues[j] = a[order[j] * n + order[j]];
    for (int i = 0; i < n; ++i) sortedV[i * n + j] = V[i * n + order[j]];
  }
  V.swap(sortedV);
}

// Gaussian elimination with partial pivoting; solves A x = b in place.
bool gauss_solve(std::vector<double> a, std::vector<double> b, int n, std::vector<double>& x) {
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
    if (std::abs(a[pivot * n + col]) < 1e-14) return false;
    if (pivot != col) {
      for (int c = 0; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
      std::swap(b[col], b[pivot]);
    }
    for (int r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / a[col * n + col];
      for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  x.assign(n, 0.0);
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < n; ++c) s -= a[r * n + c] * x[c];
    x[r] = s / a[r * n + r];
  }
  return true;
}

// Least squares via normal equations (m >= n, both small).
bool llsq(const std::vector<double>& a, const std::vector<double>& b, int m, int n, std::vector<double>& x) {
  std::vector<double> ata(static_cast<std::size_t>(n) * n, 0.0), atb(n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int r = 0; r < m; ++r) s += a[r * n + i] * a[r * n + j];
      ata[i * n + j] = s;
    }
    double s = 0.0;
    for (int r = 0; r < m; ++r) s += a[r * n + i] * b[r];
    atb[i] = s;
  }
  return gauss_solve(std::move(ata), std::move(atb), n, x);
}

RigidTransform quaternion_to_rotation(double w, double x, double y, double z) {
  RigidTransform t;
  t.rotation = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
                2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
                2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
  return t;
}

// Horn's closed-form alignment: R, t minimizing sum ||R a_i + t - b_i||^2.
RigidTransform horn_alignment(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  const std::size_t n = a.size();
  Vec3 ca{0, 0, 0}, cb{0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    ca = ca + a[i];
    cb = cb + b[i];
  }
  ca = ca * (1.0 / n);
  cb = cb * (1.0 / n);

  double H[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 u = a[i] - ca, v = b[i] - cb;
    H[0] += u.x * v.x;
    H[1] += u.x * v.y;
    H[2] += u.x * v.z;
    H[3] += u.y * v.x;
    H[4] += u.y * v.y;
    H[5] += u.y * v.z;
    H[6] += u.z * v.x;
    H[7] += u.z * v.y;
    H[8] += u.z * v.z;
  }

  const double sxx = H[0], sxy = H[1], sxz = H[2];
  const double syx = H[3], syy = H[4], syz = H[5];
  const double szx = H[6], szy = H[7], szz = H[8];
  std::vector<double> N = {
      sxx + syy + szz, syz - szy,       szx - sxz,        sxy - syx,
      syz - szy,       sxx - syy - szz, sxy + syx,        szx + sxz,
      szx - sxz,       sxy + syx,       -sxx + syy - szz, syz + szy,
      sxy - syx,       szx + sxz,       syz + szy,        -sxx - syy + szz,
  };
  std::vector<double> evals, evecs;
  jacobi_eigen(std::move(N), 4, evals, evecs);
  // Largest eigenvalue = last column.
  const double w = evecs[0 * 4 + 3], x = evecs[1 * 4 + 3], y = evecs[2 * 4 + 3], z = evecs[3 * 4 + 3];
  RigidTransform t = quaternion_to_rotation(w, x, y, z);
  const Vec3 rc = apply_transform(RigidTransform{t.rotation, {0, 0, 0}}, ca);
  t.translation = cb - rc;
  return t;
}

RigidTransform so3_exp_times(const Vec3& w, const RigidTransform& t) {
  const double angle = w.norm();
  RigidTransform rot;
  if (angle < 1e-15) {
    rot.rotation = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  } else {
    const Vec3 axis = w * (1.0 / angle);
    const double c = std::cos(angle), s = std::sin(angle), ic = 1.0 - c;
    rot.rotation = {c + axis.x * axis.x * ic,          axis.x * axis.y * ic - axis.z * s, axis.x * axis.z * ic + axis.y * s,
                    axis.y * axis.x * ic + axis.z * s, c + axis.y * axis.y * ic,          axis.y * axis.z * ic - axis.x * s,
                    axis.z * axis.x * ic - axis.y * s, axis.z * axis.y * ic + axis.x * s, c + axis.z * axis.z * ic};
  }
  return compose(rot, t);
}

// Gauss-Newton reprojection polish over a fixed correspondence set. Left
// multiplicative so(3) updates; stops on tiny steps. Residuals are weighted
// by depth: correspondence noise is constant in 3D, so pixel residuals scale
// as 1/z and depth weighting restores a homoscedastic least squares.
RigidTransform refine_pose(const std::vector<Correspondence2D3D>& corrs, const CameraIntrinsics& k,
                           RigidTransform pose, int max_iters = 100) {
  for (int iter = 0; iter < max_iters; ++iter) {
    double jtj[36] = {0};
    double jtr[6] = {0};
    bool usable = true;
    for (const auto& c : corrs) {
      const Vec3 q = apply_transform(pose, c.point);
      if (!(q.z > 1e-9)) {
        usable = false;
        break;
      }
      const double w2 = q.z * q.z;
      const double iz = 1.0 / q.z;
      const double du_dq[3] = {k.fx * iz, 0.0, -k.fx * q.x * iz * iz};
      const double dv_dq[3] = {0.0, k.fy * iz, -k.fy * q.y * iz * iz};
      // dq/d(omega) = -[q]x, dq/d(dt) = I
      const double dq_dw[9] = {0, q.z, -q.y, -q.z, 0, q.x, q.y, -q.x, 0};
      double ju[6], jv[6];
      for (int a = 0; a < 3; ++a) {
        double su = 0.0, sv = 0.0;
        for (int b = 0; b < 3; ++b) {
          su += du_dq[b] * dq_dw[b * 3 + a];
          sv += dv_dq[b] * dq_dw[b * 3 + a];
        }
        ju[a] = su;
        jv[a] = sv;
        ju[3 + a] = du_dq[a];
        jv[3 + a] = dv_dq[a];
      }
      const Vec2 proj{k.fx * q.x * iz + k.cx, k.fy * q.y * iz + k.cy};
      const double ru = c.pixel.x - proj.x, rv = c.pixel.y - proj.y;
      for (int a = 0; a < 6; ++a) {
        jtr[a] += w2 * (ju[a] * ru + jv[a] * rv);
        for (int b = 0; b < 6; ++b) jtj[a * 6 + b] += w2 * (ju[a] * ju[b] + jv[a] * jv[b]);
      }
    }
    if (!usable) { if (getenv("XREG_DEBUG_GN")) fprintf(stderr, "GN iter %d: unusable\n", iter); break; }
    std::vector<double> delta;
    if (!gauss_solve(std::vector<double>(jtj, jtj + 36), std::vector<double>(jtr, jtr + 6), 6, delta)) { if (getenv("XREG_DEBUG_GN")) fprintf(stderr, "GN iter %d: singular\n", iter); break; }
    pose = so3_exp_times({delta[0], delta[1], delta[2]}, pose);
    pose.translation = pose.translation + Vec3{delta[3], delta[4], delta[5]};
    double step = 0.0;
    for (double d : delta) step += d * d;
    if (getenv("XREG_DEBUG_GN") && (iter < 3 || iter % 10 == 0)) fprintf(stderr, "GN iter %d step %.3e\n", iter, std::sqrt(step));
    if (step < 1e-24) break;
  }
  return pose;
}

struct EpnpSolver {
  const std::vector<Correspondence2D3D>& corrs;
  const CameraIntrinsics& k;
  Vec3 control[4];     // world control points
  std::vector<double> alphas;  // n x 4
  std::vector<double> kernel;  // 12 x 4 (columns = 4 smallest eigenvectors of MtM)
  double rho[6];
  double l6x10[6 * 10];

  explicit EpnpSolver(const std::vector<Correspondence2D3D>& c, const CameraIntrinsics& intr)
      : corrs(c), k(intr) {}

  void choose_control_points() {
    const std::size_t n = corrs.size();
    Vec3 centroid{0, 0, 0};
    for (const auto& c : corrs) centroid = centroid + c.point;
    centroid = centroid * (1.0 / n);

    std::vector<double> cov(9, 0.0);
    for (const auto& c : corrs) {
      const Vec3 d = c.point - centroid;
      cov[0] += d.x * d.x;
      cov[1] += d.x * d.y;
      cov[2] += d.x * d.z;
      cov[4] += d.y * d.y;
      cov[5] += d.y * d.z;
      cov[8] += d.z * d.z;
    }
    cov[3] = cov[1];
    cov[6] = cov[2];
    cov[7] = cov[5];
    for (double& v : cov) v /= static_cast<double>(n);

    std::vector<double> evals, evecs;
    jacobi_eigen(std::move(cov), 3, evals, evecs);
    // Ascending eigenvalues; coplanar data shows up as a vanishing smallest
    // eigenvalue relative to the largest.
    if (!(evals[2] > 0.0) || evals[0] < 1e-10 * evals[2])
      throw DegenerateConfiguration("epnp: points are (near-)coplanar or collinear");

    control[0] = centroid;
    for (int j = 0; j < 3; ++j) {
      const double scale = std::sqrt(evals[j]);
      control[j + 1] =
          centroid + Vec3{evecs[0 * 3 + j], evecs[1 * 3 + j], evecs[2 * 3 + j]} * scale;
    }
  }

  void compute_alphas() {
    const std::size_t n = corrs.size();
    std::vector<double> base(9);
    for (int j = 0; j < 3; ++j) {
      const Vec3 d = control[j + 1] - control[0];
      base[0 * 3 + j] = d.x;
      base[1 * 3 + j] = d.y;
      base[2 * 3 + j] = d.z;
    }
    alphas.assign(n * 4, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 d = corrs[i].point - control[0];
      std::vector<double> beta;
      if (!gauss_solve(base, {d.x, d.y, d.z}, 3, beta))
        throw DegenerateConfiguration("epnp: control basis is singular");
      alphas[i * 4 + 0] = 1.0 - beta[0] - beta[1] - beta[2];
      alphas[i * 4 + 1] = beta[0];
      alphas[i * 4 + 2] = beta[1];
      alphas[i * 4 + 3] = beta[2];
    }
  }

  void compute_kernel() {
    const std::size_t n = corrs.size();
    // M is 2n x 12; accumulate MtM directly.
    std::vector<double> mtm(144, 0.0);
    double row[12];
    for (std::size_t i = 0; i < n; ++i) {
      const double u = corrs[i].pixel.x, v = corrs[i].pixel.y;
      for (int pass = 0; pass < 2; ++pass) {
        for (int j = 0; j < 4; ++j) {
          const double a = alphas[i * 4 + j];
          if (pass == 0) {
            row[3 * j + 0] = a * k.fx;
            row[3 * j + 1] = 0.0;
            row[3 * j + 2] = a * (k.cx - u);
          } else {
            row[3 * j + 0] = 0.0;
            row[3 * j + 1] = a * k.fy;
            row[3 * j + 2] = a * (k.cy - v);
          }
        }
        for (int r = 0; r < 12; ++r)
          for (int c = r; c < 12; ++c) mtm[r * 12 + c] += row[r] * row[c];
      }
    }
    for (int r = 0; r < 12; ++r)
      for (int c = 0; c < r; ++c) mtm[r * 12 + c] = mtm[c * 12 + r];

    std::vector<double> evals, evecs;
    jacobi_eigen(std::move(mtm), 12, evals, evecs);
    kernel.assign(48, 0.0);
    for (int r = 0; r < 12; ++r)
      for (int c = 0; c < 4; ++c) kernel[r * 4 + c] = evecs[r * 12 + c];
  }

  Vec3 kernel_control(int column, int ctrl) const {
    return {kernel[(3 * ctrl + 0) * 4 + column], kernel[(3 * ctrl + 1) * 4 + column],
            kernel[(3 * ctrl + 2) * 4 + column]};
  }

  void compute_rho_and_l() {
    static const int pairs[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
    for (int p = 0; p < 6; ++p)
      rho[p] = (control[pairs[p][0]] - control[pairs[p][1]]).squared_norm();

    for (int p = 0; p < 6; ++p) {
      Vec3 dv[4];
      for (int c = 0; c < 4; ++c)
        dv[c] = kernel_control(c, pairs[p][0]) - kernel_control(c, pairs[p][1]);
      double* L = l6x10 + p * 10;
      L[0] = dv[0].dot(dv[0]);
      L[1] = 2.0 * dv[0].dot(dv[1]);
      L[2] = dv[1].dot(dv[1]);
      L[3] = 2.0 * dv[0].dot(dv[2]);
      L[4] = 2.0 * dv[1].dot(dv[2]);
      L[5] = dv[2].dot(dv[2]);
      L[6] = 2.0 * dv[0].dot(dv[3]);
      L[7] = 2.0 * dv[1].dot(dv[3]);
      L[8] = 2.0 * dv[2].dot(dv[3]);
      L[9] = dv[3].dot(dv[3]);
    }
  }

  // Approximations for the beta vector, mirroring the standard EPnP cases.
  void betas_approx_1(double betas[4]) const {
    std::vector<double> a(6 * 4), x;
    for (int p = 0; p < 6; ++p) {
      a[p * 4 + 0] = l6x10[p * 10 + 0];
      a[p * 4 + 1] = l6x10[p * 10 + 1];
      a[p * 4 + 2] = l6x10[p * 10 + 3];
      a[p * 4 + 3] = l6x10[p * 10 + 6];
    }
    if (!llsq(a, std::vector<double>(rho, rho + 6), 6, 4, x)) {
      betas[0] = betas[1] = betas[2] = betas[3] = 0;
      return;
    }
    betas[0] = std::sqrt(std::abs(x[0]));
    const double s = x[0] < 0 ? -1.0 : 1.0;
    betas[1] = betas[0] > 1e-12 ? s * x[1] / betas[0] : 0.0;
    betas[2] = betas[0] > 1e-12 ? s * x[2] / betas[0] : 0.0;
    betas[3] = betas[0] > 1e-12 ? s * x[3] / betas[0] : 0.0;
  }

  void betas_approx_2(double betas[4]) const {
    std::vector<double> a(6 * 3), x;
    for (int p = 0; p < 6; ++p) {
      a[p * 3 + 0] = l6x10[p * 10 + 0];
      a[p * 3 + 1] = l6x10[p * 10 + 1];
      a[p * 3 + 2] = l6x10[p * 10 + 2];
    }
    if (!llsq(a, std::vector<double>(rho, rho + 6), 6, 3, x)) {
      betas[0] = betas[1] = betas[2] = betas[3] = 0;
      return;
    }
    if (x[0] < 0) {
      betas[0] = std::sqrt(-x[0]);
      betas[1] = x[2] < 0 ? std::sqrt(-x[2]) : 0.0;
    } else {
      betas[0] = std::sqrt(x[0]);
      betas[1] = x[2] > 0 ? std::sqrt(x[2]) : 0.0;
    }
    if (x[1] < 0) betas[0] = -betas[0];
    betas[2] = betas[3] = 0.0;
  }

  void betas_approx_3(double betas[4]) const {
    std::vector<double> a(6 * 5), x;
    for (int p = 0; p < 6; ++p) {
      a[p * 5 + 0] = l6x10[p * 10 + 0];
      a[p * 5 + 1] = l6x10[p * 10 + 1];
      a[p * 5 + 2] = l6x10[p * 10 + 2];
      a[p * 5 + 3] = l6x10[p * 10 + 3];
      a[p * 5 + 4] = l6x10[p * 10 + 4];
    }
    if (!llsq(a, std::vector<double>(rho, rho + 6), 6, 5, x)) {
      betas[0] = betas[1] = betas[2] = betas[3] = 0;
      return;
    }
    if (x[0] < 0) {
      betas[0] = std::sqrt(-x[0]);
      betas[1] = x[2] < 0 ? std::sqrt(-x[2]) : 0.0;
    } else {
      betas[0] = std::sqrt(x[0]);
      betas[1] = x[2] > 0 ? std::sqrt(x[2]) : 0.0;
    }
    if (x[1] < 0) betas[0] = -betas[0];
    betas[2] = betas[0] > 1e-12 ? x[3] / betas[0] : 0.0;
    betas[3] = 0.0;
  }

  void gauss_newton(double betas[4]) const {
    for (int iter = 0; iter < 5; ++iter) {
      std::vector<double> jac(6 * 4), residual(6);
      for (int p = 0; p < 6; ++p) {
        const double* L = l6x10 + p * 10;
        const double b0 = betas[0], b1 = betas[1], b2 = betas[2], b3 = betas[3];
        residual[p] = rho[p] - (L[0] * b0 * b0 + L[1] * b0 * b1 + L[2] * b1 * b1 + L[3] * b0 * b2 +
                                L[4] * b1 * b2 + L[5] * b2 * b2 + L[6] * b0 * b3 + L[7] * b1 * b3 +
                                L[8] * b2 * b3 + L[9] * b3 * b3);
        jac[p * 4 + 0] = 2 * L[0] * b0 + L[1] * b1 + L[3] * b2 + L[6] * b3;
        jac[p * 4 + 1] = L[1] * b0 + 2 * L[2] * b1 + L[4] * b2 + L[7] * b3;
        jac[p * 4 + 2] = L[3] * b0 + L[4] * b1 + 2 * L[5] * b2 + L[8] * b3;
        jac[p * 4 + 3] = L[6] * b0 + L[7] * b1 + L[8] * b2 + 2 * L[9] * b3;
      }
      std::vector<double> delta;
      if (!llsq(jac, residual, 6, 4, delta)) return;
      for (int i = 0; i < 4; ++i) betas[i] += delta[i];
    }
  }

  RigidTransform pose_from_betas(const double betas[4]) const {
    Vec3 cc[4];
    for (int j = 0; j < 4; ++j) {
      cc[j] = {0, 0, 0};
      for (int c = 0; c < 4; ++c) cc[j] = cc[j] + kernel_control(c, j) * betas[c];
    }
    const std::size_t n = corrs.size();
    std::vector<Vec3> cam(n);
    double zsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      cam[i] = {0, 0, 0};
      for (int j = 0; j < 4; ++j) cam[i] = cam[i] + cc[j] * alphas[i * 4 + j];
      zsum += cam[i].z;
    }
    if (zsum < 0.0)
      for (Vec3& p : cam) p = p * -1.0;

    std::vector<Vec3> world(n);
    for (std::size_t i = 0; i < n; ++i) world[i] = corrs[i].point;
    return horn_alignment(world, cam);
  }

  double total_reprojection_sq(const RigidTransform& t) const {
    double s = 0.0;
    for (const auto& c : corrs) {
      const double e = reprojection_error(c, t, k);
      if (!std::isfinite(e)) return std::numeric_limits<double>::infinity();
      s += e * e;
    }
    return s;
  }

  RigidTransform solve() {
    choose_control_points();
    compute_alphas();
    compute_kernel();
    compute_rho_and_l();

    RigidTransform best;
    double best_err = std::numeric_limits<double>::infinity();
    for (int variant = 0; variant < 3; ++variant) {
      double betas[4];
      if (variant == 0)
        betas_approx_1(betas);
      else if (variant == 1)
        betas_approx_2(betas);
      else
        betas_approx_3(betas);
      gauss_newton(betas);
      const RigidTransform t = pose_from_betas(betas);
      const double err = total_reprojection_sq(t);
      if (err < best_err) {
        best_err = err;
        best = t;
      }
    }
    if (!std::isfinite(best_err)) throw DegenerateConfiguration("epnp: no candidate pose in front of the camera");
    return best;
  }
};

}  // namespace

double reprojection_error(const Correspondence2D3D& corr, const RigidTransform& t, const CameraIntrinsics& k) {
  const Vec3 cam = apply_transform(t, corr.point);
  if (!(cam.z > 0.0)) return std::numeric_limits<double>::infinity();
  return (project(cam, k) - corr.pixel).norm();
}

RigidTransform epnp(const std::vector<Correspondence2D3D>& corrs, const CameraIntrinsics& k) {
  if (corrs.size() < 4) throw TooFewPoints("epnp: need at least 4 correspondences");
  EpnpSolver solver(corrs, k);
  return solver.solve();
}

RegistrationResult pnp_ransac(const std::vector<Correspondence2D3D>& corrs, const CameraIntrinsics& k,
                              const RansacConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(corrs.size());
  if (n < cfg.sample_size) throw TooFewPoints("pnp_ransac: fewer correspondences than sample size");

  struct Hypothesis {
    int inliers = -1;
    double mean_err = std::numeric_limits<double>::infinity();
    RigidTransform pose;
    bool valid = false;
  };
  std::vector<Hypothesis> hyps(cfg.iterations);

  auto score = [&](const RigidTransform& pose, std::vector<std::uint8_t>* mask, double* mean_err) {
    int count = 0;
    double err_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double e = reprojection_error(corrs[i], pose, k);
      const bool in = e <= cfg.inlier_tol;
      if (mask != nullptr) (*mask)[i] = in ? 1 : 0;
      if (in) {
        ++count;
        err_sum += e;
      }
    }
    if (mean_err != nullptr) *mean_err = count > 0 ? err_sum / count : std::numeric_limits<double>::infinity();
    return count;
  };

  parallel_for(cfg.iterations, cfg.threads, [&](int iter) {
    // Per-iteration stream keeps results schedule-independent.
    Rng rng = Rng::derive(cfg.seed, static_cast<std::uint64_t>(iter));
    std::vector<int> sample;
    sample.reserve(cfg.sample_size);
    while (static_cast<int>(sample.size()) < cfg.sample_size) {
      const int cand = rng.below_int(n);
      if (std::find(sample.begin(), sample.end(), cand) == sample.end()) sample.push_back(cand);
    }
    std::vector<Correspondence2D3D> subset;
    subset.reserve(sample.size());
    for (int idx : sample) subset.push_back(corrs[idx]);
    try {
      Hypothesis h;
      h.pose = epnp(subset, k);
      h.inliers = score(h.pose, nullptr, &h.mean_err);
      h.valid = true;
      hyps[iter] = h;
    } catch (const Error&) {
      // Degenerate sample; leave slot invalid.
    }
  });

  int best = -1;
  for (int i = 0; i < cfg.iterations; ++i) {
    if (!hyps[i].valid) continue;
    if (best < 0 || hyps[i].inliers > hyps[best].inliers ||
        (hyps[i].inliers == hyps[best].inliers && hyps[i].mean_err < hyps[best].mean_err))
      best = i;
  }
  if (best < 0 || hyps[best].inliers < cfg.sample_size)
    throw RegistrationFailed("pnp_ransac: no hypothesis reached the minimal consensus");

  RegistrationResult result;
  result.transform = hyps[best].pose;
  result.inlier_mask.assign(n, 0);
  result.inlier_count = score(result.transform, &result.inlier_mask, &result.mean_inlier_error);

  // Refit on the consensus set (EPnP, then a reprojection polish); each stage
  // is kept only if it does not lose inliers. The polish optimizes a
  // depth-weighted objective, so it may raise the plain mean pixel error;
  // only the EPnP refit is additionally gated on it.
  auto consider = [&](const RigidTransform& candidate, bool require_mean) {
    std::vector<std::uint8_t> mask(n, 0);
    double mean_err = 0.0;
    const int count = score(candidate, &mask, &mean_err);
    const bool better = count > result.inlier_count ||
                        (count == result.inlier_count &&
                         (!require_mean || mean_err <= result.mean_inlier_error));
    if (better) {
      result.transform = candidate;
      result.inlier_mask = std::move(mask);
      result.inlier_count = count;
      result.mean_inlier_error = mean_err;
    }
  };
  std::vector<Correspondence2D3D> consensus;
  for (int i = 0; i < n; ++i)
    if (result.inlier_mask[i]) consensus.push_back(corrs[i]);
  if (static_cast<int>(consensus.size()) >= 4) {
    try {
      consider(epnp(consensus, k), true);
    } catch (const Error&) {
      // Keep the hypothesis pose.
    }
    // EPnP minimizes an algebraic objective; a short Gauss-Newton pass on the
    // reprojection error keeps a tolerance-grazing outlier from dragging the
    // pose (the reference PnP-RANSAC implementation refines the same way).
    // Two rounds, re-collecting the consensus in between.
    for (int round = 0; round < 2; ++round) {
      consensus.clear();
      for (int i = 0; i < n; ++i)
        if (result.inlier_mask[i]) consensus.push_back(corrs[i]);
      consider(refine_pose(consensus, k, result.transform), false);
    }
  }
  return result;
}

double rotation_geodesic_error(const RigidTransform& a, const RigidTransform& b) {
  // trace(a^T b)
  double tr = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) tr += a.rotation[i * 3 + j] * b.rotation[i * 3 + j];
  const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

}  // namespace xreg
