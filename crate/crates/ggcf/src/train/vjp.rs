//! Vector-Jacobian products for the manifold primitives.
//!
//! Every function here differentiates the *literal code path* of the matching
//! kernel in [`crate::lorentz`], including branch conventions: the arcosh clamp
//! contributes zero gradient in the clamped region, saturated trig arguments
//! (beyond [`ARG_CAP`]) contribute zero gradient to the radius, and zero-vector
//! branches use the analytic limits of the generic formulas. All functions
//! accumulate (`+=`) into their gradient outputs.
//!
//! Throughout, `J = diag(-1, 1, ..., 1)` is the Minkowski metric matrix, so
//! `(J u)_0 = -u_0` and `(J u)_i = u_i`.

use crate::lorentz::{k_dot, k_linner, k_norm, ARG_CAP};

/// sinh(r)/r, with the removable singularity at r = 0 filled in.
#[inline]
pub(crate) fn sinhc(r: f64) -> f64 {
    if r < 1e-4 {
        let r2 = r * r;
        1.0 + r2 / 6.0 + r2 * r2 / 120.0
    } else {
        r.sinh() / r
    }
}

/// (r cosh r - sinh r) / r^3 = d(sinhc)/dr / r; series below 1e-2 where the
/// direct form cancels catastrophically.
#[inline]
fn coef_c(r: f64) -> f64 {
    if r < 1e-2 {
        let r2 = r * r;
        1.0 / 3.0 + r2 / 30.0 + r2 * r2 / 840.0
    } else {
        (r * r.cosh() - r.sinh()) / (r * r * r)
    }
}

/// VJP of `k_exp0`: v (d) -> out (d+1) = (cosh r, sinhc(r) v).
pub(crate) fn vjp_exp0(v: &[f64], g: &[f64], grad_v: &mut [f64]) {
    let r = k_norm(v);
    let g0 = g[0];
    let gs = &g[1..];
    if r >= ARG_CAP {
        // Saturated: out = (cosh C, sinh(C) v / r); the radius is frozen.
        let sh = ARG_CAP.sinh();
        let gs_dot_v = k_dot(gs, v);
        for j in 0..v.len() {
            grad_v[j] += sh * (gs[j] / r - gs_dot_v * v[j] / (r * r * r));
        }
        return;
    }
    let sc = sinhc(r);
    let c = coef_c(r);
    let gs_dot_v = k_dot(gs, v);
    for j in 0..v.len() {
        grad_v[j] += g0 * sc * v[j] + sc * gs[j] + c * gs_dot_v * v[j];
    }
}

/// VJP of `k_log0`: x (d+1) -> out (d) = asinh(s)/s * x_s with s = |x_s|.
/// The asinh form has no x_0 dependence, so grad_x[0] is untouched.
pub(crate) fn vjp_log0(x: &[f64], g: &[f64], grad_x: &mut [f64]) {
    let xs = &x[1..];
    let s = k_norm(xs);
    if s < 1e-300 {
        // Zero-vector branch: the map has the identity as its limit Jacobian.
        for j in 0..g.len() {
            grad_x[j + 1] += g[j];
        }
        return;
    }
    let f = s.asinh() / s;
    // G(s) = f'(s)/s, series below 1e-3 against cancellation.
    let big_g = if s < 1e-3 {
        let s2 = s * s;
        -1.0 / 3.0 + 0.3 * s2
    } else {
        (1.0 / (1.0 + s * s).sqrt() - f) / (s * s)
    };
    let g_dot_xs = k_dot(g, xs);
    for j in 0..g.len() {
        grad_x[j + 1] += f * g[j] + big_g * g_dot_xs * xs[j];
    }
}

/// VJP of `k_project` run in place: input x (d+1, with x_0 ignored and recomputed),
/// output `out` (d+1). Takes the projected row itself since its spatial part equals
/// the input's. The input's time coordinate receives no gradient.
pub(crate) fn vjp_project(out: &[f64], g: &[f64], grad_x: &mut [f64]) {
    let g0 = g[0];
    let out0 = out[0];
    for j in 1..out.len() {
        grad_x[j] += g[j] + g0 * out[j] / out0;
    }
}

/// VJP of `k_dist` in its stable difference form. In the clamped region
/// (delta <= 0) the subgradient is zero.
pub(crate) fn vjp_dist(x: &[f64], y: &[f64], g: f64, grad_x: &mut [f64], grad_y: &mut [f64]) {
    let delta = crate::lorentz::k_dist_delta(x, y);
    if delta <= 0.0 {
        return;
    }
    let c = g / (delta * (delta + 2.0)).sqrt();
    let dt = x[0] - y[0];
    grad_x[0] += -c * dt;
    grad_y[0] += c * dt;
    for j in 1..x.len() {
        let d = x[j] - y[j];
        grad_x[j] += c * d;
        grad_y[j] += -c * d;
    }
}

/// VJP of `k_transport_from_origin`: (x: d+1, v: d) -> out (d+1) with
/// out_0 = x_s . v, out_s = v + (out_0 / (1 + x_0)) x_s.
pub(crate) fn vjp_transport_from_origin(
    x: &[f64],
    v: &[f64],
    g: &[f64],
    grad_x: &mut [f64],
    grad_v: &mut [f64],
) {
    let x0 = x[0];
    let xs = &x[1..];
    let g0 = g[0];
    let gs = &g[1..];
    let denom = 1.0 + x0;
    let k = k_dot(xs, v);
    let b = k / denom;
    let gs_dot_xs = k_dot(gs, xs);
    for j in 0..v.len() {
        grad_v[j] += g0 * xs[j] + gs[j] + gs_dot_xs * xs[j] / denom;
        grad_x[j + 1] += g0 * v[j] + gs_dot_xs * v[j] / denom + b * gs[j];
    }
    grad_x[0] += -k * gs_dot_xs / (denom * denom);
}

/// VJP of `k_exp_at`: (x: d+1, u: d+1) -> out = cosh(rc) x + sinh(rc)/r u,
/// r = sqrt(|<u,u>_L|). Handles the spacelike/timelike sign of `u` and the
/// saturation cap the same way the forward does.
pub(crate) fn vjp_exp_at(
    x: &[f64],
    u: &[f64],
    g: &[f64],
    grad_x: &mut [f64],
    grad_u: &mut [f64],
) {
    let qq = k_linner(u, u);
    let r = qq.abs().sqrt();
    let sigma = if qq >= 0.0 { 1.0 } else { -1.0 };
    let g_dot_x = k_dot(g, x);
    let g_dot_u = k_dot(g, u);
    if r >= ARG_CAP {
        let ch = ARG_CAP.cosh();
        let sh = ARG_CAP.sinh();
        for j in 0..x.len() {
            grad_x[j] += ch * g[j];
        }
        // out_u-part = sinh(C) u / r with r = sqrt(|<u,u>|):
        // grad_u = sinh(C) [g / r - sigma (g.u) J u / r^3].
        let r3 = r * r * r;
        for j in 0..u.len() {
            let ju = if j == 0 { -u[j] } else { u[j] };
            grad_u[j] += sh * (g[j] / r - sigma * g_dot_u * ju / r3);
        }
        return;
    }
    let ch = r.cosh();
    let sc = sinhc(r);
    let c = coef_c(r);
    for j in 0..x.len() {
        grad_x[j] += ch * g[j];
    }
    let coeff = sigma * (g_dot_x * sc + g_dot_u * c);
    for j in 0..u.len() {
        let ju = if j == 0 { -u[j] } else { u[j] };
        grad_u[j] += sc * g[j] + coeff * ju;
    }
}

/// VJP of centroid normalization followed by projection:
/// z -> w = z / sqrt(-<z,z>_L) -> out = project(w).
/// `out` is the final projected row.
pub(crate) fn vjp_normalize_project(z: &[f64], out: &[f64], g: &[f64], grad_z: &mut [f64]) {
    let a = z.len();
    // Project first: w_0 is discarded by project, so its adjoint is zero.
    let mut gw = vec![0.0; a];
    vjp_project(out, g, &mut gw);
    // Then w = z / n with n = sqrt(-<z,z>_L):
    // grad_z = gw / n + (gw . z) J z / n^3.
    let q = k_linner(z, z);
    let n = (-q).sqrt();
    let n3 = n * n * n;
    let gw_dot_z = k_dot(&gw, z);
    for j in 0..a {
        let jz = if j == 0 { -z[j] } else { z[j] };
        grad_z[j] += gw[j] / n + gw_dot_z * jz / n3;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorentz::{
        k_dist, k_exp0, k_exp_at, k_log0, k_project, k_transport_from_origin,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-6;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    /// Central finite difference of a scalar function along one coordinate.
    fn fd(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], j: usize) -> f64 {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += H;
        xm[j] -= H;
        (f(&xp) - f(&xm)) / (2.0 * H)
    }

    fn rand_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-scale..scale)).collect()
    }

    fn rand_point(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
        let v = rand_vec(rng, d, scale);
        let mut out = vec![0.0; d + 1];
        k_exp0(&v, &mut out);
        out
    }

    #[test]
    fn exp0_vjp_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for case in 0..50 {
            let d = rng.random_range(2usize..=5);
            // Include near-zero radii to exercise the series region.
            let scale = if case % 5 == 0 { 1e-5 } else { 1.5 };
            let v = rand_vec(&mut rng, d, scale);
            let c = rand_vec(&mut rng, d + 1, 1.0);
            let phi = |v: &[f64]| {
                let mut out = vec![0.0; v.len() + 1];
                k_exp0(v, &mut out);
                k_dot(&out, &c)
            };
            let mut grad = vec![0.0; d];
            vjp_exp0(&v, &c, &mut grad);
            for j in 0..d {
                let want = fd(phi, &v, j);
                assert!(
                    rel_err(grad[j], want) < 1e-6,
                    "exp0 grad[{j}] = {} vs fd {want}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn exp0_vjp_saturated_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 3;
        let mut v = rand_vec(&mut rng, d, 1.0);
        let n = k_norm(&v);
        for x in v.iter_mut() {
            *x *= 60.0 / n;
        }
        let c = rand_vec(&mut rng, d + 1, 1e-20);
        let phi = |v: &[f64]| {
            let mut out = vec![0.0; v.len() + 1];
            k_exp0(v, &mut out);
            k_dot(&out, &c)
        };
        let mut grad = vec![0.0; d];
        vjp_exp0(&v, &c, &mut grad);
        for j in 0..d {
            let want = fd(phi, &v, j);
            assert!(
                (grad[j] - want).abs() < 1e-3 * want.abs().max(1.0),
                "saturated exp0 grad[{j}] = {} vs fd {want}",
                grad[j]
            );
        }
    }

    #[test]
    fn log0_vjp_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..50 {
            let d = rng.random_range(2usize..=5);
            let scale = if case % 5 == 0 { 1e-4 } else { 1.5 };
            let x = rand_point(&mut rng, d, scale);
            let c = rand_vec(&mut rng, d, 1.0);
            let phi = |x: &[f64]| {
                let mut out = vec![0.0; x.len() - 1];
                k_log0(x, &mut out);
                k_dot(&out, &c)
            };
            let mut grad = vec![0.0; d + 1];
            vjp_log0(&x, &c, &mut grad);
            for j in 0..=d {
                let want = fd(phi, &x, j);
                assert!(
                    rel_err(grad[j], want) < 1e-6,
                    "log0 grad[{j}] = {} vs fd {want} (case {case})",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn log0_vjp_zero_branch_is_identity() {
        let x = [1.0, 0.0, 0.0, 0.0];
        let c = [0.3, -0.7, 1.1];
        let mut grad = vec![0.0; 4];
        vjp_log0(&x, &c, &mut grad);
        assert_eq!(&grad[1..], &c[..]);
        assert_eq!(grad[0], 0.0);
    }

    #[test]
    fn project_vjp_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let d = rng.random_range(2usize..=5);
            let x = rand_vec(&mut rng, d + 1, 2.0);
            let c = rand_vec(&mut rng, d + 1, 1.0);
            let phi = |x: &[f64]| {
                let mut out = x.to_vec();
                k_project(&mut out);
                k_dot(&out, &c)
            };
            let mut out = x.clone();
            k_project(&mut out);
            let mut grad = vec![0.0; d + 1];
            vjp_project(&out, &c, &mut grad);
            for j in 0..=d {
                let want = fd(phi, &x, j);
                assert!(
                    rel_err(grad[j], want) < 1e-6,
                    "project grad[{j}] = {} vs fd {want}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn dist_vjp_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let d = rng.random_range(2usize..=5);
            let x = rand_point(&mut rng, d, 1.5);
            let y = rand_point(&mut rng, d, 1.5);
            let g = rng.random_range(0.5..2.0);
            let mut gx = vec![0.0; d + 1];
            let mut gy = vec![0.0; d + 1];
            vjp_dist(&x, &y, g, &mut gx, &mut gy);
            for j in 0..=d {
                let want_x = g * fd(|x: &[f64]| k_dist(x, &y), &x, j);
                let want_y = g * fd(|y: &[f64]| k_dist(&x, y), &y, j);
                assert!(
                    rel_err(gx[j], want_x) < 1e-5,
                    "dist grad_x[{j}] = {} vs fd {want_x}",
                    gx[j]
                );
                assert!(
                    rel_err(gy[j], want_y) < 1e-5,
                    "dist grad_y[{j}] = {} vs fd {want_y}",
                    gy[j]
                );
            }
        }
    }

    #[test]
    fn dist_vjp_clamp_region_is_zero() {
        let x = [1.0, 0.0, 0.0];
        let mut gx = vec![0.0; 3];
        let mut gy = vec![0.0; 3];
        vjp_dist(&x, &x, 1.0, &mut gx, &mut gy);
        assert!(gx.iter().all(|&v| v == 0.0));
        assert!(gy.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transport_vjp_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let d = rng.random_range(2usize..=5);
            let x = rand_point(&mut rng, d, 1.5);
            let v = rand_vec(&mut rng, d, 1.5);
            let c = rand_vec(&mut rng, d + 1, 1.0);
            let phi_x = |x: &[f64]| {
                let mut out = vec![0.0; x.len()];
                k_transport_from_origin(x, &v, &mut out);
                k_dot(&out, &c)
            };
            let phi_v = |v: &[f64]| {
                let mut out = vec![0.0; v.len() + 1];
                k_transport_from_origin(&x, v, &mut out);
                k_dot(&out, &c)
            };
            let mut gx = vec![0.0; d + 1];
            let mut gv = vec![0.0; d];
            vjp_transport_from_origin(&x, &v, &c, &mut gx, &mut gv);
            for j in 0..=d {
                let want = fd(phi_x, &x, j);
                assert!(
                    rel_err(gx[j], want) < 1e-6,
                    "transport grad_x[{j}] = {} vs fd {want}",
                    gx[j]
                );
            }
            for j in 0..d {
                let want = fd(phi_v, &v, j);
                assert!(
                    rel_err(gv[j], want) < 1e-6,
                    "transport grad_v[{j}] = {} vs fd {want}",
                    gv[j]
                );
            }
        }
    }

    #[test]
    fn exp_at_vjp_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..50 {
            let d = rng.random_range(2usize..=5);
            let x = rand_point(&mut rng, d, 1.5);
            // Build a true tangent at x so the forward is in its normal regime,
            // but differentiate in the full ambient space.
            let scale = if case % 5 == 0 { 1e-5 } else { 1.2 };
            let v = rand_vec(&mut rng, d, scale);
            let mut u = vec![0.0; d + 1];
            k_transport_from_origin(&x, &v, &mut u);
            let c = rand_vec(&mut rng, d + 1, 1.0);
            let phi_x = |x: &[f64]| {
                let mut out = vec![0.0; x.len()];
                k_exp_at(x, &u, &mut out);
                k_dot(&out, &c)
            };
            let phi_u = |u: &[f64]| {
                let mut out = vec![0.0; u.len()];
                k_exp_at(&x, u, &mut out);
                k_dot(&out, &c)
            };
            let mut gx = vec![0.0; d + 1];
            let mut gu = vec![0.0; d + 1];
            vjp_exp_at(&x, &u, &c, &mut gx, &mut gu);
            for j in 0..=d {
                let want_x = fd(phi_x, &x, j);
                assert!(
                    rel_err(gx[j], want_x) < 1e-6,
                    "exp_at grad_x[{j}] = {} vs fd {want_x} (case {case})",
                    gx[j]
                );
                let want_u = fd(phi_u, &u, j);
                assert!(
                    rel_err(gu[j], want_u) < 1e-5,
                    "exp_at grad_u[{j}] = {} vs fd {want_u} (case {case})",
                    gu[j]
                );
            }
        }
    }

    #[test]
    fn normalize_project_vjp_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let d = rng.random_range(2usize..=5);
            // A positive combination of hyperboloid points (timelike accumulator).
            let n = rng.random_range(1usize..=4);
            let mut z = vec![0.0; d + 1];
            for _ in 0..n {
                let p = rand_point(&mut rng, d, 1.5);
                let w: f64 = rng.random_range(0.1..1.5);
                for j in 0..=d {
                    z[j] += w * p[j];
                }
            }
            let c = rand_vec(&mut rng, d + 1, 1.0);
            let norm_proj = |z: &[f64]| {
                let q = k_linner(z, z);
                let nn = (-q).sqrt();
                let mut w: Vec<f64> = z.iter().map(|v| v / nn).collect();
                k_project(&mut w);
                w
            };
            let phi = |z: &[f64]| k_dot(&norm_proj(z), &c);
            let out = norm_proj(&z);
            let mut gz = vec![0.0; d + 1];
            vjp_normalize_project(&z, &out, &c, &mut gz);
            for j in 0..=d {
                let want = fd(phi, &z, j);
                assert!(
                    rel_err(gz[j], want) < 1e-6,
                    "normalize grad[{j}] = {} vs fd {want}",
                    gz[j]
                );
            }
        }
    }

    #[test]
    fn coefficient_series_join_smoothly() {
        // The series and direct branches must agree near their thresholds.
        for &r in &[0.9e-4_f64, 1.1e-4] {
            let direct = r.sinh() / r;
            assert!(rel_err(sinhc(r), direct) < 1e-12);
        }
        for &r in &[0.9e-2_f64, 1.1e-2] {
            let direct = (r * r.cosh() - r.sinh()) / (r * r * r);
            assert!(rel_err(coef_c(r), direct) < 1e-9);
        }
    }
}
