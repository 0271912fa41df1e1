//! Reverse-mode differentiation through the full forward pass.
//!
//! The backward sweep mirrors `model::forward_tape` stage by stage, in reverse:
//! score seeding, fusion, then per layer the interaction (rematerialized from
//! the taped pre-interaction features) and the propagation transpose, down to
//! the layer-0 embeddings. Gradient tables live in a [`Workspace`] that is
//! reused across steps.

use crate::error::{GgcfError, Result};
use crate::graph::{BprTriple, InteractionGraph};
use crate::lorentz::k_linner;
use crate::model::{
    forward_tape, interact_row, score_unchecked, AblationFlags, ForwardTape, InteractScratch,
    LayerFeatures, LayerState, ParamSet, Side, Table,
};
use crate::train::vjp::{
    vjp_dist, vjp_exp0, vjp_exp_at, vjp_log0, vjp_normalize_project, vjp_project,
    vjp_transport_from_origin,
};
use crate::train::GradSet;

/// ln(1 + e^{-delta}) without overflow on either tail.
#[inline]
pub(crate) fn softplus_neg(delta: f64) -> f64 {
    (-delta).max(0.0) + (-delta.abs()).exp().ln_1p()
}

/// Logistic sigma(-delta) = 1 / (1 + e^{delta}).
#[inline]
pub(crate) fn sigmoid_neg(delta: f64) -> f64 {
    1.0 / (1.0 + delta.exp())
}

#[inline]
fn is_zero_row(row: &[f64]) -> bool {
    row.iter().all(|&v| v == 0.0)
}

/// Per-row scratch for the interaction backward sweep.
struct BackScratch {
    fr: Vec<f64>,
    fh: Vec<f64>,
    g_l: Vec<f64>,
    g_fh_pre: Vec<f64>,
    g_q: Vec<f64>,
    g_p: Vec<f64>,
    g_mm: Vec<f64>,
    g_mm_pre: Vec<f64>,
    g_m: Vec<f64>,
    g_t: Vec<f64>,
    g_y: Vec<f64>,
    g_y_pre: Vec<f64>,
}

impl BackScratch {
    fn new(d: usize) -> Self {
        BackScratch {
            fr: vec![0.0; d],
            fh: vec![0.0; d + 1],
            g_l: vec![0.0; d],
            g_fh_pre: vec![0.0; d + 1],
            g_q: vec![0.0; d + 1],
            g_p: vec![0.0; d],
            g_mm: vec![0.0; d + 1],
            g_mm_pre: vec![0.0; d + 1],
            g_m: vec![0.0; d],
            g_t: vec![0.0; d],
            g_y: vec![0.0; d + 1],
            g_y_pre: vec![0.0; d + 1],
        }
    }
}

/// Reusable buffers for one full gradient evaluation.
pub(crate) struct Workspace {
    pub(crate) tape: ForwardTape,
    /// Per-layer feature gradients, same shapes as the tape's layers.
    gl: Vec<LayerFeatures>,
    /// Fused-feature gradients.
    gfe_u: Table,
    gfe_i: Table,
    gfh_u: Table,
    gfh_i: Table,
    /// Fused hyperbolic accumulator gradients.
    gzf_u: Table,
    gzf_i: Table,
    /// Pre-interaction feature gradients for the layer being processed.
    gpr_u: Table,
    gpr_i: Table,
    gph_u: Table,
    gph_i: Table,
    /// Centroid accumulator gradients.
    gz_u: Table,
    gz_i: Table,
    pub(crate) grads: GradSet,
    scratch: InteractScratch,
    bs: BackScratch,
}

impl Workspace {
    pub(crate) fn new(users: usize, items: usize, d: usize, k_layers: usize) -> Self {
        let layer = || LayerFeatures {
            fr_u: Table::zeros(users, d),
            fr_i: Table::zeros(items, d),
            fh_u: Table::zeros(users, d + 1),
            fh_i: Table::zeros(items, d + 1),
        };
        Workspace {
            tape: ForwardTape::new(users, items, d, k_layers),
            gl: (0..=k_layers).map(|_| layer()).collect(),
            gfe_u: Table::zeros(users, d),
            gfe_i: Table::zeros(items, d),
            gfh_u: Table::zeros(users, d + 1),
            gfh_i: Table::zeros(items, d + 1),
            gzf_u: Table::zeros(users, d + 1),
            gzf_i: Table::zeros(items, d + 1),
            gpr_u: Table::zeros(users, d),
            gpr_i: Table::zeros(items, d),
            gph_u: Table::zeros(users, d + 1),
            gph_i: Table::zeros(items, d + 1),
            gz_u: Table::zeros(users, d + 1),
            gz_i: Table::zeros(items, d + 1),
            grads: GradSet::zeros(users, items, d),
            scratch: InteractScratch::new(d),
            bs: BackScratch::new(d),
        }
    }
}

/// Transposed neighbor gather: out[n] += sum over neighbors m of w_nm * src[m].
/// The graph stores bit-identical weights on both directions, so the transpose
/// of one side's gather is the other side's gather.
fn gather_accum(graph: &InteractionGraph, src: &Table, out: &mut Table, side: Side) {
    for idx in 0..out.rows() {
        let (neighbors, weights) = match side {
            Side::User => graph.items_of(idx as u32),
            Side::Item => graph.users_of(idx as u32),
        };
        let row = out.row_mut(idx);
        for (&m, &w) in neighbors.iter().zip(weights) {
            let s = src.row(m as usize);
            for j in 0..row.len() {
                row[j] += w * s[j];
            }
        }
    }
}

fn accumulate_scaled(out: &mut Table, src: &Table, w: f64) {
    for (o, v) in out.data_mut().iter_mut().zip(src.data()) {
        *o += w * v;
    }
}

/// Backward through one interaction row. `hr`/`hh` are the taped pre-interaction
/// features; the forward sub-steps are rematerialized into `s` and then swept in
/// reverse. `ghr`/`ghh` accumulate; the upstream `gfr`/`gfh` are read-only.
#[allow(clippy::too_many_arguments)]
fn interact_row_backward(
    hr: &[f64],
    hh: &[f64],
    gamma: f64,
    gamma_prime: f64,
    gfr: &[f64],
    gfh: &[f64],
    ghr: &mut [f64],
    ghh: &mut [f64],
    g_gamma: &mut f64,
    g_gamma_prime: &mut f64,
    s: &mut InteractScratch,
    b: &mut BackScratch,
) {
    let d = hr.len();
    let (d_r, d_h) = interact_row(hr, hh, gamma, gamma_prime, &mut b.fr, &mut b.fh, s);

    // fR = hR + (gamma * d_R) * l with l = log0(hH), d_R = |hR - l|.
    let mut gfr_dot_l = 0.0;
    for j in 0..d {
        gfr_dot_l += gfr[j] * s.l[j];
    }
    *g_gamma += gfr_dot_l * d_r;
    let g_dr = gamma * gfr_dot_l;
    let ge = gamma * d_r;
    b.g_l.fill(0.0);
    for j in 0..d {
        ghr[j] += gfr[j];
        b.g_l[j] += ge * gfr[j];
    }
    if d_r > 0.0 {
        for j in 0..d {
            let w = (hr[j] - s.l[j]) / d_r;
            ghr[j] += g_dr * w;
            b.g_l[j] -= g_dr * w;
        }
    }
    vjp_log0(hh, &b.g_l, ghh);

    // fH = project(exp_at(hH, q)), q = transport(hH, p), p = log0(mm),
    // mm = project(exp0(m)), m = (gamma' * d_H) * t, t = log0(y),
    // d_H = dist(hH, y), y = project(exp0(hR)).
    b.g_fh_pre.fill(0.0);
    vjp_project(&b.fh, gfh, &mut b.g_fh_pre);
    b.g_q.fill(0.0);
    vjp_exp_at(hh, &s.q, &b.g_fh_pre, ghh, &mut b.g_q);
    b.g_p.fill(0.0);
    vjp_transport_from_origin(hh, &s.p, &b.g_q, ghh, &mut b.g_p);
    b.g_mm.fill(0.0);
    vjp_log0(&s.mm, &b.g_p, &mut b.g_mm);
    b.g_mm_pre.fill(0.0);
    vjp_project(&s.mm, &b.g_mm, &mut b.g_mm_pre);
    b.g_m.fill(0.0);
    vjp_exp0(&s.m, &b.g_mm_pre, &mut b.g_m);

    let scale = gamma_prime * d_h;
    let mut gm_dot_t = 0.0;
    for j in 0..d {
        gm_dot_t += b.g_m[j] * s.t[j];
    }
    *g_gamma_prime += gm_dot_t * d_h;
    let g_dh = gamma_prime * gm_dot_t;
    for j in 0..d {
        b.g_t[j] = scale * b.g_m[j];
    }
    b.g_y.fill(0.0);
    vjp_log0(&s.y, &b.g_t, &mut b.g_y);
    vjp_dist(hh, &s.y, g_dh, ghh, &mut b.g_y);
    b.g_y_pre.fill(0.0);
    vjp_project(&s.y, &b.g_y, &mut b.g_y_pre);
    vjp_exp0(hr, &b.g_y_pre, ghr);
}

/// Score seeding for one (user, item) pair with upstream coefficient `g`.
#[allow(clippy::too_many_arguments)]
fn seed_score(
    fused: &LayerState,
    u: usize,
    i: usize,
    g: f64,
    lambda_eff: f64,
    flags: AblationFlags,
    gfe_u: &mut Table,
    gfe_i: &mut Table,
    gfh_u: &mut Table,
    gfh_i: &mut Table,
    g_lambda: &mut f64,
) {
    if !flags.hyperbolic_only {
        let fu = fused.euclid_user.row(u);
        let fi = fused.euclid_item.row(i);
        let gu = gfe_u.row_mut(u);
        for j in 0..fi.len() {
            gu[j] += g * fi[j];
        }
        let gi = gfe_i.row_mut(i);
        for j in 0..fu.len() {
            gi[j] += g * fu[j];
        }
    }
    if !flags.euclidean_only {
        let hu = fused.hyper_user.row(u);
        let hi = fused.hyper_item.row(i);
        *g_lambda += g * k_linner(hu, hi);
        let gu = gfh_u.row_mut(u);
        gu[0] += -g * lambda_eff * hi[0];
        for j in 1..hi.len() {
            gu[j] += g * lambda_eff * hi[j];
        }
        let gi = gfh_i.row_mut(i);
        gi[0] += -g * lambda_eff * hu[0];
        for j in 1..hu.len() {
            gi[j] += g * lambda_eff * hu[j];
        }
    }
}

/// Squared norms of the layer-0 rows touched by the batch, with optional
/// gradient accumulation. Returns the raw sum of squared norms; the caller
/// scales by l2_weight / batch_size. Rows in a disabled geometry are skipped,
/// keeping their parameters exactly dead.
pub(crate) fn l2_accumulate(
    params: &ParamSet,
    batch: &[BprTriple],
    coeff: f64,
    flags: AblationFlags,
    mut grads: Option<&mut GradSet>,
) -> f64 {
    let mut sum = 0.0;
    let mut touch = |row: &[f64], grow: Option<&mut [f64]>| {
        let mut sq = 0.0;
        for &v in row {
            sq += v * v;
        }
        sum += sq;
        if let Some(grow) = grow {
            for (gv, &v) in grow.iter_mut().zip(row) {
                *gv += 2.0 * coeff * v;
            }
        }
    };
    for t in batch {
        let (u, p, n) = (t.user as usize, t.pos_item as usize, t.neg_item as usize);
        if !flags.hyperbolic_only {
            touch(
                params.euclid_user.row(u),
                grads.as_deref_mut().map(|g| g.euclid_user.row_mut(u)),
            );
            touch(
                params.euclid_item.row(p),
                grads.as_deref_mut().map(|g| g.euclid_item.row_mut(p)),
            );
            touch(
                params.euclid_item.row(n),
                grads.as_deref_mut().map(|g| g.euclid_item.row_mut(n)),
            );
        }
        if !flags.euclidean_only {
            touch(
                params.tangent_user.row(u),
                grads.as_deref_mut().map(|g| g.tangent_user.row_mut(u)),
            );
            touch(
                params.tangent_item.row(p),
                grads.as_deref_mut().map(|g| g.tangent_item.row_mut(p)),
            );
            touch(
                params.tangent_item.row(n),
                grads.as_deref_mut().map(|g| g.tangent_item.row_mut(n)),
            );
        }
    }
    sum
}

/// Full forward + backward for one batch. Fills `ws.grads` with the exact
/// gradient of bpr_loss + l2_penalty and returns the loss value.
pub(crate) fn gradients_into(
    ws: &mut Workspace,
    graph: &InteractionGraph,
    params: &ParamSet,
    batch: &[BprTriple],
    l2_weight: f64,
    flags: AblationFlags,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(GgcfError::Degenerate("gradient batch is empty".into()));
    }
    for t in batch {
        if t.user as usize >= graph.user_count()
            || t.pos_item as usize >= graph.item_count()
            || t.neg_item as usize >= graph.item_count()
        {
            return Err(GgcfError::Dimension(format!(
                "triple ({}, {}, {}) out of range for {}x{} graph",
                t.user,
                t.pos_item,
                t.neg_item,
                graph.user_count(),
                graph.item_count()
            )));
        }
    }

    forward_tape(graph, params, flags, &mut ws.tape)?;

    let Workspace {
        tape,
        gl,
        gfe_u,
        gfe_i,
        gfh_u,
        gfh_i,
        gzf_u,
        gzf_i,
        gpr_u,
        gpr_i,
        gph_u,
        gph_i,
        gz_u,
        gz_i,
        grads,
        scratch,
        bs,
    } = ws;

    grads.zero();
    for l in gl.iter_mut() {
        l.fr_u.fill(0.0);
        l.fr_i.fill(0.0);
        l.fh_u.fill(0.0);
        l.fh_i.fill(0.0);
    }
    gfe_u.fill(0.0);
    gfe_i.fill(0.0);
    gfh_u.fill(0.0);
    gfh_i.fill(0.0);
    gzf_u.fill(0.0);
    gzf_i.fill(0.0);

    let k_layers = tape.k_layers;
    let b_len = batch.len() as f64;
    let lambda_eff = flags.effective_lambda(params.lambda);
    let fused = &tape.fused;

    // Score and loss seeding.
    let mut loss_bpr = 0.0;
    let mut g_lambda = 0.0;
    for t in batch {
        let s_pos = score_unchecked(fused, t.user, t.pos_item, lambda_eff);
        let s_neg = score_unchecked(fused, t.user, t.neg_item, lambda_eff);
        let delta = s_pos - s_neg;
        loss_bpr += softplus_neg(delta);
        let g = -sigmoid_neg(delta) / b_len;
        seed_score(
            fused,
            t.user as usize,
            t.pos_item as usize,
            g,
            lambda_eff,
            flags,
            gfe_u,
            gfe_i,
            gfh_u,
            gfh_i,
            &mut g_lambda,
        );
        seed_score(
            fused,
            t.user as usize,
            t.neg_item as usize,
            -g,
            lambda_eff,
            flags,
            gfe_u,
            gfe_i,
            gfh_u,
            gfh_i,
            &mut g_lambda,
        );
    }
    loss_bpr /= b_len;

    // L2 penalty and its gradient.
    let coeff = l2_weight / b_len;
    let loss_l2 = if l2_weight != 0.0 {
        coeff * l2_accumulate(params, batch, coeff, flags, Some(grads))
    } else {
        0.0
    };

    // Fusion backward: equal weights 1/(K+1).
    let w = 1.0 / (k_layers + 1) as f64;
    if !flags.euclidean_only {
        for r in 0..gfh_u.rows() {
            if is_zero_row(gfh_u.row(r)) {
                continue;
            }
            vjp_normalize_project(
                tape.zf_u.row(r),
                fused.hyper_user.row(r),
                gfh_u.row(r),
                gzf_u.row_mut(r),
            );
        }
        for r in 0..gfh_i.rows() {
            if is_zero_row(gfh_i.row(r)) {
                continue;
            }
            vjp_normalize_project(
                tape.zf_i.row(r),
                fused.hyper_item.row(r),
                gfh_i.row(r),
                gzf_i.row_mut(r),
            );
        }
    }
    for layer in gl.iter_mut() {
        if !flags.hyperbolic_only {
            accumulate_scaled(&mut layer.fr_u, gfe_u, w);
            accumulate_scaled(&mut layer.fr_i, gfe_i, w);
        }
        if !flags.euclidean_only {
            accumulate_scaled(&mut layer.fh_u, gzf_u, w);
            accumulate_scaled(&mut layer.fh_i, gzf_i, w);
        }
    }

    // Layers K..1: interaction backward, then the propagation transpose.
    let mut g_gamma = 0.0;
    let mut g_gamma_prime = 0.0;
    for k in (1..=k_layers).rev() {
        let (lower, upper) = gl.split_at_mut(k);
        let cur = &upper[0];
        let prev = &mut lower[k - 1];
        let prop = &tape.props[k - 1];

        let (ghr_u, ghr_i, ghh_u, ghh_i): (&Table, &Table, &Table, &Table) =
            if flags.interaction_active() {
                gpr_u.fill(0.0);
                gpr_i.fill(0.0);
                gph_u.fill(0.0);
                gph_i.fill(0.0);
                for r in 0..gpr_u.rows() {
                    if is_zero_row(cur.fr_u.row(r)) && is_zero_row(cur.fh_u.row(r)) {
                        continue;
                    }
                    interact_row_backward(
                        prop.hr_u.row(r),
                        prop.hh_u.row(r),
                        params.gamma,
                        params.gamma_prime,
                        cur.fr_u.row(r),
                        cur.fh_u.row(r),
                        gpr_u.row_mut(r),
                        gph_u.row_mut(r),
                        &mut g_gamma,
                        &mut g_gamma_prime,
                        scratch,
                        bs,
                    );
                }
                for r in 0..gpr_i.rows() {
                    if is_zero_row(cur.fr_i.row(r)) && is_zero_row(cur.fh_i.row(r)) {
                        continue;
                    }
                    interact_row_backward(
                        prop.hr_i.row(r),
                        prop.hh_i.row(r),
                        params.gamma,
                        params.gamma_prime,
                        cur.fr_i.row(r),
                        cur.fh_i.row(r),
                        gpr_i.row_mut(r),
                        gph_i.row_mut(r),
                        &mut g_gamma,
                        &mut g_gamma_prime,
                        scratch,
                        bs,
                    );
                }
                (gpr_u, gpr_i, gph_u, gph_i)
            } else {
                (&cur.fr_u, &cur.fr_i, &cur.fh_u, &cur.fh_i)
            };

        if !flags.hyperbolic_only {
            gather_accum(graph, ghr_u, &mut prev.fr_i, Side::Item);
            gather_accum(graph, ghr_i, &mut prev.fr_u, Side::User);
        }
        if !flags.euclidean_only {
            gz_u.fill(0.0);
            gz_i.fill(0.0);
            for r in 0..gz_u.rows() {
                if graph.user_degree(r as u32) == 0 || is_zero_row(ghh_u.row(r)) {
                    continue;
                }
                vjp_normalize_project(prop.z_u.row(r), prop.hh_u.row(r), ghh_u.row(r), gz_u.row_mut(r));
            }
            for r in 0..gz_i.rows() {
                if graph.item_degree(r as u32) == 0 || is_zero_row(ghh_i.row(r)) {
                    continue;
                }
                vjp_normalize_project(prop.z_i.row(r), prop.hh_i.row(r), ghh_i.row(r), gz_i.row_mut(r));
            }
            gather_accum(graph, gz_u, &mut prev.fh_i, Side::Item);
            gather_accum(graph, gz_i, &mut prev.fh_u, Side::User);
        }
    }

    // Layer 0: raw embeddings.
    if !flags.hyperbolic_only {
        accumulate_scaled(&mut grads.euclid_user, &gl[0].fr_u, 1.0);
        accumulate_scaled(&mut grads.euclid_item, &gl[0].fr_i, 1.0);
    }
    if !flags.euclidean_only {
        let layer0 = &tape.layers[0];
        for r in 0..layer0.fh_u.rows() {
            let g = gl[0].fh_u.row(r);
            if is_zero_row(g) {
                continue;
            }
            bs.g_y_pre.fill(0.0);
            vjp_project(layer0.fh_u.row(r), g, &mut bs.g_y_pre);
            vjp_exp0(
                params.tangent_user.row(r),
                &bs.g_y_pre,
                grads.tangent_user.row_mut(r),
            );
        }
        for r in 0..layer0.fh_i.rows() {
            let g = gl[0].fh_i.row(r);
            if is_zero_row(g) {
                continue;
            }
            bs.g_y_pre.fill(0.0);
            vjp_project(layer0.fh_i.row(r), g, &mut bs.g_y_pre);
            vjp_exp0(
                params.tangent_item.row(r),
                &bs.g_y_pre,
                grads.tangent_item.row_mut(r),
            );
        }
    }

    if flags.interaction_active() {
        grads.gamma = g_gamma;
        grads.gamma_prime = g_gamma_prime;
    }
    if !flags.euclidean_only {
        grads.lambda = g_lambda;
    }

    let loss = loss_bpr + loss_l2;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(GgcfError::Numeric(
            "gradient evaluation produced a non-finite value".into(),
        ));
    }
    Ok(loss)
}
