//! The GGCF forward computation.
//!
//! Layer 0 features are the raw parameters: Euclidean embedding rows and
//! exp0-mapped tangent rows. Each further layer propagates both geometries over
//! the bipartite graph (weighted mean in Euclidean space, Lorentzian centroid on
//! the hyperboloid), then lets the geometries interact through distance-gated
//! updates:
//!
//! ```text
//! fR = hR + gamma  * d_R(hR, log0(hH)) * log0(hH)
//! fH = hH (+) ( [gamma' * d_H(hH, exp0(hR))] (*) exp0(hR) )
//! ```
//!
//! The fused output of a layer feeds the next layer. After K layers the per-layer
//! features are fused with equal weights (arithmetic mean / uniform Lorentzian
//! centroid) and a user-item pair is scored as
//! `<fR_u, fR_i> + lambda * <fH_u, fH_i>_L`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{GgcfError, Result};
use crate::graph::InteractionGraph;
use crate::lorentz::{
    k_dist, k_dot, k_exp0, k_exp_at, k_linner, k_log0, k_project, k_transport_from_origin,
    HPoint,
};

/// Dense row-major f64 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Table {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GgcfError::Dimension(format!(
                "table data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Table { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn copy_from(&mut self, other: &Table) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.copy_from_slice(&other.data);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// All trainable parameters: two embedding tables per geometry plus the three scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub euclid_user: Table,
    pub euclid_item: Table,
    /// Hyperbolic parameters, stored as tangent coordinates at the origin.
    pub tangent_user: Table,
    pub tangent_item: Table,
    pub gamma: f64,
    pub gamma_prime: f64,
    pub lambda: f64,
}

impl ParamSet {
    pub fn dim(&self) -> usize {
        self.euclid_user.cols()
    }

    pub fn user_count(&self) -> usize {
        self.euclid_user.rows()
    }

    pub fn item_count(&self) -> usize {
        self.euclid_item.rows()
    }

    /// Total trainable scalar count: 2 (U + I) d + 3.
    pub fn param_count(&self) -> usize {
        2 * (self.user_count() + self.item_count()) * self.dim() + 3
    }

    pub fn is_finite(&self) -> bool {
        self.euclid_user.is_finite()
            && self.euclid_item.is_finite()
            && self.tangent_user.is_finite()
            && self.tangent_item.is_finite()
            && self.gamma.is_finite()
            && self.gamma_prime.is_finite()
            && self.lambda.is_finite()
    }

    fn check_shape(&self, graph: &InteractionGraph) -> Result<()> {
        if self.user_count() != graph.user_count() || self.item_count() != graph.item_count() {
            return Err(GgcfError::Dimension(format!(
                "parameter tables are {}x{} users/items but the graph has {}x{}",
                self.user_count(),
                self.item_count(),
                graph.user_count(),
                graph.item_count()
            )));
        }
        Ok(())
    }
}

/// Ablation switches. `euclidean_only` drops the hyperbolic branch (and forces
/// lambda to 0 in scoring); `hyperbolic_only` drops the Euclidean branch; both
/// drop the cross-geometry interaction, as does `disable_interaction` alone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    pub disable_interaction: bool,
    pub euclidean_only: bool,
    pub hyperbolic_only: bool,
}

impl AblationFlags {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.euclidean_only && self.hyperbolic_only {
            return Err(GgcfError::Config(
                "euclidean_only and hyperbolic_only are mutually exclusive".into(),
            ));
        }
        Ok(())
    }

    /// Whether the cross-geometry interaction runs (it needs both branches).
    pub fn interaction_active(&self) -> bool {
        !self.disable_interaction && !self.euclidean_only && !self.hyperbolic_only
    }

    /// The lambda actually used in scoring under these flags.
    pub fn effective_lambda(&self, lambda: f64) -> f64 {
        if self.euclidean_only {
            0.0
        } else {
            lambda
        }
    }
}

/// Per-layer (or fused) feature state. Hyperbolic rows are points on the manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub euclid_user: Table,
    pub euclid_item: Table,
    pub hyper_user: Table,
    pub hyper_item: Table,
    pub layer_index: usize,
}

impl LayerState {
    fn dim(&self) -> usize {
        self.euclid_user.cols()
    }
}

/// Gaussian-initialized parameters: every table entry from N(0, 0.1^2) drawn in
/// a fixed order (euclid user, euclid item, tangent user, tangent item), scalars
/// gamma = gamma' = 0 and lambda = 1. Deterministic per seed.
pub fn init_params(user_count: usize, item_count: usize, dim: usize, seed: u64) -> Result<ParamSet> {
    if dim == 0 {
        return Err(GgcfError::Config("embedding dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.1).expect("valid normal parameters");
    let mut fill = |rows: usize| {
        let mut t = Table::zeros(rows, dim);
        for v in t.data_mut().iter_mut() {
            *v = normal.sample(&mut rng);
        }
        t
    };
    Ok(ParamSet {
        euclid_user: fill(user_count),
        euclid_item: fill(item_count),
        tangent_user: fill(user_count),
        tangent_item: fill(item_count),
        gamma: 0.0,
        gamma_prime: 0.0,
        lambda: 1.0,
    })
}

fn check_table_shape(name: &str, t: &Table, rows: usize, cols: usize) -> Result<()> {
    if t.rows() != rows || t.cols() != cols {
        return Err(GgcfError::Dimension(format!(
            "{name} has shape {}x{}, expected {rows}x{cols}",
            t.rows(),
            t.cols()
        )));
    }
    Ok(())
}

/// One Euclidean propagation step: weighted neighbor means in both directions.
/// Isolated nodes receive the zero vector.
pub fn propagate_euclidean(
    graph: &InteractionGraph,
    user_feats: &Table,
    item_feats: &Table,
) -> Result<(Table, Table)> {
    let d = user_feats.cols();
    check_table_shape("user features", user_feats, graph.user_count(), d)?;
    check_table_shape("item features", item_feats, graph.item_count(), d)?;
    let mut out_user = Table::zeros(graph.user_count(), d);
    let mut out_item = Table::zeros(graph.item_count(), d);
    euclid_gather(graph, item_feats, &mut out_user, Side::User);
    euclid_gather(graph, user_feats, &mut out_item, Side::Item);
    Ok((out_user, out_item))
}

#[derive(Clone, Copy)]
pub(crate) enum Side {
    User,
    Item,
}

/// out[n] = sum over neighbors m of w_nm * src[m]; rows are fully overwritten.
pub(crate) fn euclid_gather(graph: &InteractionGraph, src: &Table, out: &mut Table, side: Side) {
    let n = out.rows();
    for idx in 0..n {
        let (neighbors, weights) = match side {
            Side::User => graph.items_of(idx as u32),
            Side::Item => graph.users_of(idx as u32),
        };
        let row = out.row_mut(idx);
        row.fill(0.0);
        for (&m, &w) in neighbors.iter().zip(weights) {
            let s = src.row(m as usize);
            for j in 0..row.len() {
                row[j] += w * s[j];
            }
        }
    }
}

/// One hyperbolic propagation step: per-node Lorentzian centroid of neighbor
/// points under the same edge weights. Isolated nodes receive the origin.
pub fn propagate_hyperbolic(
    graph: &InteractionGraph,
    user_points: &Table,
    item_points: &Table,
) -> Result<(Table, Table)> {
    let a = user_points.cols();
    check_table_shape("user points", user_points, graph.user_count(), a)?;
    check_table_shape("item points", item_points, graph.item_count(), a)?;
    let mut z_user = Table::zeros(graph.user_count(), a);
    let mut z_item = Table::zeros(graph.item_count(), a);
    let mut out_user = Table::zeros(graph.user_count(), a);
    let mut out_item = Table::zeros(graph.item_count(), a);
    hyper_gather(graph, item_points, &mut z_user, Side::User);
    hyper_gather(graph, user_points, &mut z_item, Side::Item);
    hyper_normalize(graph, &z_user, &mut out_user, Side::User)?;
    hyper_normalize(graph, &z_item, &mut out_item, Side::Item)?;
    Ok((out_user, out_item))
}

/// Accumulate the weighted point sums z[n] = sum w_nm * p[m] (pre-normalization).
pub(crate) fn hyper_gather(graph: &InteractionGraph, src: &Table, z: &mut Table, side: Side) {
    euclid_gather(graph, src, z, side);
}

/// Normalize centroid accumulators onto the manifold; isolated rows become the origin.
pub(crate) fn hyper_normalize(
    graph: &InteractionGraph,
    z: &Table,
    out: &mut Table,
    side: Side,
) -> Result<()> {
    for idx in 0..z.rows() {
        let degree = match side {
            Side::User => graph.user_degree(idx as u32),
            Side::Item => graph.item_degree(idx as u32),
        };
        let row = out.row_mut(idx);
        if degree == 0 {
            row.fill(0.0);
            row[0] = 1.0;
            continue;
        }
        row.copy_from_slice(z.row(idx));
        let q = k_linner(row, row);
        if !(q < 0.0) || !q.is_finite() {
            return Err(GgcfError::Numeric(format!(
                "hyperbolic propagation produced a non-timelike centroid at row {idx}"
            )));
        }
        let n = (-q).sqrt();
        for v in row.iter_mut() {
            *v /= n;
        }
        k_project(row);
    }
    Ok(())
}

/// Scratch buffers for one interaction row; reused across rows.
pub(crate) struct InteractScratch {
    pub l: Vec<f64>,
    pub y: Vec<f64>,
    pub t: Vec<f64>,
    pub m: Vec<f64>,
    pub mm: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl InteractScratch {
    pub(crate) fn new(d: usize) -> Self {
        InteractScratch {
            l: vec![0.0; d],
            y: vec![0.0; d + 1],
            t: vec![0.0; d],
            m: vec![0.0; d],
            mm: vec![0.0; d + 1],
            p: vec![0.0; d],
            q: vec![0.0; d + 1],
        }
    }
}

/// Cross-geometry interaction for one feature row. Returns the two gating
/// distances (d_R, d_H) so the backward sweep can reuse them.
///
/// Implements the two updates literally as compositions of the manifold
/// primitives; the backward pass re-derives the same sub-steps.
pub(crate) fn interact_row(
    hr: &[f64],
    hh: &[f64],
    gamma: f64,
    gamma_prime: f64,
    fr: &mut [f64],
    fh: &mut [f64],
    s: &mut InteractScratch,
) -> (f64, f64) {
    let d = hr.len();
    // Euclidean side: fR = hR + gamma * |hR - log0(hH)| * log0(hH).
    k_log0(hh, &mut s.l);
    let mut d_r2 = 0.0;
    for j in 0..d {
        let t = hr[j] - s.l[j];
        d_r2 += t * t;
    }
    let d_r = d_r2.sqrt();
    let ge = gamma * d_r;
    for j in 0..d {
        fr[j] = hr[j] + ge * s.l[j];
    }
    // Hyperbolic side: fH = hH (+) ( [gamma' * d_H(hH, exp0(hR))] (*) exp0(hR) ).
    k_exp0(hr, &mut s.y);
    k_project(&mut s.y);
    let d_h = k_dist(hh, &s.y);
    let scale = gamma_prime * d_h;
    k_log0(&s.y, &mut s.t);
    for j in 0..d {
        s.m[j] = scale * s.t[j];
    }
    k_exp0(&s.m, &mut s.mm);
    k_project(&mut s.mm);
    k_log0(&s.mm, &mut s.p);
    k_transport_from_origin(hh, &s.p, &mut s.q);
    k_exp_at(hh, &s.q, fh);
    k_project(fh);
    (d_r, d_h)
}

/// Cross-geometry interaction of one Euclidean row with one hyperbolic point.
pub fn interact(
    hr: &[f64],
    hh: &HPoint,
    gamma: f64,
    gamma_prime: f64,
) -> Result<(Vec<f64>, HPoint)> {
    if hr.len() != hh.dim() {
        return Err(GgcfError::Dimension(format!(
            "Euclidean feature dimension {} does not match point dimension {}",
            hr.len(),
            hh.dim()
        )));
    }
    let mut scratch = InteractScratch::new(hr.len());
    let mut fr = vec![0.0; hr.len()];
    let mut fh = vec![0.0; hr.len() + 1];
    interact_row(hr, hh.as_slice(), gamma, gamma_prime, &mut fr, &mut fh, &mut scratch);
    Ok((fr, HPoint::from_vec_unchecked(fh)))
}

/// Equal-weight fusion across layers: arithmetic mean of the Euclidean features,
/// uniform Lorentzian centroid (sum of rows / (K+1), normalized) of the
/// hyperbolic features.
pub fn fuse_layers(states: &[LayerState]) -> Result<LayerState> {
    if states.is_empty() {
        return Err(GgcfError::Dimension("fusing an empty layer list".into()));
    }
    let d = states[0].dim();
    let (u, i) = (states[0].euclid_user.rows(), states[0].euclid_item.rows());
    for s in states {
        check_table_shape("layer euclid_user", &s.euclid_user, u, d)?;
        check_table_shape("layer euclid_item", &s.euclid_item, i, d)?;
        check_table_shape("layer hyper_user", &s.hyper_user, u, d + 1)?;
        check_table_shape("layer hyper_item", &s.hyper_item, i, d + 1)?;
    }
    let euclid_user = mean_tables(states.iter().map(|s| &s.euclid_user));
    let euclid_item = mean_tables(states.iter().map(|s| &s.euclid_item));
    let mut zf_user = mean_tables(states.iter().map(|s| &s.hyper_user));
    let mut zf_item = mean_tables(states.iter().map(|s| &s.hyper_item));
    normalize_all_rows(&mut zf_user)?;
    normalize_all_rows(&mut zf_item)?;
    Ok(LayerState {
        euclid_user,
        euclid_item,
        hyper_user: zf_user,
        hyper_item: zf_item,
        layer_index: states.len() - 1,
    })
}

fn mean_tables<'a>(tables: impl Iterator<Item = &'a Table> + Clone) -> Table {
    let count = tables.clone().count();
    let first = tables.clone().next().expect("non-empty layer list");
    let mut out = Table::zeros(first.rows(), first.cols());
    let w = 1.0 / count as f64;
    for t in tables {
        for (o, v) in out.data_mut().iter_mut().zip(t.data()) {
            *o += w * v;
        }
    }
    out
}

fn normalize_all_rows(t: &mut Table) -> Result<()> {
    for r in 0..t.rows() {
        let row = t.row_mut(r);
        let q = k_linner(row, row);
        if !(q < 0.0) || !q.is_finite() {
            return Err(GgcfError::Numeric(format!(
                "layer fusion produced a non-timelike centroid at row {r}"
            )));
        }
        let n = (-q).sqrt();
        for v in row.iter_mut() {
            *v /= n;
        }
        k_project(row);
    }
    Ok(())
}

/// Dual scalar-product score: `<fR_u, fR_i> + lambda * <fH_u, fH_i>_L`.
pub fn score(state: &LayerState, u: u32, i: u32, lambda: f64) -> Result<f64> {
    if u as usize >= state.euclid_user.rows() || i as usize >= state.euclid_item.rows() {
        return Err(GgcfError::Dimension(format!(
            "score index ({u}, {i}) out of range for {}x{} state",
            state.euclid_user.rows(),
            state.euclid_item.rows()
        )));
    }
    Ok(score_unchecked(state, u, i, lambda))
}

#[inline]
pub(crate) fn score_unchecked(state: &LayerState, u: u32, i: u32, lambda: f64) -> f64 {
    let e = k_dot(state.euclid_user.row(u as usize), state.euclid_item.row(i as usize));
    let h = k_linner(state.hyper_user.row(u as usize), state.hyper_item.row(i as usize));
    e + lambda * h
}

/// Per-layer features kept by the forward pass: post-interaction outputs
/// (the inputs of the next layer) for both geometries and both sides.
#[derive(Debug, Clone)]
pub(crate) struct LayerFeatures {
    pub fr_u: Table,
    pub fr_i: Table,
    pub fh_u: Table,
    pub fh_i: Table,
}

/// Intermediates of one propagation step, kept for the backward pass:
/// pre-interaction Euclidean means, raw centroid accumulators, and the
/// normalized hyperbolic points.
#[derive(Debug, Clone)]
pub(crate) struct PropTape {
    pub hr_u: Table,
    pub hr_i: Table,
    pub z_u: Table,
    pub z_i: Table,
    pub hh_u: Table,
    pub hh_i: Table,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub(crate) struct ForwardTape {
    pub k_layers: usize,
    pub flags: AblationFlags,
    /// K+1 entries: features per layer (entry 0 holds the raw embeddings).
    pub layers: Vec<LayerFeatures>,
    /// K entries: propagation intermediates of layers 1..=K.
    pub props: Vec<PropTape>,
    /// Fused hyperbolic accumulators (pre-normalization), per side.
    pub zf_u: Table,
    pub zf_i: Table,
    pub fused: LayerState,
}

impl ForwardTape {
    pub(crate) fn new(users: usize, items: usize, d: usize, k_layers: usize) -> Self {
        let layer = || LayerFeatures {
            fr_u: Table::zeros(users, d),
            fr_i: Table::zeros(items, d),
            fh_u: Table::zeros(users, d + 1),
            fh_i: Table::zeros(items, d + 1),
        };
        let prop = || PropTape {
            hr_u: Table::zeros(users, d),
            hr_i: Table::zeros(items, d),
            z_u: Table::zeros(users, d + 1),
            z_i: Table::zeros(items, d + 1),
            hh_u: Table::zeros(users, d + 1),
            hh_i: Table::zeros(items, d + 1),
        };
        ForwardTape {
            k_layers,
            flags: AblationFlags::none(),
            layers: (0..=k_layers).map(|_| layer()).collect(),
            props: (0..k_layers).map(|_| prop()).collect(),
            zf_u: Table::zeros(users, d + 1),
            zf_i: Table::zeros(items, d + 1),
            fused: LayerState {
                euclid_user: Table::zeros(users, d),
                euclid_item: Table::zeros(items, d),
                hyper_user: Table::zeros(users, d + 1),
                hyper_item: Table::zeros(items, d + 1),
                layer_index: k_layers,
            },
        }
    }
}

fn origin_rows(t: &mut Table) {
    t.fill(0.0);
    for r in 0..t.rows() {
        t.row_mut(r)[0] = 1.0;
    }
}

fn exp0_rows(tangent: &Table, out: &mut Table) {
    for r in 0..tangent.rows() {
        let row = out.row_mut(r);
        k_exp0(tangent.row(r), row);
        k_project(row);
    }
}

/// Tape-recording forward pass. The tape must be shaped for (graph, params, K).
pub(crate) fn forward_tape(
    graph: &InteractionGraph,
    params: &ParamSet,
    flags: AblationFlags,
    tape: &mut ForwardTape,
) -> Result<()> {
    flags.validate()?;
    params.check_shape(graph)?;
    if !params.is_finite() {
        return Err(GgcfError::Numeric("parameters contain non-finite entries".into()));
    }
    let k_layers = tape.k_layers;
    tape.flags = flags;
    let d = params.dim();

    // Layer 0: raw embeddings.
    {
        let layer0 = &mut tape.layers[0];
        if flags.hyperbolic_only {
            layer0.fr_u.fill(0.0);
            layer0.fr_i.fill(0.0);
        } else {
            layer0.fr_u.copy_from(&params.euclid_user);
            layer0.fr_i.copy_from(&params.euclid_item);
        }
        if flags.euclidean_only {
            origin_rows(&mut layer0.fh_u);
            origin_rows(&mut layer0.fh_i);
        } else {
            exp0_rows(&params.tangent_user, &mut layer0.fh_u);
            exp0_rows(&params.tangent_item, &mut layer0.fh_i);
        }
    }

    let mut scratch = InteractScratch::new(d);
    for k in 1..=k_layers {
        let (prev, rest) = tape.layers.split_at_mut(k);
        let prev = &prev[k - 1];
        let cur = &mut rest[0];
        let prop = &mut tape.props[k - 1];

        if flags.hyperbolic_only {
            prop.hr_u.fill(0.0);
            prop.hr_i.fill(0.0);
        } else {
            euclid_gather(graph, &prev.fr_i, &mut prop.hr_u, Side::User);
            euclid_gather(graph, &prev.fr_u, &mut prop.hr_i, Side::Item);
        }
        if flags.euclidean_only {
            origin_rows(&mut prop.hh_u);
            origin_rows(&mut prop.hh_i);
        } else {
            hyper_gather(graph, &prev.fh_i, &mut prop.z_u, Side::User);
            hyper_gather(graph, &prev.fh_u, &mut prop.z_i, Side::Item);
            hyper_normalize(graph, &prop.z_u, &mut prop.hh_u, Side::User)?;
            hyper_normalize(graph, &prop.z_i, &mut prop.hh_i, Side::Item)?;
        }

        if flags.interaction_active() {
            for r in 0..prop.hr_u.rows() {
                interact_row(
                    prop.hr_u.row(r),
                    prop.hh_u.row(r),
                    params.gamma,
                    params.gamma_prime,
                    cur.fr_u.row_mut(r),
                    cur.fh_u.row_mut(r),
                    &mut scratch,
                );
            }
            for r in 0..prop.hr_i.rows() {
                interact_row(
                    prop.hr_i.row(r),
                    prop.hh_i.row(r),
                    params.gamma,
                    params.gamma_prime,
                    cur.fr_i.row_mut(r),
                    cur.fh_i.row_mut(r),
                    &mut scratch,
                );
            }
        } else {
            cur.fr_u.copy_from(&prop.hr_u);
            cur.fr_i.copy_from(&prop.hr_i);
            cur.fh_u.copy_from(&prop.hh_u);
            cur.fh_i.copy_from(&prop.hh_i);
        }
    }

    // Fusion with equal weights 1/(K+1).
    let w = 1.0 / (k_layers + 1) as f64;
    tape.fused.euclid_user.fill(0.0);
    tape.fused.euclid_item.fill(0.0);
    tape.zf_u.fill(0.0);
    tape.zf_i.fill(0.0);
    for layer in &tape.layers {
        accumulate_scaled(&mut tape.fused.euclid_user, &layer.fr_u, w);
        accumulate_scaled(&mut tape.fused.euclid_item, &layer.fr_i, w);
        accumulate_scaled(&mut tape.zf_u, &layer.fh_u, w);
        accumulate_scaled(&mut tape.zf_i, &layer.fh_i, w);
    }
    if flags.euclidean_only {
        origin_rows(&mut tape.fused.hyper_user);
        origin_rows(&mut tape.fused.hyper_item);
    } else {
        tape.fused.hyper_user.copy_from(&tape.zf_u);
        normalize_all_rows(&mut tape.fused.hyper_user)?;
        tape.fused.hyper_item.copy_from(&tape.zf_i);
        normalize_all_rows(&mut tape.fused.hyper_item)?;
    }
    tape.fused.layer_index = k_layers;
    Ok(())
}

fn accumulate_scaled(out: &mut Table, src: &Table, w: f64) {
    for (o, v) in out.data_mut().iter_mut().zip(src.data()) {
        *o += w * v;
    }
}

/// Full forward pass: K propagation layers with interaction, fused output.
pub fn forward(
    graph: &InteractionGraph,
    params: &ParamSet,
    k_layers: usize,
    flags: AblationFlags,
) -> Result<LayerState> {
    let mut tape = ForwardTape::new(graph.user_count(), graph.item_count(), params.dim(), k_layers);
    forward_tape(graph, params, flags, &mut tape)?;
    Ok(tape.fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::InteractionSet;
    use crate::lorentz::{exp0, Tangent};
    use approx::assert_relative_eq;

    fn toy_graph() -> InteractionGraph {
        // 3 users x 4 items.
        let raw: Vec<(u64, u64)> = vec![
            (0, 0),
            (0, 1),
            (1, 1),
            (1, 2),
            (1, 3),
            (2, 0),
            (2, 3),
        ];
        let set = InteractionSet::from_raw_pairs(&raw).unwrap();
        InteractionGraph::from_train(&set).unwrap()
    }

    #[test]
    fn init_params_contract() {
        let p = init_params(2, 3, 4, 7).unwrap();
        assert_eq!(p.tangent_user.rows(), 2);
        assert_eq!(p.tangent_user.cols(), 4);
        assert_eq!(p.gamma, 0.0);
        assert_eq!(p.gamma_prime, 0.0);
        assert_eq!(p.lambda, 1.0);
        assert_eq!(p.param_count(), 2 * 5 * 4 + 3);
        let q = init_params(2, 3, 4, 7).unwrap();
        assert_eq!(p, q);
        let r = init_params(2, 3, 4, 8).unwrap();
        assert_ne!(p, r);
    }

    #[test]
    fn propagate_euclidean_single_neighbor_copies() {
        let set = InteractionSet::from_raw_pairs(&[(0, 0)]).unwrap();
        let graph = InteractionGraph::from_train(&set).unwrap();
        let users = Table::from_vec(1, 2, vec![5.0, -1.0]).unwrap();
        let items = Table::from_vec(1, 2, vec![2.0, 3.0]).unwrap();
        let (hu, hi) = propagate_euclidean(&graph, &users, &items).unwrap();
        assert_eq!(hu.row(0), &[2.0, 3.0]);
        assert_eq!(hi.row(0), &[5.0, -1.0]);
    }

    #[test]
    fn propagate_euclidean_hand_computed_weighted_sum() {
        // Complete 2x2 graph: all degrees 2, every weight 1/2.
        let raw: Vec<(u64, u64)> = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
        let set = InteractionSet::from_raw_pairs(&raw).unwrap();
        let graph = InteractionGraph::from_train(&set).unwrap();
        let users = Table::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let items = Table::from_vec(2, 2, vec![2.0, 0.0, 0.0, 4.0]).unwrap();
        let (hu, hi) = propagate_euclidean(&graph, &users, &items).unwrap();
        for u in 0..2 {
            assert_relative_eq!(hu.row(u)[0], 1.0, max_relative = 1e-14);
            assert_relative_eq!(hu.row(u)[1], 2.0, max_relative = 1e-14);
        }
        for i in 0..2 {
            assert_relative_eq!(hi.row(i)[0], 0.5, max_relative = 1e-14);
            assert_relative_eq!(hi.row(i)[1], 0.5, max_relative = 1e-14);
        }
    }

    #[test]
    fn propagate_euclidean_isolated_item_is_zero() {
        // Item 1 appears only via the id universe, never in an edge.
        let set = InteractionSet::from_universe_pairs(vec![0], vec![0, 1], vec![(0, 0)]);
        let graph = InteractionGraph::from_train(&set).unwrap();
        let users = Table::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let items = Table::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (_, hi) = propagate_euclidean(&graph, &users, &items).unwrap();
        assert_eq!(hi.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn propagate_hyperbolic_single_neighbor_copies_point() {
        let set = InteractionSet::from_raw_pairs(&[(0, 0)]).unwrap();
        let graph = InteractionGraph::from_train(&set).unwrap();
        let p = exp0(&Tangent::new(vec![0.4, -0.3]).unwrap());
        let mut items = Table::zeros(1, 3);
        items.row_mut(0).copy_from_slice(p.as_slice());
        let mut users = Table::zeros(1, 3);
        users.row_mut(0).copy_from_slice(HPoint::origin(2).as_slice());
        let (hu, _) = propagate_hyperbolic(&graph, &users, &items).unwrap();
        for j in 0..3 {
            assert_relative_eq!(hu.row(0)[j], p.as_slice()[j], max_relative = 1e-12);
        }
    }

    #[test]
    fn propagate_hyperbolic_symmetric_neighbors_give_origin() {
        // One user linked to two items placed symmetrically about the origin.
        let raw: Vec<(u64, u64)> = vec![(0, 0), (0, 1)];
        let set = InteractionSet::from_raw_pairs(&raw).unwrap();
        let graph = InteractionGraph::from_train(&set).unwrap();
        let a = exp0(&Tangent::new(vec![0.8, 0.0]).unwrap());
        let b = exp0(&Tangent::new(vec![-0.8, 0.0]).unwrap());
        let mut items = Table::zeros(2, 3);
        items.row_mut(0).copy_from_slice(a.as_slice());
        items.row_mut(1).copy_from_slice(b.as_slice());
        let mut users = Table::zeros(1, 3);
        users.row_mut(0).copy_from_slice(HPoint::origin(2).as_slice());
        let (hu, _) = propagate_hyperbolic(&graph, &users, &items).unwrap();
        assert_relative_eq!(hu.row(0)[0], 1.0, epsilon = 1e-12);
        assert!(hu.row(0)[1].abs() < 1e-12);
    }

    #[test]
    fn interact_zero_scales_is_identity() {
        let hh = exp0(&Tangent::new(vec![0.3, -0.5]).unwrap());
        let hr = [0.7, 0.1];
        let (fr, fh) = interact(&hr, &hh, 0.0, 0.0).unwrap();
        assert_eq!(fr, vec![0.7, 0.1]);
        assert_eq!(fh.as_slice(), hh.as_slice());
    }

    #[test]
    fn interact_euclid_update_hand_computed() {
        // gamma = 0.5, hR = (1,0), hH = exp0((0.2,0)):
        // log0(hH) = (0.2, 0), d_R = 0.8, fR = (1 + 0.5*0.8*0.2, 0) = (1.08, 0).
        let hh = exp0(&Tangent::new(vec![0.2, 0.0]).unwrap());
        let (fr, _) = interact(&[1.0, 0.0], &hh, 0.5, 0.0).unwrap();
        assert_relative_eq!(fr[0], 1.08, max_relative = 1e-12);
        assert!(fr[1].abs() < 1e-15);
    }

    #[test]
    fn interact_zero_distance_leaves_euclid_row() {
        let hh = exp0(&Tangent::new(vec![0.4, -0.1]).unwrap());
        let l = crate::lorentz::log0(&hh);
        let (fr, _) = interact(l.as_slice(), &hh, 0.9, 0.0).unwrap();
        for j in 0..2 {
            assert_relative_eq!(fr[j], l.as_slice()[j], max_relative = 1e-10, epsilon = 1e-14);
        }
    }

    #[test]
    fn fuse_layers_means_and_centroids() {
        let mk = |e: Vec<f64>, t: Vec<f64>| {
            let mut hy = Table::zeros(1, 3);
            let p = exp0(&Tangent::new(t).unwrap());
            hy.row_mut(0).copy_from_slice(p.as_slice());
            LayerState {
                euclid_user: Table::from_vec(1, 2, e.clone()).unwrap(),
                euclid_item: Table::from_vec(1, 2, e).unwrap(),
                hyper_user: hy.clone(),
                hyper_item: hy,
                layer_index: 0,
            }
        };
        let a = mk(vec![1.0, 0.0], vec![0.5, 0.0]);
        let b = mk(vec![0.0, 1.0], vec![0.5, 0.0]);
        let fused = fuse_layers(&[a.clone(), b]).unwrap();
        assert_eq!(fused.euclid_user.row(0), &[0.5, 0.5]);
        // Identical hyperbolic rows fuse to themselves.
        for j in 0..3 {
            assert_relative_eq!(
                fused.hyper_user.row(0)[j],
                a.hyper_user.row(0)[j],
                max_relative = 1e-12
            );
        }
        // K = 0 fusion is the identity.
        let single = fuse_layers(&[a.clone()]).unwrap();
        assert_eq!(single.euclid_user, a.euclid_user);
        assert!(fuse_layers(&[]).is_err());
    }

    #[test]
    fn score_formula() {
        let mut hy = Table::zeros(1, 3);
        hy.row_mut(0).copy_from_slice(HPoint::origin(2).as_slice());
        let state = LayerState {
            euclid_user: Table::from_vec(1, 2, vec![1.0, 2.0]).unwrap(),
            euclid_item: Table::from_vec(1, 2, vec![3.0, -1.0]).unwrap(),
            hyper_user: hy.clone(),
            hyper_item: hy,
            layer_index: 0,
        };
        // lambda = 0: plain dot product.
        assert_eq!(score(&state, 0, 0, 0.0).unwrap(), 1.0);
        // Identical origin points contribute -lambda.
        assert_relative_eq!(score(&state, 0, 0, 2.0).unwrap(), 1.0 - 2.0, epsilon = 1e-15);
        assert!(score(&state, 1, 0, 0.0).is_err());
    }

    #[test]
    fn score_zero_features_origin_points_gives_minus_one() {
        let mut hy = Table::zeros(1, 3);
        hy.row_mut(0).copy_from_slice(HPoint::origin(2).as_slice());
        let state = LayerState {
            euclid_user: Table::zeros(1, 2),
            euclid_item: Table::zeros(1, 2),
            hyper_user: hy.clone(),
            hyper_item: hy,
            layer_index: 0,
        };
        assert_eq!(score(&state, 0, 0, 1.0).unwrap(), -1.0);
    }

    #[test]
    fn forward_k0_returns_raw_embeddings() {
        let graph = toy_graph();
        let params = init_params(3, 4, 5, 3).unwrap();
        let out = forward(&graph, &params, 0, AblationFlags::none()).unwrap();
        assert_eq!(out.euclid_user, params.euclid_user);
        let mut expect = Table::zeros(3, 6);
        exp0_rows(&params.tangent_user, &mut expect);
        // Fusion over a single layer renormalizes; rows stay equal to 1e-15.
        for r in 0..3 {
            for j in 0..6 {
                assert_relative_eq!(
                    out.hyper_user.row(r)[j],
                    expect.row(r)[j],
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn forward_interaction_neutral_at_zero_scales() {
        let graph = toy_graph();
        let params = init_params(3, 4, 5, 11).unwrap();
        let with = forward(&graph, &params, 2, AblationFlags::none()).unwrap();
        let without = forward(
            &graph,
            &params,
            2,
            AblationFlags {
                disable_interaction: true,
                ..AblationFlags::none()
            },
        )
        .unwrap();
        // gamma = gamma' = 0 after init: interaction must be a bitwise no-op.
        assert_eq!(with, without);
    }

    #[test]
    fn forward_hyper_rows_stay_on_manifold() {
        let graph = toy_graph();
        let mut params = init_params(3, 4, 6, 5).unwrap();
        params.gamma = 0.3;
        params.gamma_prime = 0.2;
        let out = forward(&graph, &params, 3, AblationFlags::none()).unwrap();
        for r in 0..3 {
            let row = out.hyper_user.row(r);
            assert!((k_linner(row, row) + 1.0).abs() <= 1e-8);
        }
        for r in 0..4 {
            let row = out.hyper_item.row(r);
            assert!((k_linner(row, row) + 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn forward_ablation_branches() {
        let graph = toy_graph();
        let mut params = init_params(3, 4, 4, 9).unwrap();
        params.gamma = 0.4;
        params.gamma_prime = 0.1;
        let eo = forward(
            &graph,
            &params,
            2,
            AblationFlags {
                euclidean_only: true,
                ..AblationFlags::none()
            },
        )
        .unwrap();
        for r in 0..3 {
            assert_eq!(eo.hyper_user.row(r)[0], 1.0);
            assert!(eo.hyper_user.row(r)[1..].iter().all(|&v| v == 0.0));
        }
        let ho = forward(
            &graph,
            &params,
            2,
            AblationFlags {
                hyperbolic_only: true,
                ..AblationFlags::none()
            },
        )
        .unwrap();
        assert!(ho.euclid_user.data().iter().all(|&v| v == 0.0));
        assert!(ho.euclid_item.data().iter().all(|&v| v == 0.0));
        let both = AblationFlags {
            euclidean_only: true,
            hyperbolic_only: true,
            ..AblationFlags::none()
        };
        assert!(both.validate().is_err());
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        // Relabeling users/items permutes output rows identically.
        let raw: Vec<(u64, u64)> = vec![(0, 0), (0, 1), (1, 1), (1, 2), (2, 0), (2, 2)];
        let set = InteractionSet::from_raw_pairs(&raw).unwrap();
        let graph = InteractionGraph::from_train(&set).unwrap();
        let mut params = init_params(3, 3, 3, 21).unwrap();
        params.gamma = 0.2;
        params.gamma_prime = 0.3;
        let base = forward(&graph, &params, 2, AblationFlags::none()).unwrap();

        // Permute users by sigma = [2,0,1] and items by tau = [1,2,0]:
        // new user u' = sigma^{-1}(u)... constructed directly on relabeled raw pairs.
        let sigma = [2u64, 0, 1];
        let tau = [1u64, 2, 0];
        let relabeled: Vec<(u64, u64)> = raw
            .iter()
            .map(|&(u, i)| (sigma[u as usize], tau[i as usize]))
            .collect();
        let pset = InteractionSet::from_raw_pairs(&relabeled).unwrap();
        let pgraph = InteractionGraph::from_train(&pset).unwrap();
        let mut pparams = init_params(3, 3, 3, 21).unwrap();
        pparams.gamma = 0.2;
        pparams.gamma_prime = 0.3;
        for u in 0..3 {
            pparams
                .euclid_user
                .row_mut(sigma[u] as usize)
                .copy_from_slice(params.euclid_user.row(u));
            pparams
                .tangent_user
                .row_mut(sigma[u] as usize)
                .copy_from_slice(params.tangent_user.row(u));
        }
        for i in 0..3 {
            pparams
                .euclid_item
                .row_mut(tau[i] as usize)
                .copy_from_slice(params.euclid_item.row(i));
            pparams
                .tangent_item
                .row_mut(tau[i] as usize)
                .copy_from_slice(params.tangent_item.row(i));
        }
        let permuted = forward(&pgraph, &pparams, 2, AblationFlags::none()).unwrap();
        for u in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(
                    permuted.euclid_user.row(sigma[u] as usize)[j],
                    base.euclid_user.row(u)[j],
                    max_relative = 1e-12,
                    epsilon = 1e-14
                );
            }
        }
        for i in 0..3 {
            for j in 0..4 {
                assert_relative_eq!(
                    permuted.hyper_item.row(tau[i] as usize)[j],
                    base.hyper_item.row(i)[j],
                    max_relative = 1e-12,
                    epsilon = 1e-14
                );
            }
        }
    }
}
