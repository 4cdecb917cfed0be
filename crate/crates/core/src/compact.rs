//! Compact (implicit) LABFM: implicit stencil selection, the exponential
//! coefficient family, effective wavenumbers and the per-node resolving-power
//! optimiser.
//!
//! An implicit operator at node `i` reads
//! `Σ_{q∈M_i} α_q L(φ)|_q = Σ_{j∈N_i} (φ_j − φ_i) w_j`,
//! with `α_i = 1` and `α_q = exp(−(a_x² x_qi² + a_y² y_qi²) / s_i²)`.
//! The optimiser walks `a_x` (or `a` for Laplacians) down from a near-delta
//! start in steps of 0.01 and keeps the last value for which the real part
//! of the effective wavenumber never exceeds the exact one by more than 0.5%.

use std::fmt;
use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NodeSet;
use crate::labfm::{
    basis_size, operator_on_monomials, rhs_vector_compact, rhs_vector_explicit, LocalWeights,
    MomentsMatrix, OperatorKind,
};

/// Gradient and Laplacian orders of convergence supported by the schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Explicit,
    Compact,
}

/// One of the eight discretisation schemes `a`–`h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scheme {
    label: char,
    order: usize,
    /// Implicit half-stencil count `Q_i`; 1 for explicit schemes.
    q: usize,
}

impl Scheme {
    pub const LABELS: [char; 8] = ['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h'];

    pub fn from_label(label: char) -> Result<Self> {
        let (order, q) = match label.to_ascii_lowercase() {
            'a' => (2, 1),
            'b' => (2, 3),
            'c' => (2, 5),
            'd' => (2, 7),
            'e' => (4, 1),
            'f' => (4, 5),
            'g' => (4, 7),
            'h' => (4, 9),
            other => return Err(Error::Config(format!("unknown scheme `{other}`"))),
        };
        Ok(Self {
            label: label.to_ascii_lowercase(),
            order,
            q,
        })
    }

    pub fn all() -> Vec<Scheme> {
        Self::LABELS.iter().map(|&c| Self::from_label(c).unwrap()).collect()
    }

    pub fn label(self) -> char {
        self.label
    }

    /// Order of convergence, 2 or 4.
    pub fn order(self) -> usize {
        self.order
    }

    pub fn q(self) -> usize {
        self.q
    }

    pub fn mode(self) -> Mode {
        if self.q == 1 {
            Mode::Explicit
        } else {
            Mode::Compact
        }
    }

    pub fn is_compact(self) -> bool {
        self.mode() == Mode::Compact
    }

    /// Explicit scheme of the same order.
    pub fn explicit_partner(self) -> Scheme {
        Scheme::from_label(if self.order == 2 { 'a' } else { 'e' }).unwrap()
    }

    /// Polynomial consistency: Laplacians need one degree more than gradients
    /// for the same order of convergence.
    pub fn consistency(self, kind: OperatorKind) -> usize {
        if kind.is_gradient() {
            self.order
        } else {
            self.order + 1
        }
    }

    /// Stencil scale `h / s`.
    pub fn h_over_s(self, kind: OperatorKind) -> f64 {
        match (self.order, kind.is_gradient()) {
            (2, true) => 1.2,
            (2, false) => 1.35,
            (_, true) => 1.4,
            (_, false) => 1.7,
        }
    }

    /// Nominal implicit stencil size: `Q` for gradients, `2Q − 1` for Laplacians.
    pub fn implicit_size(self, kind: OperatorKind) -> usize {
        if kind.is_gradient() {
            self.q
        } else {
            2 * self.q - 1
        }
    }

    /// Builds the neighbour lists this scheme needs for `kind`.
    pub fn prepare_nodes(self, nodes: &NodeSet, kind: OperatorKind) -> Result<NodeSet> {
        nodes.build_neighbors(self.h_over_s(kind), basis_size(self.consistency(kind)))
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label)
    }
}

/// How the exponent of the coefficient family is nondimensionalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaScaling {
    /// `exp(−(a_x² x² + a_y² y²) / s²)`: `a` is dimensionless.
    #[default]
    Nondimensional,
    /// `exp(−(a_x² x² + a_y² y²) / s)`, exactly as usually printed.
    PerSpacing,
}

impl AlphaScaling {
    fn denominator(self, s: f64) -> f64 {
        match self {
            AlphaScaling::Nondimensional => s * s,
            AlphaScaling::PerSpacing => s,
        }
    }
}

/// `α_q` for every implicit-stencil offset.
pub fn alpha_from_params(offsets: &[[f64; 2]], a_x: f64, a_y: f64, s: f64, scaling: AlphaScaling) -> Vec<f64> {
    let d = scaling.denominator(s);
    offsets
        .iter()
        .map(|r| (-(a_x * a_x * r[0] * r[0] + a_y * a_y * r[1] * r[1]) / d).exp())
        .collect()
}

/// Implicit stencil of one node with its coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactStencil {
    pub node: usize,
    pub kind: OperatorKind,
    /// `M_i`, always starting with `i` itself.
    pub members: Vec<usize>,
    /// Minimum-image offsets `r_qi`, aligned with `members`.
    pub offsets: Vec<[f64; 2]>,
    pub alphas: Vec<f64>,
    pub a_x: f64,
    pub a_y: f64,
    /// Accepted decrements of the optimised parameter.
    pub iterations: usize,
    /// Set when the optimiser fell back to the explicit scheme.
    pub fallback: bool,
}

impl CompactStencil {
    /// The trivial stencil `M_i = {i}`, `α_i = 1`.
    pub fn explicit(node: usize, kind: OperatorKind) -> Self {
        Self {
            node,
            kind,
            members: vec![node],
            offsets: vec![[0.0, 0.0]],
            alphas: vec![1.0],
            a_x: f64::INFINITY,
            a_y: f64::INFINITY,
            iterations: 0,
            fallback: false,
        }
    }

    /// `Σ_{q≠i} α_q`.
    pub fn off_centre_sum(&self) -> f64 {
        self.members
            .iter()
            .zip(&self.alphas)
            .filter(|(&q, _)| q != self.node)
            .map(|(_, a)| a)
            .sum()
    }
}

/// Picks `M_i`: node `i` plus the `Q − 1` neighbours closest to the line
/// through `i` along the derivative direction. Laplacians take the union of
/// both gradient selections.
pub fn select_implicit_stencil(nodes: &NodeSet, i: usize, kind: OperatorKind, q: usize) -> Result<Vec<usize>> {
    if q <= 1 {
        return Ok(vec![i]);
    }
    let neigh = &nodes.neighbors[i];
    if q - 1 > neigh.len() {
        return Err(Error::StencilDeficiency {
            node: i,
            found: neigh.len(),
            required: q - 1,
        });
    }
    let pick = |axis: usize| -> Vec<usize> {
        let mut ranked: Vec<(f64, f64, usize)> = neigh
            .iter()
            .map(|&j| {
                let r = nodes.offset(i, j);
                (r[axis].abs(), r[0] * r[0] + r[1] * r[1], j)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        ranked.into_iter().take(q - 1).map(|t| t.2).collect()
    };
    let mut rest = match kind {
        // Along-x derivatives use the nodes with the smallest |y_ji|.
        OperatorKind::Ddx => pick(1),
        OperatorKind::Ddy => pick(0),
        OperatorKind::Laplacian => {
            let mut u = pick(1);
            for j in pick(0) {
                if !u.contains(&j) {
                    u.push(j);
                }
            }
            u
        }
    };
    rest.sort_unstable();
    let mut members = Vec::with_capacity(rest.len() + 1);
    members.push(i);
    members.extend(rest);
    Ok(members)
}

/// Effective wavenumber of one node at `(k_x, k_y)` with its intermediates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavenumberResponse {
    pub kx: f64,
    pub ky: f64,
    /// `k_eff` for gradients, `q_eff²` for Laplacians.
    pub value: Complex64,
    /// `(γ1, γ2)` or `(γ̂1, γ̂2)`.
    pub gamma: [f64; 2],
    /// `(λ1, λ2)` or `(λ̂1, λ̂2)`.
    pub lambda: [f64; 2],
}

fn phase_sums(
    kx: f64,
    ky: f64,
    weight_offsets: &[[f64; 2]],
    weights: &[f64],
    alpha_offsets: &[[f64; 2]],
    alphas: &[f64],
) -> (f64, f64, f64, f64) {
    let mut sin_w = 0.0;
    let mut one_minus_cos_w = 0.0;
    for (r, w) in weight_offsets.iter().zip(weights) {
        let (s, c) = (kx * r[0] + ky * r[1]).sin_cos();
        sin_w += s * w;
        one_minus_cos_w += (1.0 - c) * w;
    }
    let mut sin_a = 0.0;
    let mut cos_a = 0.0;
    for (r, a) in alpha_offsets.iter().zip(alphas) {
        let (s, c) = (kx * r[0] + ky * r[1]).sin_cos();
        sin_a += s * a;
        cos_a += c * a;
    }
    (sin_w, one_minus_cos_w, sin_a, cos_a)
}

/// `k_eff = (γ1λ2 + γ2λ1 + i(γ2λ2 − γ1λ1)) / (λ1² + λ2²)`.
pub fn gradient_response(gamma1: f64, gamma2: f64, lambda1: f64, lambda2: f64) -> Option<Complex64> {
    let den = lambda1 * lambda1 + lambda2 * lambda2;
    if !(den > 0.0) {
        return None;
    }
    Some(Complex64::new(
        (gamma1 * lambda2 + gamma2 * lambda1) / den,
        (gamma2 * lambda2 - gamma1 * lambda1) / den,
    ))
}

/// `q_eff² = (γ̂1 − iγ̂2) / (λ̂1 + iλ̂2)`, i.e.
/// `(γ̂1λ̂1 − γ̂2λ̂2 − i(γ̂2λ̂1 + γ̂1λ̂2)) / (λ̂1² + λ̂2²)`.
pub fn laplacian_response(gamma1: f64, gamma2: f64, lambda1: f64, lambda2: f64) -> Option<Complex64> {
    let den = lambda1 * lambda1 + lambda2 * lambda2;
    if !(den > 0.0) {
        return None;
    }
    Some(Complex64::new(
        (gamma1 * lambda1 - gamma2 * lambda2) / den,
        -(gamma2 * lambda1 + gamma1 * lambda2) / den,
    ))
}

fn weight_offsets(nodes: &NodeSet, weights: &LocalWeights) -> Vec<[f64; 2]> {
    weights.neighbors.iter().map(|&j| nodes.offset(weights.node, j)).collect()
}

/// Effective wavenumber of a gradient operator at one node.
pub fn k_eff(
    nodes: &NodeSet,
    weights: &LocalWeights,
    stencil: &CompactStencil,
    kx: f64,
    ky: f64,
) -> Result<WavenumberResponse> {
    let offs = weight_offsets(nodes, weights);
    let (g1, g2, l1, l2) = phase_sums(kx, ky, &offs, &weights.weights, &stencil.offsets, &stencil.alphas);
    let value = gradient_response(g1, g2, l1, l2).ok_or(Error::DegenerateResponse {
        node: weights.node,
        kx,
        ky,
    })?;
    Ok(WavenumberResponse {
        kx,
        ky,
        value,
        gamma: [g1, g2],
        lambda: [l1, l2],
    })
}

/// Effective squared wavenumber of a Laplacian operator at one node.
pub fn q_eff2(
    nodes: &NodeSet,
    weights: &LocalWeights,
    stencil: &CompactStencil,
    kx: f64,
    ky: f64,
) -> Result<WavenumberResponse> {
    let offs = weight_offsets(nodes, weights);
    let (sin_w, omc_w, sin_a, cos_a) =
        phase_sums(kx, ky, &offs, &weights.weights, &stencil.offsets, &stencil.alphas);
    let value = laplacian_response(omc_w, sin_w, cos_a, sin_a).ok_or(Error::DegenerateResponse {
        node: weights.node,
        kx,
        ky,
    })?;
    Ok(WavenumberResponse {
        kx,
        ky,
        value,
        gamma: [omc_w, sin_w],
        lambda: [cos_a, sin_a],
    })
}

/// Weights and implicit stencil of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeOperator {
    pub stencil: CompactStencil,
    pub weights: LocalWeights,
}

impl NodeOperator {
    pub fn kind(&self) -> OperatorKind {
        self.weights.kind
    }

    /// `k_eff` or `q_eff²` depending on the operator kind.
    pub fn response(&self, nodes: &NodeSet, kx: f64, ky: f64) -> Result<WavenumberResponse> {
        if self.kind().is_gradient() {
            k_eff(nodes, &self.weights, &self.stencil, kx, ky)
        } else {
            q_eff2(nodes, &self.weights, &self.stencil, kx, ky)
        }
    }
}

/// Exact response an operator of `kind` should reproduce at `(k_x, k_y)`.
pub fn spectral_target(kind: OperatorKind, kx: f64, ky: f64) -> f64 {
    match kind {
        OperatorKind::Ddx => kx,
        OperatorKind::Ddy => ky,
        OperatorKind::Laplacian => kx * kx + ky * ky,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub a_init: f64,
    pub a_min: f64,
    pub step: f64,
    /// Largest accepted `Re{k_eff}/k` (or `Re{q_eff²}/q²`).
    pub bound: f64,
    /// Points per axis of the wavenumber sample grid.
    pub grid: usize,
    /// Upper bound on `Σ_{q≠i} α_q` for gradient stencils.
    pub coefficient_sum: f64,
    pub alpha_scaling: AlphaScaling,
    /// Also sample the mirrored quadrant `k_y < 0` (`k_x < 0` for y-derivatives).
    pub half_plane: bool,
    /// Also reject steps that push `Re{response}/target` below
    /// `min(0, its value at a_init)` anywhere on the grid.
    pub sign_floor: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            a_init: 5.0,
            a_min: 0.1,
            step: 0.01,
            bound: 1.005,
            grid: 16,
            coefficient_sum: 2.0,
            alpha_scaling: AlphaScaling::Nondimensional,
            half_plane: true,
            sign_floor: true,
        }
    }
}

impl OptimizerConfig {
    fn steps(&self) -> usize {
        ((self.a_init - self.a_min) / self.step + 1e-9).floor() as usize
    }

    fn param(&self, n: usize) -> f64 {
        self.a_init - n as f64 * self.step
    }
}

/// Wavenumbers checked by the optimiser, inside the Nyquist disk `|k| ≤ π/s`.
///
/// Gradients: `n` points in `(0, k_Ny]` along the derivative direction times
/// `n` points in `[0, k_Ny]` across it. Laplacians: `n × n` over the quarter
/// disk, axes included, origin excluded. With `mirror`, every point with a
/// nonzero across-axis component is repeated with that component negated
/// (Laplacians: every point with `k_x, k_y > 0`).
pub fn sample_grid(kind: OperatorKind, k_ny: f64, n: usize, mirror: bool) -> Vec<[f64; 2]> {
    let n = n.max(2);
    let limit = k_ny * k_ny * (1.0 + 1e-12);
    let mut out = Vec::new();
    match kind {
        OperatorKind::Laplacian => {
            for a in 0..n {
                for b in 0..n {
                    if a == 0 && b == 0 {
                        continue;
                    }
                    let kx = k_ny * a as f64 / (n - 1) as f64;
                    let ky = k_ny * b as f64 / (n - 1) as f64;
                    if kx * kx + ky * ky <= limit {
                        out.push([kx, ky]);
                        if mirror && kx > 0.0 && ky > 0.0 {
                            out.push([kx, -ky]);
                        }
                    }
                }
            }
        }
        _ => {
            for a in 1..=n {
                for b in 0..n {
                    let along = k_ny * a as f64 / n as f64;
                    let across = k_ny * b as f64 / (n - 1) as f64;
                    if along * along + across * across <= limit {
                        let signs: &[f64] = if mirror && across > 0.0 { &[1.0, -1.0] } else { &[1.0] };
                        for sign in signs {
                            out.push(if kind == OperatorKind::Ddx {
                                [along, sign * across]
                            } else {
                                [sign * across, along]
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Precomputed phase sums of one node so every trial `α` costs only a few
/// dot products: `w(α) = Σ_q α_q w^(q)`, with `w^(q)` the weights for the
/// right-hand side `L(X_qi)`.
struct NodeSpectra {
    kind: OperatorKind,
    targets: Vec<f64>,
    /// Per sample, per member: `Σ_j sin(k·r_j) w^(q)_j`.
    sin_w: Vec<f64>,
    /// Per sample, per member: `Σ_j (1 − cos(k·r_j)) w^(q)_j`.
    omc_w: Vec<f64>,
    sin_q: Vec<f64>,
    cos_q: Vec<f64>,
    width: usize,
}

impl NodeSpectra {
    fn new(
        nodes: &NodeSet,
        moments: &MomentsMatrix,
        kind: OperatorKind,
        offsets: &[[f64; 2]],
        samples: &[[f64; 2]],
    ) -> Result<Self> {
        let m = moments.m;
        let i = moments.node;
        let mut basis_weights = Vec::with_capacity(offsets.len());
        for r in offsets {
            let psi = moments.solve_psi(&operator_on_monomials(kind, r[0], r[1], m))?;
            basis_weights.push(moments.weights_from_psi(&psi));
        }
        let woffs: Vec<[f64; 2]> = moments.neighbors().iter().map(|&j| nodes.offset(i, j)).collect();
        let width = offsets.len();
        let mut spectra = NodeSpectra {
            kind,
            targets: Vec::with_capacity(samples.len()),
            sin_w: Vec::with_capacity(samples.len() * width),
            omc_w: Vec::with_capacity(samples.len() * width),
            sin_q: Vec::with_capacity(samples.len() * width),
            cos_q: Vec::with_capacity(samples.len() * width),
            width,
        };
        let mut sin_j = vec![0.0; woffs.len()];
        let mut omc_j = vec![0.0; woffs.len()];
        for &[kx, ky] in samples {
            spectra.targets.push(spectral_target(kind, kx, ky));
            for (k, r) in woffs.iter().enumerate() {
                let (s, c) = (kx * r[0] + ky * r[1]).sin_cos();
                sin_j[k] = s;
                omc_j[k] = 1.0 - c;
            }
            for q in 0..width {
                let w = &basis_weights[q];
                spectra.sin_w.push(sin_j.iter().zip(w).map(|(a, b)| a * b).sum());
                spectra.omc_w.push(omc_j.iter().zip(w).map(|(a, b)| a * b).sum());
                let (s, c) = (kx * offsets[q][0] + ky * offsets[q][1]).sin_cos();
                spectra.sin_q.push(s);
                spectra.cos_q.push(c);
            }
        }
        Ok(spectra)
    }

    /// Smallest and largest `Re{response}/target` over the samples, or
    /// `None` when the response is undefined somewhere.
    fn ratio_range(&self, alphas: &[f64]) -> Option<(f64, f64)> {
        let dot = |v: &[f64]| -> f64 { v.iter().zip(alphas).map(|(a, b)| a * b).sum() };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (s, &target) in self.targets.iter().enumerate() {
            let span = s * self.width..(s + 1) * self.width;
            let sin_w = dot(&self.sin_w[span.clone()]);
            let omc_w = dot(&self.omc_w[span.clone()]);
            let sin_a = dot(&self.sin_q[span.clone()]);
            let cos_a = dot(&self.cos_q[span]);
            let value = if self.kind.is_gradient() {
                gradient_response(sin_w, omc_w, sin_a, cos_a)
            } else {
                laplacian_response(omc_w, sin_w, cos_a, sin_a)
            }?;
            let r = value.re / target;
            if !r.is_finite() {
                return None;
            }
            lo = lo.min(r);
            hi = hi.max(r);
        }
        Some((lo, hi))
    }
}

/// Largest `Re{response}/target` of a node operator over `samples`.
pub fn max_response_ratio(nodes: &NodeSet, op: &NodeOperator, samples: &[[f64; 2]]) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for &[kx, ky] in samples {
        let r = op.response(nodes, kx, ky)?;
        worst = worst.max(r.value.re / spectral_target(op.kind(), kx, ky));
    }
    Ok(worst)
}

/// Solves `Σ_{q≠i} c_q exp(−t Y_q) = target` for `t ≥ t_min` (the across-axis
/// parameter squared). Returns `None` when no finite `t` reaches the target.
fn across_parameter(c: &[f64], y: &[f64], t_min: f64, target: f64, warm: f64) -> Option<f64> {
    let sum = |t: f64| -> (f64, f64) {
        let mut s = 0.0;
        let mut ds = 0.0;
        for (ci, yi) in c.iter().zip(y) {
            let e = ci * (-t * yi).exp();
            s += e;
            ds -= yi * e;
        }
        (s, ds)
    };
    if sum(t_min).0 <= target {
        return Some(t_min);
    }
    // Newton on a convex decreasing function converges monotonically from the left.
    let mut t = warm.max(t_min);
    if sum(t).0 < target {
        t = t_min;
    }
    for _ in 0..200 {
        let (s, ds) = sum(t);
        if s <= target {
            return Some(t);
        }
        if ds >= 0.0 || !ds.is_finite() {
            return None;
        }
        let next = t - (s - target) / ds;
        if !next.is_finite() || next > 1e16 {
            return None;
        }
        if next <= t * (1.0 + 1e-15) {
            t = t * (1.0 + 1e-12) + 1e-300;
        } else {
            t = next;
        }
    }
    // Final nudges so the constraint holds exactly.
    for _ in 0..64 {
        if sum(t).0 <= target {
            return Some(t);
        }
        t *= 1.0 + 1e-10;
    }
    None
}

struct Candidate {
    a_along: f64,
    a_across: f64,
    alphas: Vec<f64>,
}

fn explicit_fallback(moments: &MomentsMatrix, kind: OperatorKind) -> Result<NodeOperator> {
    let weights = moments.solve_weights(kind, &rhs_vector_explicit(kind, moments.m))?;
    let mut stencil = CompactStencil::explicit(moments.node, kind);
    stencil.fallback = true;
    Ok(NodeOperator { stencil, weights })
}

/// Runs the decrement loop for one node and kind on a prepared node set.
pub fn optimize_node(
    nodes: &NodeSet,
    i: usize,
    scheme: Scheme,
    kind: OperatorKind,
    cfg: &OptimizerConfig,
) -> Result<NodeOperator> {
    let m = scheme.consistency(kind);
    let moments = MomentsMatrix::build(nodes, i, m)?;
    if !scheme.is_compact() {
        let weights = moments.solve_weights(kind, &rhs_vector_explicit(kind, m))?;
        return Ok(NodeOperator {
            stencil: CompactStencil::explicit(i, kind),
            weights,
        });
    }
    let members = select_implicit_stencil(nodes, i, kind, scheme.q())?;
    let offsets: Vec<[f64; 2]> = members.iter().map(|&q| nodes.offset(i, q)).collect();
    let s = nodes.spacing[i];
    let k_ny = std::f64::consts::PI / s;
    let samples = sample_grid(kind, k_ny, cfg.grid, cfg.half_plane);
    let spectra = match NodeSpectra::new(nodes, &moments, kind, &offsets, &samples) {
        Ok(sp) => sp,
        Err(_) => return explicit_fallback(&moments, kind),
    };

    // Along/across components relative to the derivative direction.
    let (along_axis, across_axis) = match kind {
        OperatorKind::Ddy => (1, 0),
        _ => (0, 1),
    };
    let denom = match cfg.alpha_scaling {
        AlphaScaling::Nondimensional => s * s,
        AlphaScaling::PerSpacing => s,
    };
    let along2: Vec<f64> = offsets.iter().map(|r| r[along_axis] * r[along_axis] / denom).collect();
    let across2: Vec<f64> = offsets.iter().map(|r| r[across_axis] * r[across_axis] / denom).collect();

    let t_min = cfg.a_min * cfg.a_min;
    let mut warm = t_min;
    let mut candidate = |a: f64| -> Option<Candidate> {
        if kind.is_gradient() {
            let c: Vec<f64> = along2.iter().skip(1).map(|x| (-a * a * x).exp()).collect();
            let t = across_parameter(&c, &across2[1..], t_min, cfg.coefficient_sum, warm)?;
            warm = t;
            let a_across = t.sqrt();
            let mut alphas = Vec::with_capacity(offsets.len());
            alphas.push(1.0);
            for k in 1..offsets.len() {
                alphas.push((-(a * a * along2[k] + t * across2[k])).exp());
            }
            Some(Candidate {
                a_along: a,
                a_across,
                alphas,
            })
        } else {
            let mut alphas = Vec::with_capacity(offsets.len());
            alphas.push(1.0);
            for k in 1..offsets.len() {
                alphas.push((-(a * a * (along2[k] + across2[k]))).exp());
            }
            Some(Candidate {
                a_along: a,
                a_across: a,
                alphas,
            })
        }
    };

    let mut accepted: Vec<Candidate> = Vec::new();
    let mut n = 0usize;
    let first = candidate(cfg.param(0));
    let floor = match first.as_ref().and_then(|c| spectra.ratio_range(&c.alphas)) {
        Some((lo, hi)) if hi <= cfg.bound => {
            if cfg.sign_floor {
                lo.min(0.0)
            } else {
                f64::NEG_INFINITY
            }
        }
        _ => return explicit_fallback(&moments, kind),
    };
    accepted.push(first.expect("checked above"));
    let admissible = |alphas: &[f64]| matches!(spectra.ratio_range(alphas), Some((lo, hi)) if hi <= cfg.bound && lo >= floor);
    while n < cfg.steps() {
        let Some(c) = candidate(cfg.param(n + 1)) else {
            break;
        };
        if !admissible(&c.alphas) {
            break;
        }
        n += 1;
        accepted.push(c);
    }

    // Recompute the weights directly and confirm the bound; back off if
    // rounding in the superposed check let a marginal step through.
    let probe = |stencil_alphas: &[f64]| -> Result<LocalWeights> {
        moments.solve_weights(kind, &rhs_vector_compact(kind, m, &offsets, stencil_alphas))
    };
    while let Some(c) = accepted.pop() {
        let weights = match probe(&c.alphas) {
            Ok(w) => w,
            Err(_) => continue,
        };
        let (a_x, a_y) = if along_axis == 0 {
            (c.a_along, c.a_across)
        } else {
            (c.a_across, c.a_along)
        };
        let op = NodeOperator {
            stencil: CompactStencil {
                node: i,
                kind,
                members: members.clone(),
                offsets: offsets.clone(),
                alphas: c.alphas,
                a_x,
                a_y,
                iterations: accepted.len(),
                fallback: false,
            },
            weights,
        };
        if max_response_ratio(nodes, &op, &samples)? <= cfg.bound {
            return Ok(op);
        }
    }
    explicit_fallback(&moments, kind)
}

/// Gradient optimiser (`kind` must be `Ddx` or `Ddy`).
pub fn optimize_gradient_coeffs(
    nodes: &NodeSet,
    i: usize,
    scheme: Scheme,
    kind: OperatorKind,
    cfg: &OptimizerConfig,
) -> Result<NodeOperator> {
    if !kind.is_gradient() {
        return Err(Error::Config("gradient optimiser called with a Laplacian".into()));
    }
    optimize_node(nodes, i, scheme, kind, cfg)
}

/// Laplacian optimiser (`a_x = a_y`, no coefficient-sum constraint).
pub fn optimize_laplacian_coeffs(
    nodes: &NodeSet,
    i: usize,
    scheme: Scheme,
    cfg: &OptimizerConfig,
) -> Result<NodeOperator> {
    optimize_node(nodes, i, scheme, OperatorKind::Laplacian, cfg)
}

/// Per-node operators for a whole node set. Dirichlet nodes carry no stencil.
#[derive(Debug, Clone)]
pub struct OperatorStencils {
    pub scheme: Scheme,
    pub kind: OperatorKind,
    pub nodes: Vec<Option<NodeOperator>>,
}

impl OperatorStencils {
    /// Nodes where the optimiser fell back to explicit weights.
    pub fn fallbacks(&self) -> usize {
        self.nodes.iter().flatten().filter(|op| op.stencil.fallback).count()
    }

    /// Optimiser trace: `i,kind,a_x,a_y,iterations,fallback_flag`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("i,kind,a_x,a_y,iterations,fallback_flag\n");
        for op in self.nodes.iter().flatten() {
            let st = &op.stencil;
            let _ = writeln!(
                out,
                "{},{},{:.16e},{:.16e},{},{}",
                st.node,
                st.kind,
                st.a_x,
                st.a_y,
                st.iterations,
                u8::from(st.fallback)
            );
        }
        out
    }
}

/// Builds weights and implicit stencils for every interior node. `nodes` must
/// already carry the neighbour lists for `(scheme, kind)`.
pub fn build_stencils(
    nodes: &NodeSet,
    scheme: Scheme,
    kind: OperatorKind,
    cfg: &OptimizerConfig,
) -> Result<OperatorStencils> {
    let ops: Result<Vec<Option<NodeOperator>>> = (0..nodes.len())
        .into_par_iter()
        .map(|i| {
            if nodes.is_boundary(i) {
                Ok(None)
            } else {
                optimize_node(nodes, i, scheme, kind, cfg).map(Some)
            }
        })
        .collect();
    Ok(OperatorStencils {
        scheme,
        kind,
        nodes: ops?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_nodes, DomainSpec, NodeSet, NodeTag};

    #[test]
    fn scheme_table() {
        let sizes: Vec<(usize, usize, Mode)> = Scheme::all()
            .into_iter()
            .map(|s| (s.order(), s.q(), s.mode()))
            .collect();
        assert_eq!(
            sizes,
            vec![
                (2, 1, Mode::Explicit),
                (2, 3, Mode::Compact),
                (2, 5, Mode::Compact),
                (2, 7, Mode::Compact),
                (4, 1, Mode::Explicit),
                (4, 5, Mode::Compact),
                (4, 7, Mode::Compact),
                (4, 9, Mode::Compact),
            ]
        );
        let h = Scheme::from_label('h').unwrap();
        assert_eq!(h.implicit_size(OperatorKind::Ddx), 9);
        assert_eq!(h.implicit_size(OperatorKind::Laplacian), 17);
        assert_eq!(Scheme::from_label('a').unwrap().h_over_s(OperatorKind::Ddx), 1.2);
        assert_eq!(Scheme::from_label('e').unwrap().h_over_s(OperatorKind::Laplacian), 1.7);
        assert_eq!(Scheme::from_label('b').unwrap().consistency(OperatorKind::Laplacian), 3);
        assert!(Scheme::from_label('z').is_err());
    }

    #[test]
    fn alpha_examples() {
        let a = alpha_from_params(&[[0.0, 0.0]], 3.0, 2.0, 0.05, AlphaScaling::Nondimensional);
        assert_eq!(a, vec![1.0]);
        let printed = alpha_from_params(&[[0.05, 0.0]], 1.0, 1.0, 0.05, AlphaScaling::PerSpacing);
        assert!((printed[0] - 0.951_229_424_500_714).abs() < 1e-12);
        let nondim = alpha_from_params(&[[0.05, 0.0]], 1.0, 1.0, 0.05, AlphaScaling::Nondimensional);
        assert!((nondim[0] - (-1.0f64).exp()).abs() < 1e-15);
        let steep = alpha_from_params(&[[0.05, 0.01], [0.0, 0.04]], 60.0, 60.0, 0.05, AlphaScaling::Nondimensional);
        assert!(steep.iter().all(|&v| v < 1e-100));
    }

    /// Figure-style configuration: ten scattered neighbours around the origin.
    fn hand_cloud() -> NodeSet {
        let pts = [
            [0.5, 0.5],
            [0.5 + 0.22, 0.5 + 0.02],
            [0.5 + 0.06, 0.5 - 0.01],
            [0.5 - 0.05, 0.5 - 0.035],
            [0.5 - 0.17, 0.5 + 0.025],
            [0.5 + 0.03, 0.5 + 0.17],
            [0.5 + 0.02, 0.5 - 0.22],
            [0.5 - 0.03, 0.5 - 0.14],
            [0.5 - 0.005, 0.5 + 0.13],
            [0.5 + 0.15, 0.5 + 0.07],
            [0.5 - 0.14, 0.5 + 0.08],
        ];
        let domain = DomainSpec::unit_periodic();
        let mut ns = NodeSet::from_positions(domain, pts.to_vec(), vec![NodeTag::Interior; pts.len()], 0).unwrap();
        ns.neighbors[0] = (1..pts.len()).collect();
        ns
    }

    #[test]
    fn implicit_stencil_selection() {
        let ns = hand_cloud();
        assert_eq!(select_implicit_stencil(&ns, 0, OperatorKind::Ddx, 1).unwrap(), vec![0]);
        // Smallest |y|: nodes 2 (0.01), 1 (0.02), 4 (0.025), 3 (0.035).
        assert_eq!(select_implicit_stencil(&ns, 0, OperatorKind::Ddx, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        // Smallest |x|: 8, 6, then 7 and 5 tie on |x| and 7 is closer.
        let y = select_implicit_stencil(&ns, 0, OperatorKind::Ddy, 5).unwrap();
        assert_eq!(y, vec![0, 5, 6, 7, 8]);
        let lap = select_implicit_stencil(&ns, 0, OperatorKind::Laplacian, 5).unwrap();
        assert_eq!(lap.len(), 9);
        assert_eq!(lap[0], 0);
        assert!(select_implicit_stencil(&ns, 0, OperatorKind::Ddx, 12).is_err());
    }

    #[test]
    fn tie_breaking_prefers_closer_then_lower_index() {
        let pts = [[0.5, 0.5], [0.7, 0.51], [0.6, 0.49], [0.4, 0.49], [0.5, 0.7]];
        let mut ns = NodeSet::from_positions(
            DomainSpec::unit_periodic(),
            pts.to_vec(),
            vec![NodeTag::Interior; 5],
            0,
        )
        .unwrap();
        ns.neighbors[0] = vec![1, 2, 3, 4];
        // All three candidates tie on |y| = 0.01; 2 and 3 are closer than 1.
        assert_eq!(select_implicit_stencil(&ns, 0, OperatorKind::Ddx, 3).unwrap(), vec![0, 2, 3]);
    }

    #[test]
    fn response_formulas_match_direct_complex_division() {
        let ns = generate_nodes(&DomainSpec::unit_periodic(), 1.0 / 20.0, 5)
            .unwrap()
            .build_neighbors(1.35, 9)
            .unwrap();
        let i = 12;
        let members = select_implicit_stencil(&ns, i, OperatorKind::Laplacian, 3).unwrap();
        let offsets: Vec<_> = members.iter().map(|&q| ns.offset(i, q)).collect();
        let alphas = alpha_from_params(&offsets, 1.3, 0.9, ns.spacing[i], AlphaScaling::Nondimensional);
        for kind in OperatorKind::ALL {
            let m = 3;
            let mm = MomentsMatrix::build(&ns, i, m).unwrap();
            let w = mm.solve_weights(kind, &rhs_vector_compact(kind, m, &offsets, &alphas)).unwrap();
            let st = CompactStencil {
                node: i,
                kind,
                members: members.clone(),
                offsets: offsets.clone(),
                alphas: alphas.clone(),
                a_x: 1.3,
                a_y: 0.9,
                iterations: 0,
                fallback: false,
            };
            let op = NodeOperator { stencil: st, weights: w };
            for &(kx, ky) in &[(17.0, 5.0), (40.0, -22.0), (3.0, 31.0)] {
                // Plane wave e^{ik·r}: Σ_q α_q e^{ik·r_q} L = Σ_j (e^{ik·r_j} − 1) w_j.
                let mut lhs = Complex64::new(0.0, 0.0);
                for (r, a) in offsets.iter().zip(&alphas) {
                    lhs += a * Complex64::new(0.0, kx * r[0] + ky * r[1]).exp();
                }
                let mut rhs = Complex64::new(0.0, 0.0);
                for (&j, wj) in op.weights.neighbors.iter().zip(&op.weights.weights) {
                    let r = ns.offset(i, j);
                    rhs += wj * (Complex64::new(0.0, kx * r[0] + ky * r[1]).exp() - 1.0);
                }
                let ratio = rhs / lhs;
                // Gradients: L e^{ik·r} = i k_eff; Laplacian: L e^{ik·r} = −q_eff².
                let expect = if kind.is_gradient() {
                    ratio / Complex64::new(0.0, 1.0)
                } else {
                    -ratio
                };
                let got = op.response(&ns, kx, ky).unwrap().value;
                assert!((got - expect).norm() <= 1e-9 * expect.norm().max(1.0), "{kind} {got} {expect}");
            }
        }
    }

    #[test]
    fn response_vanishes_at_origin_and_is_accurate_at_small_k() {
        let ns = generate_nodes(&DomainSpec::unit_periodic(), 1.0 / 30.0, 8).unwrap();
        let scheme = Scheme::from_label('a').unwrap();
        for kind in [OperatorKind::Ddx, OperatorKind::Laplacian] {
            let prepared = scheme.prepare_nodes(&ns, kind).unwrap();
            let op = optimize_node(&prepared, 40, scheme, kind, &OptimizerConfig::default()).unwrap();
            let zero = op.response(&prepared, 0.0, 0.0).unwrap().value;
            assert_eq!(zero, Complex64::new(0.0, 0.0));
            let k = 0.001 * std::f64::consts::PI / prepared.spacing[40];
            let r = op.response(&prepared, k, 0.0).unwrap().value.re;
            let target = spectral_target(kind, k, 0.0);
            assert!((r / target - 1.0).abs() < 1e-4, "{kind}: {}", r / target);
        }
    }

    #[test]
    fn sample_grids_stay_inside_the_nyquist_disk() {
        let kny = 10.0;
        for kind in OperatorKind::ALL {
            let g = sample_grid(kind, kny, 16, false);
            assert!(!g.is_empty());
            assert!(g.iter().all(|k| k[0] * k[0] + k[1] * k[1] <= kny * kny * (1.0 + 1e-9)));
            assert!(g.iter().all(|k| spectral_target(kind, k[0], k[1]) > 0.0));
        }
        assert!(sample_grid(OperatorKind::Laplacian, kny, 16, false).contains(&[kny, 0.0]));
        assert!(sample_grid(OperatorKind::Ddy, kny, 16, false).iter().all(|k| k[1] > 0.0));
        for kind in OperatorKind::ALL {
            let half = sample_grid(kind, kny, 16, false);
            let full = sample_grid(kind, kny, 16, true);
            let across = if kind == OperatorKind::Ddy { 0 } else { 1 };
            // (0, k_y) and (0, -k_y) give conjugate Laplacian responses
            let mirrored = |k: &&[f64; 2]| k[across] != 0.0 && (kind.is_gradient() || k[0] != 0.0);
            assert_eq!(full.len(), half.len() + half.iter().filter(mirrored).count());
            for k in half.iter().filter(mirrored) {
                let mut m = *k;
                m[across] = -m[across];
                assert!(full.contains(&m));
            }
            assert!(full.iter().all(|k| spectral_target(kind, k[0], k[1]) > 0.0));
        }
    }

    #[test]
    fn across_parameter_hits_the_target() {
        let c = [0.9, 0.8, 0.7, 0.6];
        let y = [0.1, 0.5, 1.0, 2.0];
        let t = across_parameter(&c, &y, 0.01, 2.0, 0.01).unwrap();
        let s: f64 = c.iter().zip(&y).map(|(ci, yi)| ci * (-t * yi).exp()).sum();
        assert!(s <= 2.0 && s > 2.0 - 1e-9, "{s}");
        // Already below the target at the floor.
        assert_eq!(across_parameter(&[0.1, 0.2], &[1.0, 1.0], 0.01, 2.0, 0.5), Some(0.01));
        // Zero across-offsets cannot be suppressed.
        assert_eq!(across_parameter(&[0.9, 0.9, 0.9], &[0.0, 0.0, 0.0], 0.01, 2.0, 0.01), None);
    }

    #[test]
    fn optimised_nodes_satisfy_invariants() {
        let ns = generate_nodes(&DomainSpec::unit_periodic(), 1.0 / 20.0, 21).unwrap();
        let cfg = OptimizerConfig::default();
        for (label, kind) in [('d', OperatorKind::Ddx), ('c', OperatorKind::Ddy), ('f', OperatorKind::Laplacian)] {
            let scheme = Scheme::from_label(label).unwrap();
            let prepared = scheme.prepare_nodes(&ns, kind).unwrap();
            let samples = sample_grid(kind, std::f64::consts::PI / prepared.spacing[0], cfg.grid, cfg.half_plane);
            let ops = build_stencils(&prepared, scheme, kind, &cfg).unwrap();
            for op in ops.nodes.iter().flatten() {
                let st = &op.stencil;
                assert_eq!(st.alphas[0], 1.0);
                assert!(st.alphas.iter().all(|&a| a > 0.0 && a <= 1.0));
                if st.fallback {
                    continue;
                }
                if kind.is_gradient() {
                    assert!(st.off_centre_sum() <= 2.0);
                } else {
                    assert_eq!(st.a_x, st.a_y);
                }
                assert!(max_response_ratio(&prepared, op, &samples).unwrap() <= cfg.bound);
            }
            assert!(ops.fallbacks() < ops.nodes.len());
            let trace = ops.trace_csv();
            assert_eq!(trace.lines().count(), ops.nodes.len() + 1);
        }
    }

    #[test]
    fn reflection_swaps_x_and_y_operators() {
        let ns = generate_nodes(&DomainSpec::unit_periodic(), 1.0 / 20.0, 31).unwrap();
        let mirrored = NodeSet::from_positions(
            ns.domain.clone(),
            ns.positions.iter().map(|p| [p[1], p[0]]).collect(),
            ns.tags.clone(),
            ns.seed,
        )
        .unwrap();
        let scheme = Scheme::from_label('c').unwrap();
        let cfg = OptimizerConfig::default();
        let a = scheme.prepare_nodes(&ns, OperatorKind::Ddx).unwrap();
        let b = scheme.prepare_nodes(&mirrored, OperatorKind::Ddy).unwrap();
        for i in (0..ns.len()).step_by(7) {
            let x = optimize_node(&a, i, scheme, OperatorKind::Ddx, &cfg).unwrap();
            let y = optimize_node(&b, i, scheme, OperatorKind::Ddy, &cfg).unwrap();
            assert_eq!(x.stencil.members, y.stencil.members);
            assert_eq!(x.stencil.iterations, y.stencil.iterations);
            assert_eq!(x.stencil.fallback, y.stencil.fallback);
            if !x.stencil.fallback {
                assert!((x.stencil.a_x - y.stencil.a_y).abs() < 1e-9);
                assert!((x.stencil.a_y - y.stencil.a_x).abs() < 1e-9);
            }
            for (p, q) in x.stencil.alphas.iter().zip(&y.stencil.alphas) {
                assert!((p - q).abs() < 1e-9);
            }
            for (p, q) in x.weights.weights.iter().zip(&y.weights.weights) {
                assert!((p - q).abs() <= 1e-8 * p.abs().max(1.0));
            }
        }
    }
}
