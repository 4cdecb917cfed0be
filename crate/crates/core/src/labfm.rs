//! Local LABFM machinery: monomial and ABF vectors, the moments matrix and
//! the per-node weight solve.
//!
//! Monomial slots are graded-lexicographic with factorial scaling,
//! `[x, y, x²/2, xy, y²/2, x³/6, x²y/2, xy²/2, y³/6, ...]`, so slot `(a, b)`
//! holds `x^a y^b / (a! b!)`. The ABF paired with slot `(a, b)` is
//! `He_a(x/h) He_b(y/h) W(|r|/h)`, where `He_n` are the probabilists'
//! Hermite polynomials and `W` is the Wendland C2 kernel with support `2h`.

use std::fmt;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NodeSet;

/// Local systems with a 1-norm condition estimate above this are rejected.
pub const MAX_CONDITION: f64 = 1e14;
/// Relative residual accepted from the preconditioned local solve.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Ddx,
    Ddy,
    Laplacian,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 3] = [OperatorKind::Ddx, OperatorKind::Ddy, OperatorKind::Laplacian];

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorKind::Ddx => "ddx",
            OperatorKind::Ddy => "ddy",
            OperatorKind::Laplacian => "laplacian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ddx" => Some(OperatorKind::Ddx),
            "ddy" => Some(OperatorKind::Ddy),
            "laplacian" | "lap" => Some(OperatorKind::Laplacian),
            _ => None,
        }
    }

    pub fn is_gradient(self) -> bool {
        !matches!(self, OperatorKind::Laplacian)
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Polynomial consistency order `m` and the matching basis size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Consistency {
    m: usize,
}

impl Consistency {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("consistency order must be at least 1".into()));
        }
        Ok(Self { m })
    }

    pub fn order(self) -> usize {
        self.m
    }

    /// `p = (m² + 3m) / 2`.
    pub fn basis_size(self) -> usize {
        basis_size(self.m)
    }
}

pub fn basis_size(m: usize) -> usize {
    (m * m + 3 * m) / 2
}

/// Exponents `(a, b)` of every slot, in storage order.
pub fn slot_exponents(m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(basis_size(m));
    for n in 1..=m {
        for b in 0..=n {
            out.push((n - b, b));
        }
    }
    out
}

/// Position of `x^a y^b` in the slot ordering.
pub fn slot_index(a: usize, b: usize) -> usize {
    let n = a + b;
    debug_assert!(n >= 1);
    n * (n + 1) / 2 - 1 + b
}

fn factorials(m: usize) -> Vec<f64> {
    let mut f = vec![1.0; m + 1];
    for k in 1..=m {
        f[k] = f[k - 1] * k as f64;
    }
    f
}

fn powers(v: f64, m: usize) -> Vec<f64> {
    let mut p = vec![1.0; m + 1];
    for k in 1..=m {
        p[k] = p[k - 1] * v;
    }
    p
}

/// `X(dx, dy)`: slot `(a, b)` holds `dx^a dy^b / (a! b!)`.
pub fn monomial_vector(dx: f64, dy: f64, m: usize) -> Vec<f64> {
    let fact = factorials(m);
    let px = powers(dx, m);
    let py = powers(dy, m);
    slot_exponents(m)
        .into_iter()
        .map(|(a, b)| px[a] * py[b] / (fact[a] * fact[b]))
        .collect()
}

/// Probabilists' Hermite polynomials `He_0..=He_n` at `x`.
pub fn hermite_he(x: f64, n: usize) -> Vec<f64> {
    let mut he = vec![1.0; n + 1];
    if n >= 1 {
        he[1] = x;
    }
    for k in 1..n {
        he[k + 1] = x * he[k] - k as f64 * he[k - 1];
    }
    he
}

/// Wendland C2 kernel (2D, unnormalised) at `q = |r| / h`, support `q < 2`.
pub fn wendland_c2(q: f64) -> f64 {
    if q >= 2.0 {
        return 0.0;
    }
    let t = 1.0 - 0.5 * q;
    t * t * t * t * (2.0 * q + 1.0)
}

/// ABF vector at offset `(dx, dy)` for stencil scale `h`.
pub fn abf_vector(dx: f64, dy: f64, h: f64, m: usize) -> Vec<f64> {
    let qx = dx / h;
    let qy = dy / h;
    let w = wendland_c2((qx * qx + qy * qy).sqrt());
    if w == 0.0 {
        return vec![0.0; basis_size(m)];
    }
    let hx = hermite_he(qx, m);
    let hy = hermite_he(qy, m);
    slot_exponents(m)
        .into_iter()
        .map(|(a, b)| hx[a] * hy[b] * w)
        .collect()
}

/// `L` applied analytically to every monomial slot, evaluated at `(dx, dy)`.
pub fn operator_on_monomials(kind: OperatorKind, dx: f64, dy: f64, m: usize) -> Vec<f64> {
    let fact = factorials(m);
    let px = powers(dx, m);
    let py = powers(dy, m);
    let term = |a: usize, b: usize| px[a] * py[b] / (fact[a] * fact[b]);
    slot_exponents(m)
        .into_iter()
        .map(|(a, b)| match kind {
            OperatorKind::Ddx => {
                if a >= 1 {
                    term(a - 1, b)
                } else {
                    0.0
                }
            }
            OperatorKind::Ddy => {
                if b >= 1 {
                    term(a, b - 1)
                } else {
                    0.0
                }
            }
            OperatorKind::Laplacian => {
                let mut v = 0.0;
                if a >= 2 {
                    v += term(a - 2, b);
                }
                if b >= 2 {
                    v += term(a, b - 2);
                }
                v
            }
        })
        .collect()
}

/// `C^d`: unit entries on the derivative slots that make up `L`.
pub fn rhs_vector_explicit(kind: OperatorKind, m: usize) -> Vec<f64> {
    operator_on_monomials(kind, 0.0, 0.0, m)
}

/// `C̃^d = Σ_q α_q L(X_qi)` for implicit-stencil offsets `r_qi`.
///
/// With `α` the Kronecker delta this returns `rhs_vector_explicit` bit for bit.
pub fn rhs_vector_compact(
    kind: OperatorKind,
    m: usize,
    offsets: &[[f64; 2]],
    alphas: &[f64],
) -> Vec<f64> {
    assert_eq!(offsets.len(), alphas.len());
    let mut acc = vec![0.0; basis_size(m)];
    for (r, &alpha) in offsets.iter().zip(alphas) {
        let l = operator_on_monomials(kind, r[0], r[1], m);
        for (c, v) in acc.iter_mut().zip(l) {
            *c += alpha * v;
        }
    }
    acc
}

/// Preconditioned moments matrix of one node, factorised once and reused for
/// every right-hand side.
///
/// Row `a` is expressed in `h`-nondimensional monomials (equivalently, row
/// `a` of `Σ X ⊗ W` is divided by `h^deg(a)`), then column `b` is divided by
/// its largest magnitude.
#[derive(Debug, Clone)]
pub struct MomentsMatrix {
    pub node: usize,
    pub m: usize,
    /// Preconditioned `p × p` matrix.
    pub matrix: DMatrix<f64>,
    /// Factor applied to entry `a` of any right-hand side, `h^-deg(a)`.
    pub row_scale: Vec<f64>,
    /// Column scales; `Ψ = diag(col_scale) z`.
    pub col_scale: Vec<f64>,
    /// 1-norm condition estimate of `matrix`.
    pub condition: f64,
    neighbors: Vec<usize>,
    /// ABF vectors `W_ji`, one row of length `p` per neighbour.
    abf: Vec<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl MomentsMatrix {
    pub fn build(nodes: &NodeSet, i: usize, m: usize) -> Result<Self> {
        let p = basis_size(m);
        let neigh = &nodes.neighbors[i];
        if neigh.len() <= p {
            return Err(Error::StencilDeficiency {
                node: i,
                found: neigh.len(),
                required: p,
            });
        }
        let h = nodes.h[i];
        let mut abf = Vec::with_capacity(neigh.len() * p);
        let mut mat = DMatrix::<f64>::zeros(p, p);
        for &j in neigh {
            let [dx, dy] = nodes.offset(i, j);
            let x = monomial_vector(dx / h, dy / h, m);
            let w = abf_vector(dx, dy, h, m);
            for a in 0..p {
                if x[a] == 0.0 {
                    continue;
                }
                for b in 0..p {
                    mat[(a, b)] += x[a] * w[b];
                }
            }
            abf.extend_from_slice(&w);
        }
        let row_scale: Vec<f64> = slot_exponents(m)
            .into_iter()
            .map(|(a, b)| h.powi(-((a + b) as i32)))
            .collect();
        let mut col_scale = vec![1.0; p];
        for b in 0..p {
            let mx = mat.column(b).amax();
            if mx > 0.0 && mx.is_finite() {
                col_scale[b] = 1.0 / mx;
                for a in 0..p {
                    mat[(a, b)] *= col_scale[b];
                }
            }
        }
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::LocalSolve {
                node: i,
                reason: "non-finite moments matrix".into(),
            });
        }
        let lu = mat.clone().lu();
        let inverse = lu.try_inverse().ok_or_else(|| Error::LocalSolve {
            node: i,
            reason: "singular moments matrix".into(),
        })?;
        let condition = one_norm(&mat) * one_norm(&inverse);
        if !(condition <= MAX_CONDITION) {
            return Err(Error::IllConditioned { node: i, condition });
        }
        Ok(Self {
            node: i,
            m,
            matrix: mat,
            row_scale,
            col_scale,
            condition,
            neighbors: neigh.clone(),
            abf,
            lu,
        })
    }

    pub fn basis_size(&self) -> usize {
        self.row_scale.len()
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    /// ABF vector of the `k`-th neighbour.
    pub fn abf_row(&self, k: usize) -> &[f64] {
        let p = self.basis_size();
        &self.abf[k * p..(k + 1) * p]
    }

    /// The unpreconditioned `Σ_j X_ji ⊗ W_ji`, rebuilt from the stored scales.
    pub fn physical_matrix(&self) -> DMatrix<f64> {
        let p = self.basis_size();
        DMatrix::from_fn(p, p, |a, b| self.matrix[(a, b)] / (self.row_scale[a] * self.col_scale[b]))
    }

    /// Solves `M Ψ = C` and returns `Ψ`, checking the preconditioned residual.
    pub fn solve_psi(&self, c: &[f64]) -> Result<Vec<f64>> {
        let p = self.basis_size();
        if c.len() != p {
            return Err(Error::Dimension(format!(
                "right-hand side has length {}, expected {p}",
                c.len()
            )));
        }
        let rhs = DVector::from_iterator(p, c.iter().zip(&self.row_scale).map(|(v, s)| v * s));
        let rhs_max = rhs.amax();
        if rhs_max == 0.0 {
            return Ok(vec![0.0; p]);
        }
        let z = self.lu.solve(&rhs).ok_or_else(|| Error::LocalSolve {
            node: self.node,
            reason: "LU solve failed".into(),
        })?;
        let residual = (&self.matrix * &z - &rhs).amax();
        if !(residual <= RESIDUAL_TOL * rhs_max) {
            return Err(Error::LocalSolve {
                node: self.node,
                reason: format!("residual {residual:.3e} exceeds tolerance"),
            });
        }
        Ok(z.iter().zip(&self.col_scale).map(|(v, s)| v * s).collect())
    }

    /// `w_j = W_j · Ψ` for every neighbour.
    pub fn weights_from_psi(&self, psi: &[f64]) -> Vec<f64> {
        (0..self.neighbors.len())
            .map(|k| self.abf_row(k).iter().zip(psi).map(|(w, p)| w * p).sum())
            .collect()
    }

    /// Full weight solve for right-hand side `c`.
    pub fn solve_weights(&self, kind: OperatorKind, c: &[f64]) -> Result<LocalWeights> {
        let psi = self.solve_psi(c)?;
        let weights = self.weights_from_psi(&psi);
        Ok(LocalWeights {
            node: self.node,
            kind,
            neighbors: self.neighbors.clone(),
            weights,
            psi,
        })
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Builds the moments matrix of node `i` for consistency order `m`.
pub fn moments_matrix(nodes: &NodeSet, i: usize, m: usize) -> Result<MomentsMatrix> {
    MomentsMatrix::build(nodes, i, m)
}

/// Solves `M Ψ = C` for the weights of one node.
pub fn solve_weights(moments: &MomentsMatrix, kind: OperatorKind, c: &[f64]) -> Result<LocalWeights> {
    moments.solve_weights(kind, c)
}

/// Weights of one node: `L(φ)_i ≈ Σ_j (φ_j − φ_i) w_ji`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalWeights {
    pub node: usize,
    pub kind: OperatorKind,
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
    /// Linear coefficients `Ψ_i`.
    pub psi: Vec<f64>,
}

impl LocalWeights {
    /// `Σ_j (φ_j − φ_i) w_ji`; exactly zero on a constant field.
    pub fn apply(&self, field: &[f64]) -> f64 {
        let fi = field[self.node];
        self.neighbors
            .iter()
            .zip(&self.weights)
            .map(|(&j, &w)| (field[j] - fi) * w)
            .sum()
    }
}

/// Explicit weights of node `i` in one call.
pub fn explicit_weights(nodes: &NodeSet, i: usize, kind: OperatorKind, m: usize) -> Result<LocalWeights> {
    let moments = MomentsMatrix::build(nodes, i, m)?;
    moments.solve_weights(kind, &rhs_vector_explicit(kind, m))
}

/// Debug dump, one `i,j,kind,w` row per nonzero weight.
pub fn weights_to_csv<'a>(weights: impl IntoIterator<Item = &'a LocalWeights>) -> String {
    let mut out = String::from("i,j,kind,w\n");
    for lw in weights {
        for (&j, &w) in lw.neighbors.iter().zip(&lw.weights) {
            if w != 0.0 {
                let _ = writeln!(out, "{},{},{},{:.16e}", lw.node, j, lw.kind, w);
            }
        }
    }
    out
}
