//! Restarted GMRES with right preconditioning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Relative residual `|b − Mx| / |b|`.
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 2000,
            restart: 30,
        }
    }
}

impl SolverConfig {
    /// Defaults for the Poisson system, whose fourth-order matrices stall
    /// at short restarts.
    pub fn poisson() -> Self {
        Self {
            max_iter: 5000,
            restart: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || self.restart == 0 {
            return Err(Error::Config(format!("invalid solver settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final true relative residual.
    pub residual: f64,
    /// Relative residual estimate after every inner iteration.
    pub history: Vec<f64>,
}

pub trait Preconditioner: Sync {
    /// `z ≈ M⁻¹ r`.
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(m: &SparseMatrix) -> Self {
        let inv_diag = m
            .diagonal()
            .into_iter()
            .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        Self { inv_diag }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

/// Incomplete LU with the sparsity pattern of the matrix itself.
pub struct Ilu0 {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(m: &SparseMatrix) -> Result<Self> {
        let csr = m.csr();
        let n = m.dim();
        let indptr: Vec<usize> = csr.indptr().raw_storage().to_vec();
        let indices = csr.indices().to_vec();
        let mut values = csr.data().to_vec();
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for k in indptr[i]..indptr[i + 1] {
                if indices[k] == i {
                    diag[i] = k;
                }
            }
            if diag[i] == usize::MAX {
                return Err(Error::LocalSolve {
                    node: i,
                    reason: "ILU(0) needs a structurally nonzero diagonal".into(),
                });
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (lo, hi) = (indptr[i], indptr[i + 1]);
            for k in lo..hi {
                pos[indices[k]] = k;
            }
            for k in lo..hi {
                let c = indices[k];
                if c >= i {
                    break;
                }
                let pivot = values[diag[c]];
                if pivot == 0.0 {
                    return Err(Error::LocalSolve {
                        node: c,
                        reason: "zero pivot in ILU(0)".into(),
                    });
                }
                let factor = values[k] / pivot;
                values[k] = factor;
                for kk in diag[c] + 1..indptr[c + 1] {
                    let p = pos[indices[kk]];
                    if p != usize::MAX {
                        values[p] -= factor * values[kk];
                    }
                }
            }
            for k in lo..hi {
                pos[indices[k]] = usize::MAX;
            }
            if values[diag[i]] == 0.0 {
                return Err(Error::LocalSolve {
                    node: i,
                    reason: "zero pivot in ILU(0)".into(),
                });
            }
        }
        Ok(Self {
            indptr,
            indices,
            values,
            diag,
        })
    }
}

impl Preconditioner for Ilu0 {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = z.len();
        for i in 0..n {
            let mut acc = r[i];
            for k in self.indptr[i]..self.diag[i] {
                acc -= self.values[k] * z[self.indices[k]];
            }
            z[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = z[i];
            for k in self.diag[i] + 1..self.indptr[i + 1] {
                acc -= self.values[k] * z[self.indices[k]];
            }
            z[i] = acc / self.values[self.diag[i]];
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `M x = b` by GMRES(restart) preconditioned on the right.
pub fn gmres(
    m: &SparseMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    precond: &dyn Preconditioner,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let n = m.dim();
    if b.len() != n || x0.is_some_and(|x| x.len() != n) {
        return Err(Error::Dimension(format!("right-hand side of length {} for a {n}×{n} system", b.len())));
    }
    let bnorm = norm(b);
    let mut x = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveReport {
                iterations: 0,
                residual: 0.0,
                history: Vec::new(),
            },
        ));
    }
    let restart = cfg.restart.min(n.max(1));
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut v: Vec<Vec<f64>> = vec![vec![0.0; n]; restart + 1];
    let mut h = vec![vec![0.0; restart]; restart + 1];
    let mut cs = vec![0.0; restart];
    let mut sn = vec![0.0; restart];
    let mut g = vec![0.0; restart + 1];

    let residual = |x: &[f64], r: &mut Vec<f64>| -> f64 {
        m.matvec_into(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        norm(r)
    };

    let mut rnorm = residual(&x, &mut r);
    loop {
        let rel = rnorm / bnorm;
        if rel <= cfg.tol {
            return Ok((
                x,
                SolveReport {
                    iterations,
                    residual: rel,
                    history,
                },
            ));
        }
        if iterations >= cfg.max_iter || !rel.is_finite() {
            return Err(Error::NonConvergence {
                iterations,
                residual: rel,
                history,
            });
        }
        for (vi, ri) in v[0].iter_mut().zip(&r) {
            *vi = ri / rnorm;
        }
        g.iter_mut().for_each(|e| *e = 0.0);
        g[0] = rnorm;
        let mut k_used = 0;
        for k in 0..restart {
            if iterations >= cfg.max_iter {
                break;
            }
            precond.apply(&v[k], &mut z);
            m.matvec_into(&z, &mut w);
            for j in 0..=k {
                let hjk = dot(&w, &v[j]);
                h[j][k] = hjk;
                for (wi, vi) in w.iter_mut().zip(&v[j]) {
                    *wi -= hjk * vi;
                }
            }
            let wnorm = norm(&w);
            h[k + 1][k] = wnorm;
            if wnorm > 0.0 {
                for (vi, wi) in v[k + 1].iter_mut().zip(&w) {
                    *vi = wi / wnorm;
                }
            }
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let denom = h[k][k].hypot(h[k + 1][k]);
            if denom == 0.0 {
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k_used = k + 1;
            let est = g[k + 1].abs() / bnorm;
            history.push(est);
            if est <= cfg.tol || wnorm == 0.0 {
                break;
            }
        }
        if k_used == 0 {
            return Err(Error::NonConvergence {
                iterations,
                residual: rel,
                history,
            });
        }
        // Back-substitute for the Krylov coefficients and update x.
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in i + 1..k_used {
                acc -= h[i][j] * y[j];
            }
            y[i] = acc / h[i][i];
        }
        w.iter_mut().for_each(|e| *e = 0.0);
        for (j, yj) in y.iter().enumerate() {
            for (wi, vi) in w.iter_mut().zip(&v[j]) {
                *wi += yj * vi;
            }
        }
        precond.apply(&w, &mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
        let previous = rnorm;
        rnorm = residual(&x, &mut r);
        if !(rnorm < previous) && iterations >= cfg.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: rnorm / bnorm,
                history,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dominant(n: usize, seed: u64) -> SparseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trip = Vec::new();
        for i in 0..n {
            let mut off = 0.0;
            for _ in 0..4 {
                let j = rng.gen_range(0..n);
                if j != i {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    off += v.abs();
                    trip.push((i, j, v));
                }
            }
            trip.push((i, i, off + rng.gen_range(0.5..1.5)));
        }
        SparseMatrix::from_triplets(n, trip).unwrap()
    }

    #[test]
    fn identity_returns_rhs() {
        let b = vec![1.0, -2.0, 3.5];
        let (x, rep) = gmres(&SparseMatrix::identity(3), &b, None, &IdentityPreconditioner, &SolverConfig::default()).unwrap();
        assert_eq!(x, b);
        assert!(rep.iterations <= 1);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let m = random_dominant(10, 1);
        let (x, _) = gmres(&m, &[0.0; 10], None, &Jacobi::new(&m), &SolverConfig::default()).unwrap();
        assert_eq!(x, vec![0.0; 10]);
    }

    #[test]
    fn matches_dense_solve_with_each_preconditioner() {
        let n = 300;
        let m = random_dominant(n, 9);
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let dense = m.to_dense().lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        let cfg = SolverConfig::default();
        let ilu = Ilu0::new(&m).unwrap();
        let precs: [&dyn Preconditioner; 3] = [&IdentityPreconditioner, &Jacobi::new(&m), &ilu];
        for p in precs {
            let (x, rep) = gmres(&m, &b, None, p, &cfg).unwrap();
            assert!(rep.iterations < n);
            assert!(rep.residual <= cfg.tol);
            let err = x.iter().zip(dense.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err <= 10.0 * cfg.tol * dense.norm(), "{err}");
        }
    }

    #[test]
    fn ilu0_is_exact_for_triangular_patterns() {
        let m = SparseMatrix::from_triplets(3, [(0, 0, 2.0), (1, 0, 1.0), (1, 1, 4.0), (2, 1, -1.0), (2, 2, 1.0)]).unwrap();
        let ilu = Ilu0::new(&m).unwrap();
        let b = [2.0, 5.0, 0.0];
        let mut z = [0.0; 3];
        ilu.apply(&b, &mut z);
        assert_eq!(m.matvec(&z).unwrap(), b.to_vec());
    }

    #[test]
    fn iteration_cap_reports_history() {
        let m = random_dominant(200, 3);
        let b = vec![1.0; 200];
        let cfg = SolverConfig {
            tol: 1e-14,
            max_iter: 3,
            restart: 30,
        };
        match gmres(&m, &b, None, &IdentityPreconditioner, &cfg) {
            Err(Error::NonConvergence { iterations, history, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let cfg = SolverConfig {
            tol: 0.0,
            ..SolverConfig::default()
        };
        assert!(matches!(
            gmres(&SparseMatrix::identity(2), &[1.0, 1.0], None, &IdentityPreconditioner, &cfg),
            Err(Error::Config(_))
        ));
    }
}
