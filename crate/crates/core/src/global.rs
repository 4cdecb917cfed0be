//! Global operators: the weight matrix `A`, the implicit matrix `B`, their
//! application `B d = A φ`, and the Poisson system `A^L φ = α^L f`.

use crate::compact::{build_stencils, OperatorStencils, OptimizerConfig, Scheme};
use crate::error::{Error, Result};
use crate::geometry::NodeSet;
use crate::krylov::{gmres, Ilu0, Jacobi, SolveReport, SolverConfig};
use crate::labfm::OperatorKind;
use crate::sparse::SparseMatrix;

/// One real value per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(nodes: &NodeSet, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            values: nodes.positions.iter().map(|p| f(p[0], p[1])).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::Dimension(format!("field of length {} on {n} nodes", self.len())));
        }
        Ok(())
    }
}

impl From<Vec<f64>> for Field {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// Weight and implicit-coefficient rows for one operator over all nodes.
///
/// Dirichlet nodes carry empty rows in `A` and identity rows in `B`.
#[derive(Debug, Clone)]
pub struct GlobalOperator {
    pub a: SparseMatrix,
    pub b: SparseMatrix,
    pub kind: OperatorKind,
    pub scheme: Scheme,
    explicit: bool,
}

fn weight_row(i: usize, neighbors: &[usize], weights: &[f64]) -> Vec<(usize, f64)> {
    let mut row: Vec<(usize, f64)> = neighbors.iter().copied().zip(weights.iter().copied()).collect();
    row.sort_by_key(|e| e.0);
    let diag = -row.iter().fold(0.0, |acc, e| acc + e.1);
    row.push((i, diag));
    row
}

impl GlobalOperator {
    pub fn new(a: SparseMatrix, b: SparseMatrix, kind: OperatorKind, scheme: Scheme) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::Dimension(format!("A is {0}×{0} but B is {1}×{1}", a.dim(), b.dim())));
        }
        Ok(Self {
            explicit: b.is_identity(),
            a,
            b,
            kind,
            scheme,
        })
    }

    /// Assembles `A` and `B` from per-node stencils.
    pub fn from_stencils(stencils: &OperatorStencils) -> Result<Self> {
        let n = stencils.nodes.len();
        let mut a_rows = Vec::with_capacity(n);
        let mut b_rows = Vec::with_capacity(n);
        for (i, op) in stencils.nodes.iter().enumerate() {
            match op {
                Some(op) => {
                    a_rows.push(weight_row(i, &op.weights.neighbors, &op.weights.weights));
                    b_rows.push(op.stencil.members.iter().copied().zip(op.stencil.alphas.iter().copied()).collect());
                }
                None => {
                    a_rows.push(Vec::new());
                    b_rows.push(vec![(i, 1.0)]);
                }
            }
        }
        Self::new(
            SparseMatrix::from_rows(a_rows)?,
            SparseMatrix::from_rows(b_rows)?,
            stencils.kind,
            stencils.scheme,
        )
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// True when `B` is the identity.
    pub fn is_explicit(&self) -> bool {
        self.explicit
    }

    /// Sum of row `i` of `A`: off-diagonals in column order, then the diagonal.
    pub fn row_sum(&self, i: usize) -> f64 {
        let (cols, vals) = self.a.row(i);
        let mut off = 0.0;
        let mut diag = 0.0;
        for (c, v) in cols.iter().zip(vals) {
            if *c == i {
                diag = *v;
            } else {
                off += v;
            }
        }
        off + diag
    }

    /// `A φ` evaluated as `Σ_j w_ji (φ_j − φ_i)`, so constants map to zero exactly.
    pub fn rhs(&self, phi: &Field) -> Result<Field> {
        phi.check(self.dim())?;
        let values = (0..self.dim())
            .map(|i| {
                let (cols, vals) = self.a.row(i);
                let pi = phi.values[i];
                let mut acc = 0.0;
                for (c, v) in cols.iter().zip(vals) {
                    if *c != i {
                        acc += v * (phi.values[*c] - pi);
                    }
                }
                acc
            })
            .collect();
        Ok(Field { values })
    }
}

/// Builds stencils for every node and assembles the global operator.
pub fn assemble_global(
    nodes: &NodeSet,
    scheme: Scheme,
    kind: OperatorKind,
    cfg: &OptimizerConfig,
) -> Result<(GlobalOperator, OperatorStencils)> {
    let prepared = scheme.prepare_nodes(nodes, kind)?;
    let stencils = build_stencils(&prepared, scheme, kind, cfg)?;
    Ok((GlobalOperator::from_stencils(&stencils)?, stencils))
}

/// Solves `M x = b` with GMRES(restart) and Jacobi preconditioning.
pub fn iterative_solve(m: &SparseMatrix, b: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, SolveReport)> {
    gmres(m, b, None, &Jacobi::new(m), cfg)
}

/// `d` with `B d = A φ`. Explicit operators skip the solve.
pub fn apply_operator(op: &GlobalOperator, phi: &Field, cfg: &SolverConfig) -> Result<Field> {
    let rhs = op.rhs(phi)?;
    if op.is_explicit() {
        return Ok(rhs);
    }
    let (d, _) = iterative_solve(&op.b, &rhs.values, cfg)?;
    Ok(Field { values: d })
}

/// `A^L φ = α^L f` with identity rows at Dirichlet nodes.
#[derive(Debug, Clone)]
pub struct PoissonSystem {
    pub a: SparseMatrix,
    pub alpha: SparseMatrix,
    pub dirichlet: Vec<bool>,
    pub scheme: Scheme,
}

/// Assembles the Poisson matrices from Laplacian stencils.
pub fn assemble_poisson_from(stencils: &OperatorStencils) -> Result<PoissonSystem> {
    if stencils.kind != OperatorKind::Laplacian {
        return Err(Error::Config("Poisson assembly needs Laplacian stencils".into()));
    }
    let n = stencils.nodes.len();
    let mut a_rows = Vec::with_capacity(n);
    let mut b_rows = Vec::with_capacity(n);
    let mut dirichlet = Vec::with_capacity(n);
    for (i, op) in stencils.nodes.iter().enumerate() {
        match op {
            Some(op) => {
                a_rows.push(weight_row(i, &op.weights.neighbors, &op.weights.weights));
                b_rows.push(op.stencil.members.iter().copied().zip(op.stencil.alphas.iter().copied()).collect());
                dirichlet.push(false);
            }
            None => {
                a_rows.push(vec![(i, 1.0)]);
                b_rows.push(vec![(i, 1.0)]);
                dirichlet.push(true);
            }
        }
    }
    Ok(PoissonSystem {
        a: SparseMatrix::from_rows(a_rows)?,
        alpha: SparseMatrix::from_rows(b_rows)?,
        dirichlet,
        scheme: stencils.scheme,
    })
}

/// Builds Laplacian stencils on the interior nodes and the Poisson matrices.
pub fn assemble_poisson(nodes: &NodeSet, scheme: Scheme, cfg: &OptimizerConfig) -> Result<PoissonSystem> {
    if nodes.tags.len() != nodes.len() {
        return Err(Error::MissingTag {
            node: nodes.tags.len().min(nodes.len()),
        });
    }
    let kind = OperatorKind::Laplacian;
    let stencils = if nodes.tags.iter().all(|t| *t == crate::geometry::NodeTag::DirichletBoundary) {
        OperatorStencils {
            scheme,
            kind,
            nodes: vec![None; nodes.len()],
        }
    } else {
        let prepared = scheme.prepare_nodes(nodes, kind)?;
        build_stencils(&prepared, scheme, kind, cfg)?
    };
    assemble_poisson_from(&stencils)
}

/// Solves `A^L φ = α^L f` with `φ = g` on Dirichlet nodes.
pub fn solve_poisson(system: &PoissonSystem, f: &Field, g: &Field, cfg: &SolverConfig) -> Result<(Field, SolveReport)> {
    let n = system.a.dim();
    f.check(n)?;
    g.check(n)?;
    let mut rhs = system.alpha.matvec(&f.values)?;
    for (i, r) in rhs.iter_mut().enumerate() {
        if system.dirichlet[i] {
            *r = g.values[i];
        }
    }
    let ilu = Ilu0::new(&system.a)?;
    let (phi, report) = gmres(&system.a, &rhs, None, &ilu, cfg)?;
    Ok((Field { values: phi }, report))
}
