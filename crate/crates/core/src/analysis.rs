//! Resolving-power sweeps, error metrics, convergence studies and stability
//! spectra.

use std::f64::consts::PI;
use std::fmt;
use std::fmt::Write as _;

use nalgebra::linalg::Schur;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compact::{spectral_target, OperatorStencils, OptimizerConfig, Scheme};
use crate::error::{Error, Result};
use crate::geometry::{generate_nodes, DomainSpec, NodeSet};
use crate::global::{apply_operator, assemble_global, Field, GlobalOperator};
use crate::krylov::SolverConfig;
use crate::labfm::OperatorKind;

/// Error thresholds reported in the crossing tables.
pub const LEVELS: [f64; 3] = [0.001, 0.01, 0.1];

/// Straight lines through wavenumber space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepLine {
    KyZero,
    KyEqKx,
    KyTwoKx,
    KxZero,
}

impl SweepLine {
    pub const GRADIENT: [SweepLine; 3] = [SweepLine::KyZero, SweepLine::KyEqKx, SweepLine::KyTwoKx];
    pub const LAPLACIAN: [SweepLine; 3] = [SweepLine::KyZero, SweepLine::KyEqKx, SweepLine::KxZero];

    pub fn for_kind(kind: OperatorKind) -> [SweepLine; 3] {
        if kind.is_gradient() {
            Self::GRADIENT
        } else {
            Self::LAPLACIAN
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepLine::KyZero => "ky0",
            SweepLine::KyEqKx => "kykx",
            SweepLine::KyTwoKx => "ky2kx",
            SweepLine::KxZero => "kx0",
        }
    }

    /// Unit direction `(k_x, k_y) / |k|`.
    fn direction(self) -> [f64; 2] {
        match self {
            SweepLine::KyZero => [1.0, 0.0],
            SweepLine::KyEqKx => [0.5f64.sqrt(), 0.5f64.sqrt()],
            SweepLine::KyTwoKx => [1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt()],
            SweepLine::KxZero => [0.0, 1.0],
        }
    }
}

impl fmt::Display for SweepLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A line sweep. The abscissa is `k_x / k_Ny` for gradients and
/// `|k| / k_Ny` for Laplacians; `y`-derivatives swap the roles of `x` and `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub line: SweepLine,
    pub samples: usize,
}

impl SweepSpec {
    pub fn new(line: SweepLine) -> Self {
        Self { line, samples: 64 }
    }

    fn validate(&self, kind: OperatorKind) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Config("a sweep needs at least two samples".into()));
        }
        if self.line == SweepLine::KxZero && kind.is_gradient() {
            return Err(Error::Config("the k_x = 0 line is only defined for Laplacian sweeps".into()));
        }
        Ok(())
    }

    /// `(k/k_Ny, k_x, k_y)` for every sample.
    pub fn wavenumbers(&self, kind: OperatorKind, k_ny: f64) -> Vec<(f64, f64, f64)> {
        let dir = self.line.direction();
        (1..=self.samples)
            .map(|n| {
                let f = n as f64 / self.samples as f64;
                let (kx, ky) = if kind.is_gradient() {
                    let along = f * k_ny;
                    (along, along * dir[1] / dir[0])
                } else {
                    (f * k_ny * dir[0], f * k_ny * dir[1])
                };
                if kind == OperatorKind::Ddy {
                    (f, ky, kx)
                } else {
                    (f, kx, ky)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub k_over_kny: f64,
    pub kx: f64,
    pub ky: f64,
    pub rms_re: f64,
    pub rms_im: f64,
    /// ε1 or ε2 of the RMS real part.
    pub eps: f64,
    /// Nodes whose response was degenerate and left out of the averages.
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub kind: OperatorKind,
    pub line: SweepLine,
    pub k_ny: f64,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn crossings(&self, levels: &[f64]) -> Vec<Option<f64>> {
        let pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.k_over_kny, p.eps)).collect();
        threshold_crossings(&pts, levels)
    }

    /// `k_over_kny,rms_re,rms_im,eps`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k_over_kny,rms_re,rms_im,eps\n");
        for p in &self.points {
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", p.k_over_kny, p.rms_re, p.rms_im, p.eps);
        }
        out
    }
}

/// `|k_x − Re{k_eff}| / k_x`.
pub fn epsilon1(kx: f64, _ky: f64, k_eff: Complex64) -> Result<f64> {
    if !(kx > 0.0) {
        return Err(Error::Domain("epsilon1 needs k_x > 0".into()));
    }
    Ok((kx - k_eff.re).abs() / kx)
}

/// `|q² − Re{q_eff²}| / q²`.
pub fn epsilon2(kx: f64, ky: f64, q_eff2: Complex64) -> Result<f64> {
    let q2 = kx * kx + ky * ky;
    if !(q2 > 0.0) {
        return Err(Error::Domain("epsilon2 is undefined at the origin".into()));
    }
    Ok((q2 - q_eff2.re).abs() / q2)
}

/// Mean nodal spacing, the scale of the Nyquist wavenumber.
pub fn mean_spacing(nodes: &NodeSet) -> f64 {
    nodes.spacing.iter().sum::<f64>() / nodes.len() as f64
}

/// RMS of the real and imaginary responses over every node carrying a stencil.
pub fn rms_resolving_power(nodes: &NodeSet, stencils: &OperatorStencils, sweep: &SweepSpec) -> Result<SweepResult> {
    let kind = stencils.kind;
    sweep.validate(kind)?;
    let k_ny = PI / mean_spacing(nodes);
    let points = sweep
        .wavenumbers(kind, k_ny)
        .into_par_iter()
        .map(|(f, kx, ky)| {
            let mut re2 = 0.0;
            let mut im2 = 0.0;
            let mut count = 0usize;
            let mut degenerate = 0usize;
            for op in stencils.nodes.iter().flatten() {
                match op.response(nodes, kx, ky) {
                    Ok(r) if r.value.re.is_finite() && r.value.im.is_finite() => {
                        re2 += r.value.re * r.value.re;
                        im2 += r.value.im * r.value.im;
                        count += 1;
                    }
                    Ok(_) | Err(Error::DegenerateResponse { .. }) => degenerate += 1,
                    Err(e) => return Err(e),
                }
            }
            if count == 0 {
                return Err(Error::DegenerateResponse { node: 0, kx, ky });
            }
            let rms_re = (re2 / count as f64).sqrt();
            let rms_im = (im2 / count as f64).sqrt();
            let target = spectral_target(kind, kx, ky);
            Ok(SweepPoint {
                k_over_kny: f,
                kx,
                ky,
                rms_re,
                rms_im,
                eps: (target - rms_re).abs() / target,
                degenerate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        kind,
        line: sweep.line,
        k_ny,
        points,
    })
}

/// First abscissa where `eps` exceeds each level, interpolated linearly from
/// the previous sample (or from `(0, 0)`). `None` if never exceeded.
pub fn threshold_crossings(points: &[(f64, f64)], levels: &[f64]) -> Vec<Option<f64>> {
    levels
        .iter()
        .map(|&level| {
            let mut prev = (0.0, 0.0);
            for &(k, e) in points {
                if e > level {
                    let t = if e > prev.1 { (level - prev.1) / (e - prev.1) } else { 1.0 };
                    return Some(prev.0 + t.clamp(0.0, 1.0) * (k - prev.0));
                }
                prev = (k, e);
            }
            None
        })
        .collect()
}

const TEST_TERMS: usize = 8;

/// Eight-term Fourier series of a top hat in `x` times `sin(2πy)`.
pub fn test_function(x: f64, y: f64) -> f64 {
    let mut s = 0.0;
    for k in 1..=TEST_TERMS {
        let n = (2 * k - 1) as f64;
        s += (2.0 * n * PI * (x - 0.25)).sin() / n;
    }
    (2.0 * PI * y).sin() * 4.0 / PI * s
}

/// `(∂φ/∂x, ∂φ/∂y, ∇²φ)` of [`test_function`].
pub fn test_function_derivs(x: f64, y: f64) -> (f64, f64, f64) {
    let (sy, cy) = (2.0 * PI * y).sin_cos();
    let mut s = 0.0;
    let mut sx = 0.0;
    let mut sxx = 0.0;
    for k in 1..=TEST_TERMS {
        let n = (2 * k - 1) as f64;
        let w = 2.0 * n * PI;
        let (sn, cs) = (w * (x - 0.25)).sin_cos();
        s += sn / n;
        sx += w * cs / n;
        sxx -= w * w * sn / n;
    }
    let c = 4.0 / PI;
    let dx = c * sy * sx;
    let dy = c * 2.0 * PI * cy * s;
    let lap = c * sy * sxx - 4.0 * PI * PI * c * sy * s;
    (dx, dy, lap)
}

/// Exact derivative of the test function matching `kind`.
pub fn test_function_target(kind: OperatorKind, x: f64, y: f64) -> f64 {
    let (dx, dy, lap) = test_function_derivs(x, y);
    match kind {
        OperatorKind::Ddx => dx,
        OperatorKind::Ddy => dy,
        OperatorKind::Laplacian => lap,
    }
}

/// `|L_a − L_n|₂ / |L_a|₂`.
pub fn l2_norm(numeric: &Field, analytic: &Field) -> Result<f64> {
    if numeric.len() != analytic.len() {
        return Err(Error::Dimension("fields differ in length".into()));
    }
    let num: f64 = numeric.values.iter().zip(&analytic.values).map(|(n, a)| (a - n) * (a - n)).sum();
    let den: f64 = analytic.values.iter().map(|a| a * a).sum();
    if den == 0.0 {
        return Err(Error::Domain("analytic field has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// `R = compact / explicit`.
pub fn ratio_r(compact_norm: f64, explicit_norm: f64) -> Result<f64> {
    if explicit_norm == 0.0 {
        return Err(Error::Domain("explicit error norm is zero".into()));
    }
    Ok(compact_norm / explicit_norm)
}

/// Least-squares slope of `log(err)` against `log(s)`.
pub fn fit_slope(s: &[f64], err: &[f64]) -> f64 {
    let xs: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub s: f64,
    pub nodes: usize,
    pub l2_explicit: f64,
    pub l2_compact: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub kind: OperatorKind,
    pub explicit: Scheme,
    pub compact: Scheme,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    /// Slopes `(explicit, compact)` over the three finest resolutions.
    pub fn slopes(&self) -> (f64, f64) {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| a.s.total_cmp(&b.s));
        let fine = &rows[..rows.len().min(3)];
        let s: Vec<f64> = fine.iter().map(|r| r.s).collect();
        let e: Vec<f64> = fine.iter().map(|r| r.l2_explicit).collect();
        let c: Vec<f64> = fine.iter().map(|r| r.l2_compact).collect();
        (fit_slope(&s, &e), fit_slope(&s, &c))
    }

    /// `s,l2_explicit,l2_compact,R`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,l2_explicit,l2_compact,R\n");
        for r in &self.rows {
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", r.s, r.l2_explicit, r.l2_compact, r.r);
        }
        out
    }
}

/// Relative L2 error of one operator on the test function.
pub fn test_function_error(nodes: &NodeSet, op: &GlobalOperator, solver: &SolverConfig) -> Result<f64> {
    let phi = Field::from_fn(nodes, test_function);
    let exact = Field::from_fn(nodes, |x, y| test_function_target(op.kind, x, y));
    let numeric = apply_operator(op, &phi, solver)?;
    l2_norm(&numeric, &exact)
}

/// Explicit-versus-compact errors on the test function at each spacing.
pub fn convergence_study(
    domain: &DomainSpec,
    explicit: Scheme,
    compact: Scheme,
    kind: OperatorKind,
    resolutions: &[f64],
    seed: u64,
    optimizer: &OptimizerConfig,
    solver: &SolverConfig,
) -> Result<ConvergenceTable> {
    if resolutions.len() < 3 {
        return Err(Error::Config("a convergence study needs at least three resolutions".into()));
    }
    let mut rows = Vec::with_capacity(resolutions.len());
    for &s in resolutions {
        let nodes = generate_nodes(domain, s, seed)?;
        let (e_op, _) = assemble_global(&nodes, explicit, kind, optimizer)?;
        let l2_explicit = test_function_error(&nodes, &e_op, solver)?;
        drop(e_op);
        let (c_op, _) = assemble_global(&nodes, compact, kind, optimizer)?;
        let l2_compact = test_function_error(&nodes, &c_op, solver)?;
        rows.push(ConvergenceRow {
            s,
            nodes: nodes.len(),
            l2_explicit,
            l2_compact,
            r: ratio_r(l2_compact, l2_explicit)?,
        });
    }
    Ok(ConvergenceTable {
        kind,
        explicit,
        compact,
        rows,
    })
}

/// Largest dimension accepted by the dense eigen-solve.
pub const MAX_SPECTRUM_DIM: usize = 2500;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<Complex64>,
    pub n: usize,
    pub kind: OperatorKind,
    pub scheme: Scheme,
}

impl SpectrumResult {
    pub fn max_re(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max)
    }

    /// `re,im`, sorted by real then imaginary part.
    pub fn to_csv(&self) -> String {
        let mut ev = self.eigenvalues.clone();
        ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        let mut out = String::from("re,im\n");
        for l in ev {
            let _ = writeln!(out, "{:.16e},{:.16e}", l.re, l.im);
        }
        out
    }
}

/// Eigenvalues of `A v = λ B v`, through the dense reduction `B⁻¹ A`.
pub fn stability_spectrum(op: &GlobalOperator) -> Result<SpectrumResult> {
    let n = op.dim();
    if n > MAX_SPECTRUM_DIM {
        return Err(Error::Config(format!("dense spectrum limited to {MAX_SPECTRUM_DIM} nodes, got {n}")));
    }
    let a = op.a.to_dense();
    let m = if op.is_explicit() {
        a
    } else {
        op.b
            .to_dense()
            .lu()
            .solve(&a)
            .ok_or_else(|| Error::Eigen("implicit matrix is singular".into()))?
    };
    let schur = Schur::try_new(m, f64::EPSILON, 100 * n.max(10))
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?;
    let eigenvalues = schur.complex_eigenvalues().iter().copied().collect();
    Ok(SpectrumResult {
        eigenvalues,
        n,
        kind: op.kind,
        scheme: op.scheme,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compact::build_stencils;
    use crate::sparse::SparseMatrix;

    #[test]
    fn epsilon_examples() {
        let k = 3.0;
        assert_eq!(epsilon1(k, 1.0, Complex64::new(k, 0.2)).unwrap(), 0.0);
        assert_eq!(epsilon1(k, 1.0, Complex64::new(0.0, 0.0)).unwrap(), 1.0);
        assert!((epsilon1(k, 0.0, Complex64::new(1.005 * k, 0.0)).unwrap() - 0.005).abs() < 1e-15);
        assert!(epsilon1(0.0, 1.0, Complex64::new(1.0, 0.0)).is_err());
        let q2 = 5.0;
        assert_eq!(epsilon2(1.0, 2.0, Complex64::new(q2, -1.0)).unwrap(), 0.0);
        assert_eq!(epsilon2(1.0, 2.0, Complex64::new(0.0, 0.0)).unwrap(), 1.0);
        assert!((epsilon2(1.0, 2.0, Complex64::new(1.005 * q2, 0.0)).unwrap() - 0.005).abs() < 1e-15);
        assert!(epsilon2(0.0, 0.0, Complex64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn crossings_interpolate_and_encode_never() {
        let pts = [(0.25, 0.0005), (0.5, 0.005), (0.75, 0.05), (1.0, 0.2)];
        let c = threshold_crossings(&pts, &LEVELS);
        assert!((c[0].unwrap() - (0.25 + 0.25 * (0.0005 / 0.0045))).abs() < 1e-14);
        assert!((c[1].unwrap() - (0.5 + 0.25 * (0.005 / 0.045))).abs() < 1e-14);
        assert!((c[2].unwrap() - (0.75 + 0.25 * (0.05 / 0.15))).abs() < 1e-14);
        assert_eq!(threshold_crossings(&[(0.5, 0.0), (1.0, 0.0)], &LEVELS), vec![None; 3]);
        // Exceeded at the first sample: interpolate from the origin.
        assert_eq!(threshold_crossings(&[(0.5, 0.2)], &[0.1]), vec![Some(0.25)]);
    }

    #[test]
    fn sweep_lines_and_validation() {
        let s = SweepSpec::new(SweepLine::KyTwoKx);
        let w = s.wavenumbers(OperatorKind::Ddx, 10.0);
        assert_eq!(w.len(), 64);
        assert_eq!(w[63], (1.0, 10.0, 20.0));
        let w = s.wavenumbers(OperatorKind::Ddy, 10.0);
        assert_eq!(w[63], (1.0, 20.0, 10.0));
        let w = SweepSpec::new(SweepLine::KyEqKx).wavenumbers(OperatorKind::Laplacian, 10.0);
        assert!((w[63].1.hypot(w[63].2) - 10.0).abs() < 1e-12);
        assert!(SweepSpec::new(SweepLine::KxZero).validate(OperatorKind::Ddx).is_err());
        assert!(SweepSpec { line: SweepLine::KyZero, samples: 1 }.validate(OperatorKind::Laplacian).is_err());
    }

    #[test]
    fn single_node_rms_is_that_nodes_response() {
        let ns = NodeSet::lattice(DomainSpec::unit_periodic(), 12, 12).unwrap();
        let scheme = Scheme::from_label('a').unwrap();
        let prepared = scheme.prepare_nodes(&ns, OperatorKind::Ddx).unwrap();
        let mut st = build_stencils(&prepared, scheme, OperatorKind::Ddx, &OptimizerConfig::default()).unwrap();
        for (i, op) in st.nodes.iter_mut().enumerate() {
            if i != 40 {
                *op = None;
            }
        }
        let sweep = rms_resolving_power(&prepared, &st, &SweepSpec::new(SweepLine::KyEqKx)).unwrap();
        for p in &sweep.points {
            let r = st.nodes[40].as_ref().unwrap().response(&prepared, p.kx, p.ky).unwrap().value;
            assert!((p.rms_re - r.re.abs()).abs() <= 1e-12 * r.re.abs().max(1.0));
            assert!((p.rms_im - r.im.abs()).abs() <= 1e-12 * r.im.abs().max(1.0));
        }
    }

    #[test]
    fn rms_vanishes_as_k_goes_to_zero() {
        let ns = generate_nodes(&DomainSpec::unit_periodic(), 1.0 / 20.0, 1).unwrap();
        let scheme = Scheme::from_label('b').unwrap();
        for kind in [OperatorKind::Ddy, OperatorKind::Laplacian] {
            let p = scheme.prepare_nodes(&ns, kind).unwrap();
            let st = build_stencils(&p, scheme, kind, &OptimizerConfig::default()).unwrap();
            let r = rms_resolving_power(&p, &st, &SweepSpec { line: SweepLine::KyZero, samples: 10_000 }).unwrap();
            assert!(r.points[0].rms_re < 1e-2 * r.points.last().unwrap().rms_re);
            assert!(r.points[0].eps < 1e-3);
            assert_eq!(r.to_csv().lines().count(), 10_001);
        }
    }

    #[test]
    fn test_function_examples() {
        for y in [0.0, 0.17, 0.5, 0.93] {
            assert!(test_function(0.25, y).abs() < 1e-14);
        }
        for x in [0.0, 0.3, 0.61] {
            assert_eq!(test_function(x, 0.0), 0.0);
        }
        // Values from an independent symbolic differentiation.
        let cases = [
            ((0.3, 0.3), [0.93435673272072953354, -11.708203932499369089, -1.9075179185198054908, 571.96481160234896706]),
            ((0.7, 0.125), [0.69469055774714230358, 8.7050035979312860444, 4.3648695054732365729, 425.25358898712590697]),
        ];
        for ((x, y), v) in cases {
            let (dx, dy, lap) = test_function_derivs(x, y);
            assert!((test_function(x, y) - v[0]).abs() < 1e-13);
            assert!((dx - v[1]).abs() < 1e-12 * v[1].abs());
            assert!((dy - v[2]).abs() < 1e-12 * v[2].abs());
            assert!((lap - v[3]).abs() < 1e-12 * v[3].abs());
        }
    }

    #[test]
    fn test_function_derivatives_match_finite_differences() {
        let h = 1e-4;
        for &(x, y) in &[(0.11, 0.42), (0.58, 0.77), (0.9, 0.05)] {
            let f = test_function;
            let fdx = (-f(x + 2.0 * h, y) + 8.0 * f(x + h, y) - 8.0 * f(x - h, y) + f(x - 2.0 * h, y)) / (12.0 * h);
            let fdy = (-f(x, y + 2.0 * h) + 8.0 * f(x, y + h) - 8.0 * f(x, y - h) + f(x, y - 2.0 * h)) / (12.0 * h);
            let (dx, dy, _) = test_function_derivs(x, y);
            assert!((dx - fdx).abs() < 1e-6 * dx.abs().max(1.0));
            assert!((dy - fdy).abs() < 1e-6 * dy.abs().max(1.0));
        }
    }

    #[test]
    fn norm_and_ratio_examples() {
        let a = Field::new(vec![1.0, -2.0, 3.0]);
        assert_eq!(l2_norm(&a, &a).unwrap(), 0.0);
        assert_eq!(l2_norm(&Field::new(vec![2.0, -4.0, 6.0]), &a).unwrap(), 1.0);
        assert_eq!(l2_norm(&Field::zeros(3), &a).unwrap(), 1.0);
        assert!(l2_norm(&a, &Field::zeros(3)).is_err());
        assert_eq!(ratio_r(0.3, 0.3).unwrap(), 1.0);
        assert_eq!(ratio_r(0.15, 0.3).unwrap(), 0.5);
        assert!(ratio_r(1.0, 0.0).is_err());
        assert!((fit_slope(&[0.1, 0.2, 0.4], &[0.01, 0.04, 0.16]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_pencils_have_unit_spectrum() {
        let m = SparseMatrix::from_triplets(3, [(0, 0, 1.0), (0, 1, 0.3), (1, 1, 1.0), (2, 0, -0.2), (2, 2, 1.0)]).unwrap();
        let op = GlobalOperator::new(m.clone(), m, OperatorKind::Ddx, Scheme::from_label('b').unwrap()).unwrap();
        let spec = stability_spectrum(&op).unwrap();
        assert_eq!(spec.eigenvalues.len(), 3);
        for l in spec.eigenvalues {
            assert!((l - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn explicit_spectrum_matches_standard_eigenvalues() {
        let ns = generate_nodes(&DomainSpec::unit_periodic(), 1.0 / 12.0, 2).unwrap();
        let (op, _) = assemble_global(&ns, Scheme::from_label('a').unwrap(), OperatorKind::Laplacian, &OptimizerConfig::default()).unwrap();
        let spec = stability_spectrum(&op).unwrap();
        assert_eq!(spec.n, ns.len());
        let direct = op.a.to_dense().complex_eigenvalues();
        let mut a: Vec<f64> = spec.eigenvalues.iter().map(|l| l.re).collect();
        let mut b: Vec<f64> = direct.iter().map(|l| l.re).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9 * spec.max_abs());
        }
        assert!(spec.max_re() <= 1e-6 * spec.max_abs());
        assert_eq!(spec.to_csv().lines().count(), ns.len() + 1);
    }
}
