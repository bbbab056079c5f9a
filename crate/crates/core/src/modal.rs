//! Modal decomposition of a lifted transition matrix, projection onto its
//! unstable left eigenspace and the instability quotient
//! `xi = |W_u^T z| / |z|` over state-space grids.

use std::io::Write;

use nalgebra::linalg::Schur;
use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::ObservableDictionary;
use crate::dynamics::{simulate_all, AxisBox, DynamicalSystem, Label, State};
use crate::encoding::LiftedLinearModel;
use crate::error::{Error, Result};

pub const DEFAULT_STABILITY_EPS: f64 = 1e-3;
/// Relative Frobenius residual above which the eigenvector basis is treated as
/// failing to diagonalize the matrix.
pub const DEFECT_TOL: f64 = 1e-6;
/// Quotient above which a grid node is classified unstable.
pub const XI_THRESHOLD: f64 = 0.5;

type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeClass {
    Unstable,
    Marginal,
    Stable,
}

impl ModeClass {
    pub fn of(modulus: f64, eps: f64) -> Self {
        if modulus > 1.0 + eps {
            ModeClass::Unstable
        } else if modulus < 1.0 - eps {
            ModeClass::Stable
        } else {
            ModeClass::Marginal
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModeClass::Unstable => "unstable",
            ModeClass::Marginal => "marginal",
            ModeClass::Stable => "stable",
        }
    }
}

/// One real mode: a single column for a real eigenvalue, or a `(re, im)`
/// column pair for a complex-conjugate pair (stored with `im > 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub eigenvalue: C64,
    pub column: usize,
    pub width: usize,
    pub class: ModeClass,
}

#[derive(Debug, Clone)]
pub struct ModalDecomposition {
    pub modes: Vec<Mode>,
    /// Right basis; columns grouped by mode.
    pub v: DMatrix<f64>,
    /// Left basis with `W^T V = I`.
    pub w: DMatrix<f64>,
    /// Real block-diagonal eigenvalue matrix (2x2 rotation-scaling blocks for pairs).
    pub d: DMatrix<f64>,
    pub epsilon: f64,
    pub reconstruction_residual: f64,
    unstable_basis: DMatrix<f64>,
}

impl ModalDecomposition {
    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn indices(&self, class: ModeClass) -> Vec<usize> {
        (0..self.modes.len()).filter(|&i| self.modes[i].class == class).collect()
    }

    /// Every eigenvalue, conjugates included.
    pub fn eigenvalues(&self) -> Vec<C64> {
        self.modes
            .iter()
            .flat_map(|m| {
                if m.width == 2 {
                    vec![m.eigenvalue, m.eigenvalue.conj()]
                } else {
                    vec![m.eigenvalue]
                }
            })
            .collect()
    }

    /// Raw left columns of the unstable modes.
    pub fn unstable_left_block(&self) -> DMatrix<f64> {
        let cols: Vec<usize> = self
            .modes
            .iter()
            .filter(|m| m.class == ModeClass::Unstable)
            .flat_map(|m| m.column..m.column + m.width)
            .collect();
        self.w.select_columns(&cols)
    }

    /// Orthonormal basis (columns) spanning the unstable left eigenspace.
    pub fn unstable_basis(&self) -> &DMatrix<f64> {
        &self.unstable_basis
    }

    /// `V D W^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.v * &self.d * self.w.transpose()
    }

    /// Coordinates of `z` on the orthonormalized unstable left basis; empty
    /// when there are no unstable modes.
    pub fn project_unstable(&self, z: &DVector<f64>) -> DVector<f64> {
        self.unstable_basis.tr_mul(z)
    }

    /// `|z_u| / |z|` for a lifted vector; `None` when `|z|` vanishes.
    pub fn quotient_of_lifted(&self, z: &DVector<f64>) -> Option<f64> {
        let norm = z.norm();
        if !(norm >= 1e-300) {
            return None;
        }
        Some(self.project_unstable(z).norm() / norm)
    }

    /// Lifts `x` and returns its instability quotient (`None` marks an
    /// undefined point).
    pub fn instability_quotient(&self, dict: &dyn ObservableDictionary, x: &State) -> Result<Option<f64>> {
        let z = dict.eval_lift(x)?;
        if z.len() != self.dim() {
            return Err(crate::error::shape_err("instability_quotient", self.dim(), z.len()));
        }
        Ok(self.quotient_of_lifted(&z))
    }

    /// Eigenvalue report: `re,im,abs,class`, one line per eigenvalue.
    pub fn write_eigen_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "re,im,abs,class")?;
        for m in &self.modes {
            let mut vals = vec![m.eigenvalue];
            if m.width == 2 {
                vals.push(m.eigenvalue.conj());
            }
            for l in vals {
                writeln!(w, "{},{},{},{}", l.re, l.im, l.norm(), m.class.as_str())?;
            }
        }
        Ok(())
    }
}

struct Block {
    start: usize,
    size: usize,
}

fn schur_blocks(t: &DMatrix<f64>) -> Result<Vec<Block>> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            if i + 2 < n && t[(i + 2, i + 1)] != 0.0 {
                return Err(Error::EigenNonConvergent { dim: n });
            }
            blocks.push(Block { start: i, size: 2 });
            i += 2;
        } else {
            blocks.push(Block { start: i, size: 1 });
            i += 1;
        }
    }
    Ok(blocks)
}

fn block_eigenvalues(t: &DMatrix<f64>, b: &Block) -> Vec<C64> {
    let p = b.start;
    if b.size == 1 {
        return vec![C64::new(t[(p, p)], 0.0)];
    }
    let (a, bb, c, d) = (t[(p, p)], t[(p, p + 1)], t[(p + 1, p)], t[(p + 1, p + 1)]);
    let mean = 0.5 * (a + d);
    let disc = 0.25 * (a - d) * (a - d) + bb * c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        vec![C64::new(mean + s, 0.0), C64::new(mean - s, 0.0)]
    } else {
        let s = (-disc).sqrt();
        vec![C64::new(mean, s), C64::new(mean, -s)]
    }
}

/// Solves `(T - lambda I) y = 0` by back substitution over the quasi-triangular
/// Schur factor, with `y` supported on blocks up to and including `own`.
fn schur_eigenvector(t: &DMatrix<f64>, blocks: &[Block], own: usize, lambda: C64, smin: f64) -> Vec<C64> {
    let n = t.nrows();
    let mut y = vec![C64::new(0.0, 0.0); n];
    let b = &blocks[own];
    let p = b.start;
    if b.size == 1 {
        y[p] = C64::new(1.0, 0.0);
    } else {
        let (a, bb, c, d) = (t[(p, p)], t[(p, p + 1)], t[(p + 1, p)], t[(p + 1, p + 1)]);
        let first = [C64::new(bb, 0.0), lambda - a];
        let second = [lambda - d, C64::new(c, 0.0)];
        let norm = |v: &[C64; 2]| v[0].norm_sqr() + v[1].norm_sqr();
        let pick = if norm(&first) >= norm(&second) { first } else { second };
        y[p] = pick[0];
        y[p + 1] = pick[1];
    }
    let end = p + b.size;
    for blk in blocks[..own].iter().rev() {
        let q = blk.start;
        let mut rhs = [C64::new(0.0, 0.0); 2];
        for (r, rv) in rhs.iter_mut().enumerate().take(blk.size) {
            let row = q + r;
            let mut acc = C64::new(0.0, 0.0);
            for j in q + blk.size..end {
                acc += y[j] * t[(row, j)];
            }
            *rv = -acc;
        }
        if blk.size == 1 {
            let mut denom = C64::new(t[(q, q)], 0.0) - lambda;
            if denom.norm() < smin {
                denom = C64::new(smin, 0.0);
            }
            y[q] = rhs[0] / denom;
        } else {
            let m11 = C64::new(t[(q, q)], 0.0) - lambda;
            let m12 = C64::new(t[(q, q + 1)], 0.0);
            let m21 = C64::new(t[(q + 1, q)], 0.0);
            let m22 = C64::new(t[(q + 1, q + 1)], 0.0) - lambda;
            let mut det = m11 * m22 - m12 * m21;
            if det.norm() < smin * smin {
                det = C64::new(smin * smin, 0.0);
            }
            y[q] = (rhs[0] * m22 - m12 * rhs[1]) / det;
            y[q + 1] = (m11 * rhs[1] - m21 * rhs[0]) / det;
        }
        let big = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if big > 1e100 {
            for v in y.iter_mut() {
                *v /= big;
            }
        }
    }
    y
}

/// Full eigendecomposition through the real Schur form. Conjugate pairs are
/// kept as real 2x2 blocks; the left basis is the inverse of the right one.
pub fn eigendecompose(a: &DMatrix<f64>, epsilon: f64) -> Result<ModalDecomposition> {
    if !a.is_square() {
        return Err(crate::error::shape_err("eigendecompose", "square", format!("{:?}", a.shape())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("matrix has non-finite entries".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Precondition(format!("stability tolerance must be > 0, got {epsilon}")));
    }
    let n = a.nrows();
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000 * n.max(1)).ok_or(Error::EigenNonConvergent { dim: n })?;
    let (q, t) = schur.unpack();
    let blocks = schur_blocks(&t)?;
    let smin = (f64::EPSILON * t.amax()).max(f64::MIN_POSITIVE);

    let mut v = DMatrix::zeros(n, n);
    let mut d = DMatrix::zeros(n, n);
    let mut modes = Vec::new();
    let mut col = 0;
    for (bi, b) in blocks.iter().enumerate() {
        let lambdas = block_eigenvalues(&t, b);
        let complex_pair = lambdas[0].im != 0.0;
        let wanted: Vec<C64> = if complex_pair {
            vec![if lambdas[0].im > 0.0 { lambdas[0] } else { lambdas[1] }]
        } else {
            lambdas
        };
        for lambda in wanted {
            let y = schur_eigenvector(&t, &blocks, bi, lambda, smin);
            let mut x: Vec<C64> = (0..n)
                .map(|r| (0..n).fold(C64::new(0.0, 0.0), |acc, k| acc + y[k] * q[(r, k)]))
                .collect();
            normalize_phase(&mut x);
            if complex_pair {
                for r in 0..n {
                    v[(r, col)] = x[r].re;
                    v[(r, col + 1)] = x[r].im;
                }
                d[(col, col)] = lambda.re;
                d[(col, col + 1)] = lambda.im;
                d[(col + 1, col)] = -lambda.im;
                d[(col + 1, col + 1)] = lambda.re;
                modes.push(Mode {
                    eigenvalue: lambda,
                    column: col,
                    width: 2,
                    class: ModeClass::of(lambda.norm(), epsilon),
                });
                col += 2;
            } else {
                for r in 0..n {
                    v[(r, col)] = x[r].re;
                }
                d[(col, col)] = lambda.re;
                modes.push(Mode {
                    eigenvalue: C64::new(lambda.re, 0.0),
                    column: col,
                    width: 1,
                    class: ModeClass::of(lambda.re.abs(), epsilon),
                });
                col += 1;
            }
        }
    }

    let v_inv = v
        .clone()
        .try_inverse()
        .ok_or(Error::Defective { residual: f64::INFINITY })?;
    let w = v_inv.transpose();
    let recon = &v * &d * &v_inv;
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let residual = (recon - a).norm() / scale;
    if !(residual <= DEFECT_TOL) {
        return Err(Error::Defective { residual });
    }

    let mut decomp = ModalDecomposition {
        modes,
        v,
        w,
        d,
        epsilon,
        reconstruction_residual: residual,
        unstable_basis: DMatrix::zeros(n, 0),
    };
    let wu = decomp.unstable_left_block();
    if wu.ncols() > 0 {
        decomp.unstable_basis = orthonormalize(&wu);
    }
    Ok(decomp)
}

/// Gram-Schmidt with one reorthogonalization pass. Rows that are zero in every
/// input column stay exactly zero; numerically dependent columns are dropped.
fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let scale = m.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    for col in m.column_iter() {
        let mut v = col.into_owned();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-12 * scale {
            basis.push(v / norm);
        }
    }
    if basis.is_empty() {
        return DMatrix::zeros(m.nrows(), 0);
    }
    DMatrix::from_columns(&basis)
}

/// Unit norm, largest-modulus component made real and positive.
fn normalize_phase(x: &mut [C64]) {
    let (mut best, mut idx) = (0.0, 0);
    for (i, v) in x.iter().enumerate() {
        if v.norm() > best * (1.0 + 1e-12) {
            best = v.norm();
            idx = i;
        }
    }
    if best == 0.0 {
        return;
    }
    let phase = x[idx].conj() / x[idx].norm();
    let norm = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    for v in x.iter_mut() {
        *v = *v * phase / norm;
    }
}

/// Instability quotient sampled on a state grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryField {
    pub bounds: AxisBox,
    pub resolution: usize,
    pub nodes: Vec<Vec<f64>>,
    /// `None` marks nodes where the quotient is undefined.
    pub xi: Vec<Option<f64>>,
    pub truth: Option<Vec<Label>>,
    pub summary: Option<BoundarySummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySummary {
    pub mean_xi_stable: f64,
    pub mean_xi_unstable: f64,
    /// `mean_xi_unstable - mean_xi_stable`.
    pub contrast: f64,
    /// Fraction of nodes where `xi > XI_THRESHOLD` agrees with the truth label.
    pub accuracy: f64,
    pub undefined_nodes: usize,
}

impl BoundaryField {
    /// Exact 0/1 indicator of the labeled regions.
    pub fn ground_truth(bounds: AxisBox, resolution: usize, labels: Vec<Label>) -> Self {
        let nodes = bounds.grid(resolution);
        let xi = labels
            .iter()
            .map(|l| Some(if *l == Label::Unstable { 1.0 } else { 0.0 }))
            .collect();
        let mut field = Self {
            bounds,
            resolution,
            nodes: nodes.iter().map(|x| x.iter().copied().collect()).collect(),
            xi,
            truth: Some(labels),
            summary: None,
        };
        field.summary = field.summarize();
        field
    }

    fn summarize(&self) -> Option<BoundarySummary> {
        let truth = self.truth.as_ref()?;
        let (mut ss, mut ns, mut su, mut nu, mut hits, mut undefined) = (0.0, 0usize, 0.0, 0usize, 0usize, 0usize);
        for (xi, label) in self.xi.iter().zip(truth) {
            let Some(v) = xi else {
                undefined += 1;
                continue;
            };
            match label {
                Label::Stable => {
                    ss += v;
                    ns += 1;
                }
                Label::Unstable => {
                    su += v;
                    nu += 1;
                }
            }
            let predicted = if *v > XI_THRESHOLD { Label::Unstable } else { Label::Stable };
            if predicted == *label {
                hits += 1;
            }
        }
        let mean = |s: f64, c: usize| if c > 0 { s / c as f64 } else { f64::NAN };
        let (ms, mu) = (mean(ss, ns), mean(su, nu));
        let defined = self.xi.len() - undefined;
        Some(BoundarySummary {
            mean_xi_stable: ms,
            mean_xi_unstable: mu,
            contrast: mu - ms,
            accuracy: if defined > 0 { hits as f64 / defined as f64 } else { f64::NAN },
            undefined_nodes: undefined,
        })
    }

    /// `x0,..,x{n-1},xi,truth_label` per node; undefined quotients print as `nan`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.bounds.dim();
        let mut header: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        header.push("xi".into());
        header.push("truth_label".into());
        writeln!(w, "{}", header.join(","))?;
        for (k, x) in self.nodes.iter().enumerate() {
            for v in x {
                write!(w, "{v},")?;
            }
            match self.xi[k] {
                Some(v) => write!(w, "{v}")?,
                None => write!(w, "nan")?,
            }
            match &self.truth {
                Some(t) => writeln!(w, ",{}", t[k])?,
                None => writeln!(w, ",")?,
            }
        }
        Ok(())
    }
}

/// Labels every grid node by simulating it forward.
pub fn ground_truth_labels(
    system: &DynamicalSystem,
    bounds: &AxisBox,
    resolution: usize,
    horizon: usize,
    bound: f64,
) -> Result<Vec<Label>> {
    let nodes = bounds.grid(resolution);
    Ok(simulate_all(system, &nodes, horizon, bound)?
        .into_iter()
        .map(|t| t.label)
        .collect())
}

/// Evaluates the instability quotient of `model` at every node of the grid.
pub fn boundary_grid(
    model: &LiftedLinearModel,
    bounds: &AxisBox,
    resolution: usize,
    epsilon: f64,
    truth: Option<Vec<Label>>,
) -> Result<BoundaryField> {
    if resolution < 2 {
        return Err(Error::Precondition("grid resolution must be >= 2 per axis".into()));
    }
    let decomp = eigendecompose(&model.a, epsilon)?;
    boundary_grid_with(&decomp, model.dictionary.as_ref(), bounds, resolution, truth)
}

/// Same as [`boundary_grid`] with an existing decomposition.
pub fn boundary_grid_with(
    decomp: &ModalDecomposition,
    dict: &dyn ObservableDictionary,
    bounds: &AxisBox,
    resolution: usize,
    truth: Option<Vec<Label>>,
) -> Result<BoundaryField> {
    let nodes = bounds.grid(resolution);
    if let Some(t) = &truth {
        if t.len() != nodes.len() {
            return Err(crate::error::shape_err("boundary truth labels", nodes.len(), t.len()));
        }
    }
    let xi = nodes
        .par_iter()
        .map(|x| decomp.instability_quotient(dict, x))
        .collect::<Result<Vec<_>>>()?;
    let mut field = BoundaryField {
        bounds: bounds.clone(),
        resolution,
        nodes: nodes.iter().map(|x| x.iter().copied().collect()).collect(),
        xi,
        truth,
        summary: None,
    };
    field.summary = field.summarize();
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::IdentityDictionary;
    use crate::encoding::Provenance;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn diag(vals: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(vals))
    }

    #[test]
    fn diagonal_matrix_classification() {
        let dec = eigendecompose(&diag(&[0.5, 2.0]), 0.01).unwrap();
        assert_eq!(dec.modes.len(), 2);
        let s = dec.indices(ModeClass::Stable);
        let u = dec.indices(ModeClass::Unstable);
        assert_eq!(s.len(), 1);
        assert_eq!(u.len(), 1);
        assert!(dec.indices(ModeClass::Marginal).is_empty());
        assert_eq!(dec.modes[s[0]].eigenvalue.re, 0.5);
        assert_eq!(dec.modes[u[0]].eigenvalue.re, 2.0);
        // eigenvectors are the coordinate axes
        let vu = dec.v.column(dec.modes[u[0]].column);
        assert!((vu[1].abs() - 1.0).abs() < 1e-14 && vu[0].abs() < 1e-14);
    }

    #[test]
    fn scaled_rotation_is_one_stable_pair() {
        let th = 0.7f64;
        let a = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]) * 0.9;
        let dec = eigendecompose(&a, DEFAULT_STABILITY_EPS).unwrap();
        assert_eq!(dec.modes.len(), 1);
        let m = dec.modes[0];
        assert_eq!(m.width, 2);
        assert_eq!(m.class, ModeClass::Stable);
        assert!((m.eigenvalue.norm() - 0.9).abs() < 1e-12);
        assert!((m.eigenvalue.im.abs() - 0.9 * th.sin()).abs() < 1e-12);
        assert!((dec.reconstruct() - a).norm() < 1e-12);
    }

    #[test]
    fn identity_is_all_marginal() {
        let dec = eigendecompose(&DMatrix::identity(4, 4), DEFAULT_STABILITY_EPS).unwrap();
        assert_eq!(dec.indices(ModeClass::Marginal).len(), 4);
    }

    #[test]
    fn jordan_block_is_defective() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(eigendecompose(&a, 1e-3), Err(Error::Defective { .. })));
    }

    #[test]
    fn projection_of_eigenvectors() {
        let dec = eigendecompose(&diag(&[0.5, 2.0]), 0.01).unwrap();
        let zs = dec.project_unstable(&DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(zs.norm(), 0.0);
        let zu = dec.project_unstable(&DVector::from_vec(vec![0.0, 1.0]));
        assert!((zu.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn quotient_of_diagonal_model() {
        let dec = eigendecompose(&diag(&[0.5, 2.0]), 0.01).unwrap();
        let z = DVector::from_vec(vec![1.0, 1.0]) / 2f64.sqrt();
        let xi = dec.quotient_of_lifted(&z).unwrap();
        assert!((xi - 1.0 / 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(dec.quotient_of_lifted(&DVector::from_vec(vec![1.0, 0.0])), Some(0.0));
        assert!((dec.quotient_of_lifted(&DVector::from_vec(vec![0.0, -3.0])).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(dec.quotient_of_lifted(&DVector::zeros(2)), None);
    }

    #[test]
    fn block_diagonal_model_separates_exactly() {
        // stable block acting on coordinates 0..2, unstable block on 2..4
        let mut a = DMatrix::zeros(4, 4);
        a.view_mut((0, 0), (2, 2)).copy_from(&DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]));
        a.view_mut((2, 2), (2, 2)).copy_from(&DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.0, 2.5]));
        let dec = eigendecompose(&a, DEFAULT_STABILITY_EPS).unwrap();
        assert_eq!(dec.indices(ModeClass::Unstable).len(), 2);
        let z = DVector::from_vec(vec![0.7, -1.3, 0.0, 0.0]);
        assert_eq!(dec.project_unstable(&z).norm(), 0.0);
        assert_eq!(dec.quotient_of_lifted(&z), Some(0.0));
    }

    #[test]
    fn biorthogonal_and_reconstructs() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[0.9, 0.3, -0.2, 0.1, -0.4, 1.1, 0.5, 0.0, 0.2, -0.3, 0.6, 0.7, 0.0, 0.1, -0.8, 1.3],
        );
        let dec = eigendecompose(&a, DEFAULT_STABILITY_EPS).unwrap();
        let prod = dec.w.transpose() * &dec.v;
        assert!((prod - DMatrix::identity(4, 4)).amax() < 1e-8);
        assert!((dec.reconstruct() - &a).norm() <= 1e-6 * a.norm());
        assert_eq!(
            dec.modes.iter().map(|m| m.width).sum::<usize>(),
            4,
            "classes partition the modes"
        );
    }

    #[test]
    fn model_without_unstable_modes_gives_zero_field() {
        let model = LiftedLinearModel::new(Arc::new(IdentityDictionary::new(2)), diag(&[0.5, 0.8]), Provenance::Edmd).unwrap();
        let b = AxisBox::cube(2, -1.0, 1.0).unwrap();
        let field = boundary_grid(&model, &b, 5, DEFAULT_STABILITY_EPS, None).unwrap();
        assert!(field.xi.iter().all(|v| v.map_or(true, |x| x == 0.0)));
        // the origin has |z| = 0
        assert_eq!(field.xi.iter().filter(|v| v.is_none()).count(), 1);
    }

    #[test]
    fn decomposable_model_reproduces_indicator() {
        // states on the x1 = 0 line are stable, off it unstable only along x1
        let model = LiftedLinearModel::new(Arc::new(IdentityDictionary::new(2)), diag(&[0.5, 2.0]), Provenance::Edmd).unwrap();
        let b = AxisBox::new(vec![1.0, 0.0], vec![2.0, 0.0]).unwrap();
        let field = boundary_grid(&model, &b, 3, DEFAULT_STABILITY_EPS, Some(vec![Label::Stable; 9])).unwrap();
        assert!(field.xi.iter().all(|v| *v == Some(0.0)));
        assert_eq!(field.summary.unwrap().accuracy, 1.0);
    }

    #[test]
    fn ground_truth_field_is_binary() {
        let b = AxisBox::cube(2, -1.0, 1.0).unwrap();
        let labels = vec![Label::Stable, Label::Unstable, Label::Stable, Label::Unstable];
        let f = BoundaryField::ground_truth(b, 2, labels);
        assert_eq!(f.xi, vec![Some(0.0), Some(1.0), Some(0.0), Some(1.0)]);
        let s = f.summary.unwrap();
        assert_eq!(s.contrast, 1.0);
        assert_eq!(s.accuracy, 1.0);
    }

    #[test]
    fn eigen_report_lists_conjugates() {
        let th = 0.3f64;
        let a = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]) * 1.2;
        let dec = eigendecompose(&a, DEFAULT_STABILITY_EPS).unwrap();
        let mut out = Vec::new();
        dec.write_eigen_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().skip(1).all(|l| l.ends_with(",unstable")));
    }

    proptest! {
        #[test]
        fn quotient_is_scale_invariant_and_bounded(
            entries in proptest::collection::vec(-1.5f64..1.5, 25),
            z in proptest::collection::vec(-2.0f64..2.0, 5),
            c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
        ) {
            let a = DMatrix::from_row_slice(5, 5, &entries);
            let Ok(dec) = eigendecompose(&a, DEFAULT_STABILITY_EPS) else { return Ok(()); };
            let z = DVector::from_vec(z);
            prop_assume!(z.norm() > 1e-6);
            let xi = dec.quotient_of_lifted(&z).unwrap();
            let xi_c = dec.quotient_of_lifted(&(&z * c)).unwrap();
            prop_assert!((xi - xi_c).abs() <= 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&xi));
        }

        #[test]
        fn random_matrices_reconstruct(entries in proptest::collection::vec(-2.0f64..2.0, 36)) {
            let a = DMatrix::from_row_slice(6, 6, &entries);
            let dec = eigendecompose(&a, DEFAULT_STABILITY_EPS).unwrap();
            prop_assert!((dec.reconstruct() - &a).norm() <= 1e-6 * a.norm());
            let prod = dec.w.transpose() * &dec.v;
            prop_assert!((prod - DMatrix::identity(6, 6)).amax() < 1e-8);
            let widths: usize = dec.modes.iter().map(|m| m.width).sum();
            prop_assert_eq!(widths, 6);
            let (u, m, s) = (
                dec.indices(ModeClass::Unstable).len(),
                dec.indices(ModeClass::Marginal).len(),
                dec.indices(ModeClass::Stable).len(),
            );
            prop_assert_eq!(u + m + s, dec.modes.len());
        }
    }
}
