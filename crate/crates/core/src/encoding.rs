//! Transition matrices on the lifted space: direct encoding from inner
//! products over a domain (`A = Q R^+`) and EDMD least squares from snapshots.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{lift_rows, DictionaryDesc, ObservableDictionary};
use crate::dynamics::{AxisBox, DynamicalSystem, SnapshotDataset, State};
use crate::error::{shape_err, Error, Result};
use crate::neural::SsogDictionary;

pub const DEFAULT_SVD_TOL: f64 = 1e-10;
pub const DEFAULT_RESOLUTION: usize = 200;
/// Largest fraction of quadrature nodes `f` may send to non-finite values.
pub const MAX_REJECTED_FRACTION: f64 = 0.01;

const BLOCK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum Quadrature {
    /// Tensor-product trapezoid rule, `resolution` points per axis.
    TensorTrapezoid { resolution: usize },
    /// Uniform samples, each weighted by `volume / samples`.
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationDomain {
    pub bounds: AxisBox,
    pub quadrature: Quadrature,
}

impl IntegrationDomain {
    pub fn new(bounds: AxisBox, quadrature: Quadrature) -> Result<Self> {
        if bounds.lo.iter().zip(&bounds.hi).any(|(l, h)| !(l < h)) {
            return Err(Error::Precondition(format!(
                "integration domain needs lo < hi on every axis ({:?} / {:?})",
                bounds.lo, bounds.hi
            )));
        }
        match quadrature {
            Quadrature::TensorTrapezoid { resolution } if resolution < 2 => {
                return Err(Error::Precondition("trapezoid resolution must be >= 2".into()))
            }
            Quadrature::MonteCarlo { samples: 0, .. } => {
                return Err(Error::Precondition("Monte Carlo needs at least one sample".into()))
            }
            _ => {}
        }
        Ok(Self { bounds, quadrature })
    }

    /// Trapezoid at `resolution` per axis for `n <= 3`, otherwise Monte Carlo.
    pub fn with_default_scheme(bounds: AxisBox, resolution: usize, mc_samples: usize, seed: u64) -> Result<Self> {
        let quadrature = if bounds.dim() <= 3 {
            Quadrature::TensorTrapezoid { resolution }
        } else {
            Quadrature::MonteCarlo {
                samples: mc_samples,
                seed,
            }
        };
        Self::new(bounds, quadrature)
    }

    pub fn trapezoid(bounds: AxisBox, resolution: usize) -> Result<Self> {
        Self::new(bounds, Quadrature::TensorTrapezoid { resolution })
    }

    /// Quadrature nodes and their weights.
    pub fn nodes(&self) -> (Vec<State>, Vec<f64>) {
        match &self.quadrature {
            Quadrature::TensorTrapezoid { resolution } => {
                let r = *resolution;
                let weights_1d: Vec<Vec<f64>> = (0..self.bounds.dim())
                    .map(|i| {
                        let h = (self.bounds.hi[i] - self.bounds.lo[i]) / (r - 1) as f64;
                        (0..r)
                            .map(|k| if k == 0 || k == r - 1 { 0.5 * h } else { h })
                            .collect()
                    })
                    .collect();
                let nodes = self.bounds.grid(r);
                let weights = (0..nodes.len())
                    .map(|mut idx| {
                        let mut w = 1.0;
                        for axis in &weights_1d {
                            w *= axis[idx % r];
                            idx /= r;
                        }
                        w
                    })
                    .collect();
                (nodes, weights)
            }
            Quadrature::MonteCarlo { samples, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let nodes = self.bounds.sample_uniform(*samples, &mut rng);
                let w = self.bounds.volume() / *samples as f64;
                (nodes, vec![w; *samples])
            }
        }
    }
}

/// Dataset bounding box grown by `inflate`, then shrunk about its center
/// until `f` stays finite on all but [`MAX_REJECTED_FRACTION`] of the nodes.
pub fn clipped_dataset_domain(
    dataset: &SnapshotDataset,
    system: &DynamicalSystem,
    inflate: f64,
    quadrature: Quadrature,
) -> Result<IntegrationDomain> {
    let mut bounds = dataset
        .bounding_box()
        .ok_or_else(|| Error::EmptyDataset("no states to bound".into()))?
        .inflate(inflate);
    for _ in 0..200 {
        let domain = IntegrationDomain::new(bounds.clone(), quadrature.clone())?;
        let (nodes, _) = domain.nodes();
        let rejected = nodes.par_iter().filter(|x| system.step_rk4(x).is_err()).count();
        if (rejected as f64) <= MAX_REJECTED_FRACTION * nodes.len() as f64 {
            return Ok(domain);
        }
        let (lo, hi) = bounds
            .lo
            .iter()
            .zip(&bounds.hi)
            .map(|(l, h)| {
                let (c, r) = (0.5 * (l + h), 0.5 * (h - l) * 0.9);
                (c - r, c + r)
            })
            .unzip();
        bounds = AxisBox { lo, hi };
    }
    Err(Error::DomainEscape {
        rejected: 0,
        total: 0,
    })
}

/// Sums per-block partial matrices pairwise in a fixed tree order so the
/// result does not depend on how blocks were scheduled.
fn tree_sum(mut parts: Vec<DMatrix<f64>>, rows: usize, cols: usize) -> DMatrix<f64> {
    if parts.is_empty() {
        return DMatrix::zeros(rows, cols);
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a + b),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().unwrap()
}

/// Lifts a block of states into a `len x d` matrix, or reports the first
/// non-finite entry.
fn lift_block(dict: &dyn ObservableDictionary, xs: &[State]) -> std::result::Result<DMatrix<f64>, (usize, Vec<f64>)> {
    let d = dict.lifted_dim();
    let mut out = DMatrix::zeros(xs.len(), d);
    let mut z = vec![0.0; d];
    for (r, x) in xs.iter().enumerate() {
        dict.lift_into(x.as_slice(), &mut z);
        if let Some(k) = z.iter().position(|v| !v.is_finite()) {
            return Err((k, x.iter().copied().collect()));
        }
        for (c, v) in z.iter().enumerate() {
            out[(r, c)] = *v;
        }
    }
    Ok(out)
}

fn weighted_gram(left: &DMatrix<f64>, right: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut scaled = right.clone();
    for (r, wr) in w.iter().enumerate() {
        scaled.row_mut(r).scale_mut(*wr);
    }
    left.transpose() * scaled
}

/// `R_ij = ∫ g_i g_j dx` by the domain's quadrature, symmetrized.
pub fn compute_r(dict: &dyn ObservableDictionary, domain: &IntegrationDomain) -> Result<DMatrix<f64>> {
    check_dims(dict, domain)?;
    let (nodes, weights) = domain.nodes();
    let d = dict.lifted_dim();
    let parts = nodes
        .par_chunks(BLOCK)
        .zip(weights.par_chunks(BLOCK))
        .map(|(xs, ws)| {
            let z = lift_block(dict, xs).map_err(|(k, x)| Error::Integrand { i: k, j: k, x })?;
            Ok(weighted_gram(&z, &z, ws))
        })
        .collect::<Result<Vec<_>>>()?;
    let r = tree_sum(parts, d, d);
    Ok((&r + r.transpose()) * 0.5)
}

/// `Q_ij = ∫ g_i(f(x)) g_j(x) dx`: the composition sits on the row index.
/// Nodes where `f` is non-finite are dropped; more than 1% dropped is an error.
pub fn compute_q(
    dict: &dyn ObservableDictionary,
    system: &DynamicalSystem,
    domain: &IntegrationDomain,
) -> Result<DMatrix<f64>> {
    Ok(encoding_matrices(dict, system, domain)?.q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMatrices {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub rejected_nodes: usize,
    pub total_nodes: usize,
}

/// Assembles `Q` and `R` over the same accepted nodes in one pass.
pub fn encoding_matrices(
    dict: &dyn ObservableDictionary,
    system: &DynamicalSystem,
    domain: &IntegrationDomain,
) -> Result<EncodingMatrices> {
    check_dims(dict, domain)?;
    if system.dim() != dict.state_dim() {
        return Err(shape_err("encoding system", dict.state_dim(), system.dim()));
    }
    let (nodes, weights) = domain.nodes();
    let d = dict.lifted_dim();
    let total = nodes.len();
    let parts = nodes
        .par_chunks(BLOCK)
        .zip(weights.par_chunks(BLOCK))
        .map(|(xs, ws)| {
            let mut keep_x = Vec::with_capacity(xs.len());
            let mut keep_fx = Vec::with_capacity(xs.len());
            let mut keep_w = Vec::with_capacity(xs.len());
            for (x, w) in xs.iter().zip(ws) {
                if let Ok(fx) = system.step_rk4(x) {
                    keep_x.push(x.clone());
                    keep_fx.push(fx);
                    keep_w.push(*w);
                }
            }
            let rejected = xs.len() - keep_x.len();
            let z = lift_block(dict, &keep_x).map_err(|(k, x)| Error::Integrand { i: k, j: k, x })?;
            let zf = match lift_block(dict, &keep_fx) {
                Ok(zf) => zf,
                Err((k, fx)) => return Err(Error::Evaluation { index: k, value: f64::NAN, x: fx }),
            };
            Ok((weighted_gram(&zf, &z, &keep_w), weighted_gram(&z, &z, &keep_w), rejected))
        })
        .collect::<Result<Vec<_>>>()?;
    let rejected: usize = parts.iter().map(|p| p.2).sum();
    if rejected as f64 > MAX_REJECTED_FRACTION * total as f64 {
        return Err(Error::DomainEscape { rejected, total });
    }
    if rejected > 0 {
        log::warn!("{rejected} of {total} quadrature nodes rejected (f non-finite)");
    }
    let (qs, rs): (Vec<_>, Vec<_>) = parts.into_iter().map(|(q, r, _)| (q, r)).unzip();
    let q = tree_sum(qs, d, d);
    let r = tree_sum(rs, d, d);
    Ok(EncodingMatrices {
        q,
        r: (&r + r.transpose()) * 0.5,
        rejected_nodes: rejected,
        total_nodes: total,
    })
}

fn check_dims(dict: &dyn ObservableDictionary, domain: &IntegrationDomain) -> Result<()> {
    if domain.bounds.dim() != dict.state_dim() {
        return Err(shape_err("integration domain", dict.state_dim(), domain.bounds.dim()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdDiagnostics {
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    pub kept: usize,
    pub truncated: usize,
    /// `sigma_max / sigma_min` over all singular values; `None` if singular.
    pub condition: Option<f64>,
}

/// Pseudo-inverse dropping singular values below `tol * sigma_max`.
pub fn truncated_pinv(m: &DMatrix<f64>, tol: f64) -> Result<(DMatrix<f64>, SvdDiagnostics)> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Precondition(format!("svd_tol must lie in (0, 1), got {tol}")));
    }
    let (rows, cols) = m.shape();
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 100_000)
        .ok_or(Error::EigenNonConvergent { dim: rows.max(cols) })?;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sigma = &svd.singular_values;
    let smax = sigma.max();
    let threshold = tol * smax;
    let mut pinv = DMatrix::zeros(cols, rows);
    let mut kept = 0;
    if smax > 0.0 {
        for (k, s) in sigma.iter().enumerate() {
            if *s > threshold {
                kept += 1;
                pinv += v_t.row(k).transpose() * u.column(k).transpose() * (1.0 / s);
            }
        }
    }
    if kept == 0 {
        return Err(Error::DegenerateDictionary);
    }
    let smin = sigma.min();
    let mut singular_values: Vec<f64> = sigma.iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    Ok((
        pinv,
        SvdDiagnostics {
            singular_values,
            threshold,
            kept,
            truncated: sigma.len() - kept,
            condition: (smin > 0.0).then(|| smax / smin),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    DirectEncoding,
    Edmd,
    LearnedLinearLayer,
}

/// A dictionary together with the square matrix advancing its lifted state.
#[derive(Clone)]
pub struct LiftedLinearModel {
    pub dictionary: Arc<dyn ObservableDictionary>,
    pub a: DMatrix<f64>,
    pub provenance: Provenance,
    pub svd: Option<SvdDiagnostics>,
    pub domain: Option<IntegrationDomain>,
    pub rejected_nodes: usize,
}

impl std::fmt::Debug for LiftedLinearModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiftedLinearModel")
            .field("dictionary", &self.dictionary.describe())
            .field("order", &self.a.nrows())
            .field("provenance", &self.provenance)
            .finish()
    }
}

impl LiftedLinearModel {
    pub fn new(dictionary: Arc<dyn ObservableDictionary>, a: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        let d = dictionary.lifted_dim();
        if a.shape() != (d, d) {
            return Err(shape_err("LiftedLinearModel", format!("({d}, {d})"), format!("{:?}", a.shape())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("transition matrix has non-finite entries".into()));
        }
        Ok(Self {
            dictionary,
            a,
            provenance,
            svd: None,
            domain: None,
            rejected_nodes: 0,
        })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.dictionary.state_dim()
    }

    pub fn lift(&self, x: &State) -> Result<DVector<f64>> {
        self.dictionary.eval_lift(x)
    }

    pub fn bundle(&self, name: &str) -> ModelBundle {
        ModelBundle {
            name: name.to_string(),
            dictionary: self.dictionary.describe(),
            order: self.order(),
            a: (0..self.a.nrows())
                .map(|r| self.a.row(r).iter().copied().collect())
                .collect(),
            provenance: self.provenance,
            domain: self.domain.clone(),
            svd: self.svd.clone(),
            rejected_nodes: self.rejected_nodes,
            config_hash: None,
        }
    }
}

/// `A = Q R^+` with the composition on the first index. Uses only the
/// dictionary, the map and the domain.
pub fn direct_encode(
    dict: Arc<dyn ObservableDictionary>,
    system: &DynamicalSystem,
    domain: &IntegrationDomain,
    svd_tol: f64,
) -> Result<LiftedLinearModel> {
    let mats = encoding_matrices(dict.as_ref(), system, domain)?;
    let (r_pinv, diag) = truncated_pinv(&mats.r, svd_tol)?;
    let a = &mats.q * r_pinv;
    let mut model = LiftedLinearModel::new(dict, a, Provenance::DirectEncoding)?;
    model.svd = Some(diag);
    model.domain = Some(domain.clone());
    model.rejected_nodes = mats.rejected_nodes;
    Ok(model)
}

/// Least squares `min_A sum |z_{k+1} - A z_k|^2` through the normal equations
/// and the same truncated pseudo-inverse.
pub fn edmd_fit(dict: Arc<dyn ObservableDictionary>, dataset: &SnapshotDataset, svd_tol: f64) -> Result<LiftedLinearModel> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("EDMD needs at least one pair".into()));
    }
    let zk = lift_rows(dict.as_ref(), &dataset.xk)?;
    let zkp1 = lift_rows(dict.as_ref(), &dataset.xkp1)?;
    if zk.nrows() < zk.ncols() {
        log::warn!(
            "EDMD is underdetermined: {} samples for lifted dimension {}",
            zk.nrows(),
            zk.ncols()
        );
    }
    let gram = zk.transpose() * &zk;
    let cross = zkp1.transpose() * &zk;
    let (g_pinv, diag) = truncated_pinv(&gram, svd_tol)?;
    let mut model = LiftedLinearModel::new(dict, cross * g_pinv, Provenance::Edmd)?;
    model.svd = Some(diag);
    Ok(model)
}

/// Recomputes the joint model's linear layer by direct encoding over the
/// concatenated dictionary `[x; g_u; g_s]`.
pub fn relift_linear_layer(
    ssog: Arc<SsogDictionary>,
    system: &DynamicalSystem,
    domain: &IntegrationDomain,
    svd_tol: f64,
) -> Result<LiftedLinearModel> {
    direct_encode(ssog, system, domain, svd_tol)
}

/// JSON form of a model. Neural weights are referenced by checkpoint path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub name: String,
    pub dictionary: DictionaryDesc,
    pub order: usize,
    pub a: Vec<Vec<f64>>,
    pub provenance: Provenance,
    pub domain: Option<IntegrationDomain>,
    pub svd: Option<SvdDiagnostics>,
    pub rejected_nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl ModelBundle {
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        let d = self.order;
        if self.a.len() != d || self.a.iter().any(|r| r.len() != d) {
            return Err(Error::Parse(format!("bundle `{}` matrix is not {d}x{d}", self.name)));
        }
        Ok(DMatrix::from_row_iterator(d, d, self.a.iter().flatten().copied()))
    }
}

/// Row-major CSV with a `# rows cols` header line.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, mut w: W) -> Result<()> {
    writeln!(w, "# {} {}", m.nrows(), m.ncols())?;
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{FnDictionary, IdentityDictionary, RbfDictionary, RbfForm};
    use crate::dynamics::{Label, DEFAULT_DT};

    struct Constant;

    impl ObservableDictionary for Constant {
        fn state_dim(&self) -> usize {
            1
        }
        fn observable_count(&self) -> usize {
            0
        }
        fn lift_into(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = 1.0;
        }
        fn describe(&self) -> DictionaryDesc {
            DictionaryDesc::Custom {
                n: 1,
                m: 0,
                name: "one".into(),
            }
        }
    }

    fn unit(resolution: usize) -> IntegrationDomain {
        IntegrationDomain::trapezoid(AxisBox::new(vec![0.0], vec![1.0]).unwrap(), resolution).unwrap()
    }

    fn monomials(powers: &[i32]) -> FnDictionary {
        FnDictionary::new(
            "monomials",
            1,
            powers
                .iter()
                .map(|&p| -> crate::dictionary::ScalarObservable { Arc::new(move |x: &[f64]| x[0].powi(p)) })
                .collect(),
        )
    }

    fn square_map() -> DynamicalSystem {
        DynamicalSystem::discrete("square", 1, |x: &State| x.map(|v| v * v)).unwrap()
    }

    #[test]
    fn constant_observable_integrates_to_one() {
        let r = compute_r(&Constant, &unit(11)).unwrap();
        assert!((r[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn monomial_gram_matrix() {
        let r = compute_r(&monomials(&[2]), &unit(1000)).unwrap();
        let want = [[1.0 / 3.0, 0.25], [0.25, 0.2]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((r[(i, j)] - want[i][j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gram_matrix_is_symmetric_psd() {
        let b = AxisBox::cube(2, -1.5, 1.5).unwrap();
        let dict = RbfDictionary::over_box(&b, 4, 1.0, RbfForm::Gaussian).unwrap();
        let r = compute_r(&dict, &IntegrationDomain::trapezoid(b, 60).unwrap()).unwrap();
        assert!((&r - r.transpose()).amax() <= 1e-10 * r.amax());
        let eig = r.clone().symmetric_eigenvalues();
        assert!(eig.min() >= -1e-10 * eig.max());
    }

    #[test]
    fn identity_map_gives_q_equal_r() {
        let dict = monomials(&[2]);
        let id = DynamicalSystem::discrete("id", 1, |x: &State| x.clone()).unwrap();
        let m = encoding_matrices(&dict, &id, &unit(101)).unwrap();
        assert_eq!(m.q, m.r);
    }

    #[test]
    fn square_map_q_matrix() {
        let q = compute_q(&monomials(&[2]), &square_map(), &unit(1000)).unwrap();
        let want = [[0.25, 0.2], [1.0 / 6.0, 1.0 / 7.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((q[(i, j)] - want[i][j]).abs() < 1e-6, "Q[{i},{j}] = {}", q[(i, j)]);
            }
        }
    }

    #[test]
    fn linear_scalar_map_scales_q() {
        let a = 0.7;
        let sys = DynamicalSystem::discrete("scale", 1, move |x: &State| x * a).unwrap();
        let domain = IntegrationDomain::trapezoid(AxisBox::new(vec![-1.0], vec![1.0]).unwrap(), 201).unwrap();
        let m = encoding_matrices(&IdentityDictionary::new(1), &sys, &domain).unwrap();
        assert!((m.q[(0, 0)] - a * m.r[(0, 0)]).abs() < 1e-15);
    }

    #[test]
    fn diagonal_linear_system_is_recovered() {
        let sys = DynamicalSystem::linear_map(DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]))).unwrap();
        let domain = IntegrationDomain::trapezoid(AxisBox::cube(2, -1.0, 1.0).unwrap(), 200).unwrap();
        let model = direct_encode(Arc::new(IdentityDictionary::new(2)), &sys, &domain, DEFAULT_SVD_TOL).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        assert!((&model.a - want).amax() <= 1e-6);
        assert_eq!(model.provenance, Provenance::DirectEncoding);
        assert_eq!(model.svd.as_ref().unwrap().truncated, 0);
    }

    #[test]
    fn closed_monomial_lift_is_exact() {
        let model = direct_encode(Arc::new(monomials(&[2, 4])), &square_map(), &unit(200), DEFAULT_SVD_TOL).unwrap();
        let rows = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((model.a[(i, j)] - v).abs() <= 1e-6, "A[{i},{j}] = {}", model.a[(i, j)]);
            }
        }
    }

    #[test]
    fn duplicated_observable_engages_truncation() {
        let dict = FnDictionary::new("dup", 1, vec![Arc::new(|x: &[f64]| 2.0 * x[0])]);
        let sys = DynamicalSystem::discrete("half", 1, |x: &State| x * 0.5).unwrap();
        let domain = IntegrationDomain::trapezoid(AxisBox::new(vec![-1.0], vec![1.0]).unwrap(), 101).unwrap();
        let model = direct_encode(Arc::new(dict), &sys, &domain, DEFAULT_SVD_TOL).unwrap();
        assert_eq!(model.svd.as_ref().unwrap().truncated, 1);
        let z = DVector::from_vec(vec![0.3, 0.6]);
        let next = &model.a * z;
        assert!((next[0] - 0.15).abs() < 1e-12);
        assert!((next[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn zero_dictionary_is_degenerate() {
        struct Zero;
        impl ObservableDictionary for Zero {
            fn state_dim(&self) -> usize {
                1
            }
            fn observable_count(&self) -> usize {
                0
            }
            fn lift_into(&self, _x: &[f64], out: &mut [f64]) {
                out[0] = 0.0;
            }
            fn describe(&self) -> DictionaryDesc {
                DictionaryDesc::Custom { n: 1, m: 0, name: "zero".into() }
            }
        }
        let sys = DynamicalSystem::discrete("id", 1, |x: &State| x.clone()).unwrap();
        let err = direct_encode(Arc::new(Zero), &sys, &unit(11), DEFAULT_SVD_TOL).unwrap_err();
        assert!(matches!(err, Error::DegenerateDictionary));
    }

    #[test]
    fn escaping_map_is_rejected() {
        let sys = DynamicalSystem::discrete("blowup", 1, |x: &State| x.map(|v| if v > 0.5 { f64::INFINITY } else { v })).unwrap();
        let err = compute_q(&IdentityDictionary::new(1), &sys, &unit(101)).unwrap_err();
        assert!(matches!(err, Error::DomainEscape { .. }));
    }

    #[test]
    fn edmd_recovers_linear_system() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 1.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = AxisBox::cube(2, -1.0, 1.0).unwrap().sample_uniform(50, &mut rng);
        let xk = DMatrix::from_fn(50, 2, |r, c| xs[r][c]);
        let xkp1 = (&a * xk.transpose()).transpose();
        let ds = SnapshotDataset::new(xk, xkp1, vec![Label::Stable; 50]).unwrap();
        let model = edmd_fit(Arc::new(IdentityDictionary::new(2)), &ds, DEFAULT_SVD_TOL).unwrap();
        assert!((&model.a - a).amax() < 1e-8);
    }

    #[test]
    fn edmd_single_pair_is_minimal_norm() {
        let ds = SnapshotDataset::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[0.3, -0.4]),
            vec![Label::Stable],
        )
        .unwrap();
        let model = edmd_fit(Arc::new(IdentityDictionary::new(2)), &ds, DEFAULT_SVD_TOL).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, -0.4, 0.0]);
        assert!((&model.a - want).amax() < 1e-14);
    }

    #[test]
    fn direct_encoding_is_deterministic() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        let b = AxisBox::cube(2, -1.5, 1.5).unwrap();
        let dict: Arc<dyn ObservableDictionary> = Arc::new(RbfDictionary::over_box(&b, 3, 1.0, RbfForm::Gaussian).unwrap());
        let domain = IntegrationDomain::trapezoid(b, 80).unwrap();
        let a = direct_encode(dict.clone(), &sys, &domain, DEFAULT_SVD_TOL).unwrap();
        let b = direct_encode(dict, &sys, &domain, DEFAULT_SVD_TOL).unwrap();
        assert_eq!(a.a, b.a);
    }

    #[test]
    fn trapezoid_weights_sum_to_volume() {
        let d = IntegrationDomain::trapezoid(AxisBox::new(vec![-1.0, 0.0], vec![1.0, 3.0]).unwrap(), 17).unwrap();
        let (_, w) = d.nodes();
        assert!((w.iter().sum::<f64>() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_domains_are_rejected() {
        assert!(IntegrationDomain::trapezoid(AxisBox::new(vec![0.0], vec![1.0]).unwrap(), 1).is_err());
        assert!(IntegrationDomain::trapezoid(AxisBox::new(vec![1.0], vec![1.0]).unwrap(), 10).is_err());
        assert!(truncated_pinv(&DMatrix::identity(2, 2), 0.0).is_err());
    }

    #[test]
    fn model_bundle_round_trip() {
        let model = LiftedLinearModel::new(
            Arc::new(IdentityDictionary::new(2)),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            Provenance::Edmd,
        )
        .unwrap();
        let b = model.bundle("edmd");
        let back: ModelBundle = serde_json::from_str(&serde_json::to_string(&b).unwrap()).unwrap();
        assert_eq!(back.matrix().unwrap(), model.a);
        let mut csv = Vec::new();
        write_matrix_csv(&model.a, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "# 2 2\n1,2\n3,4\n");
    }
}
