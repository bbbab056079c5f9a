//! Observable dictionaries. Every dictionary lifts `x` to `z = [x; g_1(x); ..; g_m(x)]`,
//! so the first `n` lifted coordinates are always the state itself.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{linspace, AxisBox, SnapshotDataset, State};
use crate::error::{shape_err, Error, Result};

pub trait ObservableDictionary: Send + Sync {
    fn state_dim(&self) -> usize;

    /// Number of observables after the state prefix.
    fn observable_count(&self) -> usize;

    fn lifted_dim(&self) -> usize {
        self.state_dim() + self.observable_count()
    }

    /// Writes the full lifted vector into `out` (length `lifted_dim`). No
    /// finiteness checks.
    fn lift_into(&self, x: &[f64], out: &mut [f64]);

    fn describe(&self) -> DictionaryDesc;

    /// Checked lift: length and finiteness are validated.
    fn eval_lift(&self, x: &State) -> Result<State> {
        if x.len() != self.state_dim() {
            return Err(shape_err("eval_lift", self.state_dim(), x.len()));
        }
        let mut z = State::zeros(self.lifted_dim());
        self.lift_into(x.as_slice(), z.as_mut_slice());
        if let Some((index, value)) = z.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Evaluation {
                index,
                value: *value,
                x: x.iter().copied().collect(),
            });
        }
        Ok(z)
    }
}

impl fmt::Debug for dyn ObservableDictionary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.describe())
    }
}

/// Serializable description of a dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DictionaryDesc {
    Identity {
        n: usize,
    },
    Rbf {
        n: usize,
        m: usize,
        centers: Vec<Vec<f64>>,
        omega: f64,
        form: RbfForm,
    },
    Neural {
        n: usize,
        m: usize,
        checkpoint: Option<String>,
    },
    Concat {
        n: usize,
        m: usize,
        parts: Vec<DictionaryDesc>,
    },
    Custom {
        n: usize,
        m: usize,
        name: String,
    },
}

impl DictionaryDesc {
    pub fn kind(&self) -> &'static str {
        match self {
            DictionaryDesc::Identity { .. } => "identity",
            DictionaryDesc::Rbf { .. } => "rbf",
            DictionaryDesc::Neural { .. } => "neural",
            DictionaryDesc::Concat { .. } => "concat",
            DictionaryDesc::Custom { .. } => "custom",
        }
    }
}

/// The state alone (`m = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityDictionary {
    n: usize,
}

impl IdentityDictionary {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl ObservableDictionary for IdentityDictionary {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn observable_count(&self) -> usize {
        0
    }

    fn lift_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }

    fn describe(&self) -> DictionaryDesc {
        DictionaryDesc::Identity { n: self.n }
    }
}

/// Sign convention of the radial basis exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RbfForm {
    /// `exp(-omega (x_i - c)^2)`
    #[default]
    Gaussian,
    /// `exp(+omega (x_i - c)^2)`, exponentially growing away from the center.
    Literal,
}

/// Univariate radial basis functions, `count_per_state` per state coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfDictionary {
    centers: Vec<Vec<f64>>,
    omega: f64,
    form: RbfForm,
}

impl RbfDictionary {
    pub fn new(centers: Vec<Vec<f64>>, omega: f64, form: RbfForm) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Precondition("RBF dictionary needs at least one state".into()));
        }
        let per = centers[0].len();
        if per == 0 || centers.iter().any(|c| c.len() != per) {
            return Err(Error::Precondition(
                "every state needs the same nonzero number of RBF centers".into(),
            ));
        }
        Ok(Self { centers, omega, form })
    }

    /// Uniformly spaced centers (inclusive endpoints) over each side of `bounds`.
    pub fn over_box(bounds: &AxisBox, count_per_state: usize, omega: f64, form: RbfForm) -> Result<Self> {
        if count_per_state == 0 {
            return Err(Error::Precondition("count_per_state must be >= 1".into()));
        }
        let centers = bounds
            .lo
            .iter()
            .zip(&bounds.hi)
            .enumerate()
            .map(|(i, (lo, hi))| {
                if lo == hi {
                    log::warn!("state {i} has a degenerate range [{lo}, {hi}]; RBF centers collapse");
                }
                linspace(*lo, *hi, count_per_state)
            })
            .collect();
        Self::new(centers, omega, form)
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn basis(&self, xi: f64, center: f64) -> f64 {
        let d2 = (xi - center) * (xi - center);
        match self.form {
            RbfForm::Gaussian => (-self.omega * d2).exp(),
            RbfForm::Literal => (self.omega * d2).exp(),
        }
    }
}

/// Places `count_per_state` centers per state between that state's minimum and
/// maximum over the whole dataset.
pub fn make_rbf_dictionary(
    dataset: &SnapshotDataset,
    count_per_state: usize,
    omega: f64,
    form: RbfForm,
) -> Result<RbfDictionary> {
    let bounds = dataset
        .bounding_box()
        .ok_or_else(|| Error::EmptyDataset("cannot place RBF centers".into()))?;
    RbfDictionary::over_box(&bounds, count_per_state, omega, form)
}

impl ObservableDictionary for RbfDictionary {
    fn state_dim(&self) -> usize {
        self.centers.len()
    }

    fn observable_count(&self) -> usize {
        self.centers.len() * self.centers[0].len()
    }

    fn lift_into(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        out[..n].copy_from_slice(x);
        let mut k = n;
        for (xi, cs) in x.iter().zip(&self.centers) {
            for c in cs {
                out[k] = self.basis(*xi, *c);
                k += 1;
            }
        }
    }

    fn describe(&self) -> DictionaryDesc {
        DictionaryDesc::Rbf {
            n: self.state_dim(),
            m: self.observable_count(),
            centers: self.centers.clone(),
            omega: self.omega,
            form: self.form,
        }
    }
}

pub type ScalarObservable = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Dictionary from arbitrary closures, prefixed by the state.
#[derive(Clone)]
pub struct FnDictionary {
    name: String,
    n: usize,
    observables: Vec<ScalarObservable>,
}

impl FnDictionary {
    pub fn new(name: impl Into<String>, n: usize, observables: Vec<ScalarObservable>) -> Self {
        Self {
            name: name.into(),
            n,
            observables,
        }
    }
}

impl ObservableDictionary for FnDictionary {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn observable_count(&self) -> usize {
        self.observables.len()
    }

    fn lift_into(&self, x: &[f64], out: &mut [f64]) {
        out[..self.n].copy_from_slice(x);
        for (o, g) in out[self.n..].iter_mut().zip(&self.observables) {
            *o = g(x);
        }
    }

    fn describe(&self) -> DictionaryDesc {
        DictionaryDesc::Custom {
            n: self.n,
            m: self.observables.len(),
            name: self.name.clone(),
        }
    }
}

/// Lifts every row of `states` (rows = samples), returning a `samples x lifted_dim` matrix.
pub fn lift_rows(dict: &dyn ObservableDictionary, states: &nalgebra::DMatrix<f64>) -> Result<nalgebra::DMatrix<f64>> {
    if states.ncols() != dict.state_dim() {
        return Err(shape_err("lift_rows", dict.state_dim(), states.ncols()));
    }
    let d = dict.lifted_dim();
    let mut out = nalgebra::DMatrix::zeros(states.nrows(), d);
    let mut x = vec![0.0; states.ncols()];
    let mut z = vec![0.0; d];
    for r in 0..states.nrows() {
        for (c, xv) in x.iter_mut().enumerate() {
            *xv = states[(r, c)];
        }
        dict.lift_into(&x, &mut z);
        if let Some((index, value)) = z.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Evaluation {
                index,
                value: *value,
                x: x.clone(),
            });
        }
        for (c, zv) in z.iter().enumerate() {
            out[(r, c)] = *zv;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_lift_is_the_state() {
        let d = IdentityDictionary::new(2);
        let z = d.eval_lift(&State::from_column_slice(&[1.0, 2.0])).unwrap();
        assert_eq!(z.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn square_observable() {
        let d = FnDictionary::new("sq", 1, vec![Arc::new(|x: &[f64]| x[0] * x[0])]);
        let z = d.eval_lift(&State::from_column_slice(&[3.0])).unwrap();
        assert_eq!(z.as_slice(), &[3.0, 9.0]);
    }

    #[test]
    fn rbf_is_one_at_its_center() {
        let d = RbfDictionary::new(vec![vec![0.7]], 1.0, RbfForm::Gaussian).unwrap();
        let z = d.eval_lift(&State::from_column_slice(&[0.7])).unwrap();
        assert_eq!(z[1], 1.0);
    }

    #[test]
    fn rbf_unit_distance() {
        let d = RbfDictionary::new(vec![vec![0.0]], 1.0, RbfForm::Gaussian).unwrap();
        assert!((d.basis(1.0, 0.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((d.basis(1.0, 0.0) - 0.3679).abs() < 1e-4);
        let lit = RbfDictionary::new(vec![vec![0.0]], 1.0, RbfForm::Literal).unwrap();
        assert!((lit.basis(1.0, 0.0) - 1f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn centers_are_uniform_with_endpoints() {
        let b = AxisBox::new(vec![0.0], vec![1.0]).unwrap();
        let d = RbfDictionary::over_box(&b, 3, 1.0, RbfForm::Gaussian).unwrap();
        assert_eq!(d.centers()[0], vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn twenty_per_state_gives_forty_observables() {
        let b = AxisBox::cube(2, -1.0, 1.0).unwrap();
        let d = RbfDictionary::over_box(&b, 20, 1.0, RbfForm::Gaussian).unwrap();
        assert_eq!(d.observable_count(), 40);
        assert_eq!(d.lifted_dim(), 42);
    }

    #[test]
    fn degenerate_range_collapses_centers() {
        let b = AxisBox::new(vec![2.0], vec![2.0]).unwrap();
        let d = RbfDictionary::over_box(&b, 4, 1.0, RbfForm::Gaussian).unwrap();
        assert!(d.centers()[0].iter().all(|c| *c == 2.0));
    }

    #[test]
    fn non_finite_observable_is_reported_with_index() {
        let d = FnDictionary::new("bad", 1, vec![Arc::new(|x: &[f64]| 1.0 / x[0])]);
        let err = d.eval_lift(&State::from_column_slice(&[0.0])).unwrap_err();
        assert!(matches!(err, Error::Evaluation { index: 1, .. }));
    }

    #[test]
    fn rbf_dictionary_from_dataset_spans_its_range() {
        use crate::dynamics::Label;
        use nalgebra::DMatrix;
        let ds = SnapshotDataset::new(
            DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 3.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.5, 1.0]),
            vec![Label::Stable, Label::Unstable],
        )
        .unwrap();
        let d = make_rbf_dictionary(&ds, 5, 1.0, RbfForm::Gaussian).unwrap();
        assert_eq!(d.centers()[0], linspace(0.0, 2.0, 5));
        assert_eq!(d.centers()[1], linspace(-1.0, 3.0, 5));
    }

    proptest! {
        #[test]
        fn rbf_is_symmetric(k in -40i32..40, j in 0i32..48, omega in 0.1f64..4.0) {
            // dyadic offsets keep c + d - c exact
            let (center, d) = (k as f64 / 8.0, j as f64 / 16.0);
            let dict = RbfDictionary::new(vec![vec![center]], omega, RbfForm::Gaussian).unwrap();
            prop_assert_eq!(dict.basis(center + d, center), dict.basis(center - d, center));
        }

        #[test]
        fn rbf_lift_keeps_state_prefix(x0 in -3.0f64..3.0, x1 in -3.0f64..3.0, per in 1usize..6) {
            let b = AxisBox::cube(2, -2.0, 2.0).unwrap();
            let dict = RbfDictionary::over_box(&b, per, 1.0, RbfForm::Gaussian).unwrap();
            let z = dict.eval_lift(&State::from_column_slice(&[x0, x1])).unwrap();
            prop_assert_eq!(z.len(), 2 + 2 * per);
            prop_assert_eq!(z[0], x0);
            prop_assert_eq!(z[1], x1);
        }
    }
}
