//! Nonlinear systems, RK4 discretization, trajectory simulation and labeled
//! snapshot datasets.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub type State = DVector<f64>;

/// Default RK4 step for continuous systems.
pub const DEFAULT_DT: f64 = 0.05;
/// Euclidean norm above which a trajectory counts as diverged (and unstable).
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e3;

type Field = Arc<dyn Fn(&State) -> State + Send + Sync>;

#[derive(Clone)]
enum Evolution {
    Continuous { field: Field, dt: f64 },
    Discrete { map: Field },
}

/// A nonlinear map `f`, either given natively or induced by one RK4 step of a
/// continuous vector field.
#[derive(Clone)]
pub struct DynamicalSystem {
    name: String,
    dim: usize,
    evolution: Evolution,
}

impl fmt::Debug for DynamicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("DynamicalSystem");
        s.field("name", &self.name).field("dim", &self.dim);
        if let Some(dt) = self.dt() {
            s.field("dt", &dt);
        }
        s.finish()
    }
}

impl DynamicalSystem {
    pub fn continuous<F>(name: impl Into<String>, dim: usize, dt: f64, field: F) -> Result<Self>
    where
        F: Fn(&State) -> State + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::Precondition("system dimension must be >= 1".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Precondition(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            name: name.into(),
            dim,
            evolution: Evolution::Continuous {
                field: Arc::new(field),
                dt,
            },
        })
    }

    pub fn discrete<F>(name: impl Into<String>, dim: usize, map: F) -> Result<Self>
    where
        F: Fn(&State) -> State + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::Precondition("system dimension must be >= 1".into()));
        }
        Ok(Self {
            name: name.into(),
            dim,
            evolution: Evolution::Discrete { map: Arc::new(map) },
        })
    }

    /// The two-dimensional benchmark
    ///
    /// ```text
    /// x' = -x + x^2 + y^2
    /// y' = -y + y^2 + x^2 - x
    /// ```
    ///
    /// with a stable node at the origin and a saddle at (1, 0).
    pub fn benchmark(dt: f64) -> Result<Self> {
        Self::continuous("benchmark", 2, dt, |s: &State| {
            let (x, y) = (s[0], s[1]);
            let r2 = x * x + y * y;
            State::from_vec(vec![-x + r2, -y + r2 - x])
        })
    }

    /// Native discrete linear map `x -> M x`.
    pub fn linear_map(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(shape_err("linear_map", "square matrix", format!("{:?}", matrix.shape())));
        }
        let dim = matrix.nrows();
        Self::discrete("linear", dim, move |x: &State| &matrix * x)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Discretization step, `None` for native discrete maps.
    pub fn dt(&self) -> Option<f64> {
        match &self.evolution {
            Evolution::Continuous { dt, .. } => Some(*dt),
            Evolution::Discrete { .. } => None,
        }
    }

    /// Vector field of a continuous system.
    pub fn field(&self, x: &State) -> Option<State> {
        match &self.evolution {
            Evolution::Continuous { field, .. } => Some(field(x)),
            Evolution::Discrete { .. } => None,
        }
    }

    /// Applies the discrete map `f` once: a classical RK4 step for continuous
    /// systems, the native map otherwise.
    pub fn step_rk4(&self, x: &State) -> Result<State> {
        if x.len() != self.dim {
            return Err(shape_err("step_rk4", self.dim, x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                state: x.iter().copied().collect(),
            });
        }
        let next = match &self.evolution {
            Evolution::Discrete { map } => map(x),
            Evolution::Continuous { field, dt } => {
                let h = *dt;
                let k1 = field(x);
                let k2 = field(&(x + &k1 * (0.5 * h)));
                let k3 = field(&(x + &k2 * (0.5 * h)));
                let k4 = field(&(x + &k3 * h));
                x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
            }
        };
        if next.len() != self.dim {
            return Err(shape_err("step_rk4 output", self.dim, next.len()));
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                state: x.iter().copied().collect(),
            });
        }
        Ok(next)
    }

    /// Runs `horizon` steps from `x0`, stopping at the first state whose norm
    /// exceeds `bound` (or that cannot be computed).
    pub fn simulate(&self, x0: &State, horizon: usize, bound: f64) -> Result<Trajectory> {
        if horizon == 0 {
            return Err(Error::Precondition("simulation horizon must be >= 1".into()));
        }
        if x0.len() != self.dim {
            return Err(shape_err("simulate", self.dim, x0.len()));
        }
        let mut states = vec![x0.clone()];
        let mut diverged_at = None;
        if !within(x0, bound) {
            diverged_at = Some(0);
        } else {
            for k in 1..=horizon {
                let next = match self.step_rk4(&states[k - 1]) {
                    Ok(s) => s,
                    Err(Error::Divergence { .. }) => {
                        diverged_at = Some(k);
                        break;
                    }
                    Err(e) => return Err(e),
                };
                if !within(&next, bound) {
                    diverged_at = Some(k);
                    break;
                }
                states.push(next);
            }
        }
        let label = if diverged_at.is_some() {
            Label::Unstable
        } else {
            Label::Stable
        };
        Ok(Trajectory {
            states,
            dt: self.dt(),
            diverged_at,
            label,
        })
    }
}

fn within(x: &State, bound: f64) -> bool {
    x.iter().all(|v| v.is_finite()) && x.norm() <= bound
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Stable,
    Unstable,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Stable => "stable",
            Label::Unstable => "unstable",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stable" => Ok(Label::Stable),
            "unstable" => Ok(Label::Unstable),
            other => Err(Error::Parse(format!("unknown label `{other}`"))),
        }
    }
}

/// A simulated trajectory. `states` only holds states inside the divergence
/// bound; `diverged_at` is the step whose state left it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub dt: Option<f64>,
    pub diverged_at: Option<usize>,
    pub label: Label,
}

impl Trajectory {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn initial(&self) -> &State {
        &self.states[0]
    }
}

/// Axis-aligned box `[lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(shape_err("AxisBox", "matching nonempty bounds", format!("{} vs {}", lo.len(), hi.len())));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Precondition(format!("invalid box bounds {lo:?} / {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, x: &State) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Grows each side by `fraction` of its width (in total, split evenly).
    pub fn inflate(&self, fraction: f64) -> Self {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| {
                let pad = 0.5 * fraction * (h - l);
                (l - pad, h + pad)
            })
            .unzip();
        Self { lo, hi }
    }

    /// Tensor grid with `per_axis` points per axis, inclusive endpoints; the
    /// first coordinate varies fastest.
    pub fn grid(&self, per_axis: usize) -> Vec<State> {
        let n = self.dim();
        let axes: Vec<Vec<f64>> = (0..n)
            .map(|i| linspace(self.lo[i], self.hi[i], per_axis))
            .collect();
        let total = per_axis.pow(n as u32);
        (0..total)
            .map(|mut idx| {
                let mut x = State::zeros(n);
                for (i, axis) in axes.iter().enumerate() {
                    x[i] = axis[idx % per_axis];
                    idx /= per_axis;
                }
                x
            })
            .collect()
    }

    pub fn sample_uniform(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<State> {
        (0..count)
            .map(|_| {
                State::from_iterator(
                    self.dim(),
                    self.lo.iter().zip(&self.hi).map(|(l, h)| {
                        if l < h {
                            rng.random_range(*l..*h)
                        } else {
                            *l
                        }
                    }),
                )
            })
            .collect()
    }
}

/// `count` evenly spaced points over `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (count - 1) as f64;
            (0..count)
                .map(|k| if k == count - 1 { hi } else { lo + step * k as f64 })
                .collect()
        }
    }
}

/// Paired states `(x_k, x_{k+1})`, one row per pair, each labeled by its
/// trajectory's stability.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDataset {
    pub xk: DMatrix<f64>,
    pub xkp1: DMatrix<f64>,
    pub labels: Vec<Label>,
}

impl SnapshotDataset {
    pub fn new(xk: DMatrix<f64>, xkp1: DMatrix<f64>, labels: Vec<Label>) -> Result<Self> {
        if xk.shape() != xkp1.shape() {
            return Err(shape_err("SnapshotDataset", format!("{:?}", xk.shape()), format!("{:?}", xkp1.shape())));
        }
        if labels.len() != xk.nrows() {
            return Err(shape_err("SnapshotDataset labels", xk.nrows(), labels.len()));
        }
        Ok(Self { xk, xkp1, labels })
    }

    pub fn len(&self) -> usize {
        self.xk.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.xk.ncols()
    }

    pub fn pair(&self, i: usize) -> (State, State) {
        (
            self.xk.row(i).transpose(),
            self.xkp1.row(i).transpose(),
        )
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    /// Rows carrying `label`, in their original order.
    pub fn partition(&self, label: Label) -> SnapshotDataset {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == label).collect();
        self.select(&rows)
    }

    pub fn select(&self, rows: &[usize]) -> SnapshotDataset {
        SnapshotDataset {
            xk: self.xk.select_rows(rows),
            xkp1: self.xkp1.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Bounding box over every state in the dataset (both columns of each pair).
    pub fn bounding_box(&self) -> Option<AxisBox> {
        if self.is_empty() {
            return None;
        }
        let n = self.dim();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for m in [&self.xk, &self.xkp1] {
            for (j, col) in m.column_iter().enumerate() {
                lo[j] = lo[j].min(col.min());
                hi[j] = hi[j].max(col.max());
            }
        }
        Some(AxisBox { lo, hi })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.dim();
        let mut header = vec!["label".to_string()];
        header.extend((0..n).map(|i| format!("xk_{i}")));
        header.extend((0..n).map(|i| format!("xkp1_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            write!(w, "{}", self.labels[i])?;
            for v in self.xk.row(i).iter().chain(self.xkp1.row(i).iter()) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the pairs CSV written by [`SnapshotDataset::write_csv`]; lines
    /// starting with `#` are skipped.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().filter(|l| !matches!(l, Ok(s) if s.starts_with('#')));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing pairs header".into()))??;
        let cols = header.split(',').count();
        if cols < 3 || (cols - 1) % 2 != 0 {
            return Err(Error::Parse(format!("bad pairs header `{header}`")));
        }
        let n = (cols - 1) / 2;
        let mut labels = Vec::new();
        let mut xk = Vec::new();
        let mut xkp1 = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            labels.push(fields.next().unwrap_or_default().parse::<Label>()?);
            let values: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|e| Error::Parse(format!("{e}: `{f}`"))))
                .collect::<Result<_>>()?;
            if values.len() != 2 * n {
                return Err(Error::Parse(format!("expected {} values, got {}", 2 * n, values.len())));
            }
            xk.extend_from_slice(&values[..n]);
            xkp1.extend_from_slice(&values[n..]);
        }
        let rows = labels.len();
        Self::new(
            DMatrix::from_row_slice(rows, n, &xk),
            DMatrix::from_row_slice(rows, n, &xkp1),
            labels,
        )
    }
}

/// Simulates every initial condition (in parallel) and assembles the pairs in
/// seed order, then step order. Pairs touching a state outside the divergence
/// bound are never emitted.
pub fn build_dataset(
    system: &DynamicalSystem,
    initial_conditions: &[State],
    horizon: usize,
    bound: f64,
) -> Result<(SnapshotDataset, Vec<Trajectory>)> {
    if initial_conditions.is_empty() {
        return Err(Error::Precondition("no initial conditions given".into()));
    }
    let trajectories = simulate_all(system, initial_conditions, horizon, bound)?;
    let n = system.dim();
    let mut xk = Vec::new();
    let mut xkp1 = Vec::new();
    let mut labels = Vec::new();
    for traj in &trajectories {
        for w in traj.states.windows(2) {
            xk.extend(w[0].iter());
            xkp1.extend(w[1].iter());
            labels.push(traj.label);
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset(
            "no finite snapshot pairs survived divergence filtering".into(),
        ));
    }
    let rows = labels.len();
    let ds = SnapshotDataset::new(
        DMatrix::from_row_slice(rows, n, &xk),
        DMatrix::from_row_slice(rows, n, &xkp1),
        labels,
    )?;
    Ok((ds, trajectories))
}

pub fn simulate_all(
    system: &DynamicalSystem,
    initial_conditions: &[State],
    horizon: usize,
    bound: f64,
) -> Result<Vec<Trajectory>> {
    initial_conditions
        .par_iter()
        .map(|x0| system.simulate(x0, horizon, bound))
        .collect()
}

/// Writes trajectories as `traj_id,step,label,x0..x{n-1}`.
pub fn write_trajectories_csv<W: Write>(trajectories: &[Trajectory], mut w: W) -> Result<()> {
    let n = trajectories.first().map(|t| t.states[0].len()).unwrap_or(0);
    let mut header = vec!["traj_id".to_string(), "step".into(), "label".into()];
    header.extend((0..n).map(|i| format!("x{i}")));
    writeln!(w, "{}", header.join(","))?;
    for (id, t) in trajectories.iter().enumerate() {
        for (k, s) in t.states.iter().enumerate() {
            write!(w, "{id},{k},{}", t.label)?;
            for v in s.iter() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn v(xs: &[f64]) -> State {
        State::from_column_slice(xs)
    }

    #[test]
    fn origin_is_fixed_point_of_benchmark() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        let next = sys.step_rk4(&v(&[0.0, 0.0])).unwrap();
        assert_eq!(next, v(&[0.0, 0.0]));
    }

    #[test]
    fn rk4_matches_exponential_decay() {
        let sys = DynamicalSystem::continuous("decay", 1, 0.1, |x: &State| -x).unwrap();
        let next = sys.step_rk4(&v(&[1.0])).unwrap();
        assert!((next[0] - (-0.1f64).exp()).abs() <= 1e-7);
    }

    #[test]
    fn benchmark_field_pushes_outward_at_two_two() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        assert_eq!(sys.field(&v(&[2.0, 2.0])).unwrap()[0], 6.0);
        let next = sys.step_rk4(&v(&[2.0, 2.0])).unwrap();
        assert!(next[0] > 2.0);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |dt: f64| {
            let sys = DynamicalSystem::continuous("decay", 1, dt, |x: &State| -x).unwrap();
            (sys.step_rk4(&v(&[1.0])).unwrap()[0] - (-dt).exp()).abs()
        };
        // local truncation error of one step is O(dt^5); over a fixed interval
        // (2 half-steps) the global error shrinks by 2^4
        let coarse = err(0.2);
        let fine = {
            let sys = DynamicalSystem::continuous("decay", 1, 0.1, |x: &State| -x).unwrap();
            let x1 = sys.step_rk4(&v(&[1.0])).unwrap();
            (sys.step_rk4(&x1).unwrap()[0] - (-0.2f64).exp()).abs()
        };
        let ratio = coarse / fine;
        assert!((ratio - 16.0).abs() <= 0.2 * 16.0, "ratio {ratio}");
    }

    #[test]
    fn rk4_is_deterministic() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        let x = v(&[0.3, -0.7]);
        assert_eq!(sys.step_rk4(&x).unwrap(), sys.step_rk4(&x).unwrap());
    }

    #[test]
    fn rk4_rejects_wrong_length_and_non_finite() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        assert!(matches!(sys.step_rk4(&v(&[1.0])), Err(Error::Shape { .. })));
        assert!(matches!(
            sys.step_rk4(&v(&[f64::NAN, 0.0])),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn discrete_system_applies_map() {
        let sys = DynamicalSystem::linear_map(DMatrix::from_diagonal(&v(&[0.5, 2.0]))).unwrap();
        assert_eq!(sys.step_rk4(&v(&[1.0, 1.0])).unwrap(), v(&[0.5, 2.0]));
        assert_eq!(sys.dt(), None);
    }

    #[test]
    fn small_seed_converges_and_is_stable() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        let t = sys.simulate(&v(&[0.1, 0.1]), 500, DEFAULT_DIVERGENCE_BOUND).unwrap();
        assert_eq!(t.label, Label::Stable);
        assert_eq!(t.states.len(), 501);
        assert!(t.states.last().unwrap().norm() < 1e-6);
    }

    #[test]
    fn large_seed_diverges() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        let t = sys.simulate(&v(&[2.0, 2.0]), 500, DEFAULT_DIVERGENCE_BOUND).unwrap();
        assert!(t.diverged());
        assert_eq!(t.label, Label::Unstable);
        assert!(t.states.iter().all(|s| s.norm() <= DEFAULT_DIVERGENCE_BOUND));
    }

    #[test]
    fn equilibrium_trajectory_stays_at_origin() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        let t = sys.simulate(&v(&[0.0, 0.0]), 20, DEFAULT_DIVERGENCE_BOUND).unwrap();
        assert!(t.states.iter().all(|s| s == &v(&[0.0, 0.0])));
        assert_eq!(t.label, Label::Stable);
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        assert!(sys.simulate(&v(&[0.0, 0.0]), 0, 1e3).is_err());
    }

    #[test]
    fn single_stable_trajectory_gives_horizon_pairs() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        let (ds, _) = build_dataset(&sys, &[v(&[0.2, -0.1])], 10, 1e3).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.count(Label::Stable), 10);
    }

    #[test]
    fn grid_seeds_cover_both_regions_and_pairs_are_consistent() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        let seeds = AxisBox::cube(2, -1.5, 1.5).unwrap().grid(12);
        let (ds, _) = build_dataset(&sys, &seeds, 200, 1e3).unwrap();
        let (u, s) = (ds.partition(Label::Unstable), ds.partition(Label::Stable));
        assert!(!u.is_empty() && !s.is_empty());
        assert_eq!(u.len() + s.len(), ds.len());
        for i in (0..ds.len()).step_by(97) {
            let (a, b) = ds.pair(i);
            assert_eq!(sys.step_rk4(&a).unwrap(), b);
        }
    }

    #[test]
    fn benchmark_unit_box_contains_both_labels() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        let seeds = AxisBox::cube(2, -1.0, 1.0).unwrap().grid(11);
        let trajs = simulate_all(&sys, &seeds, 500, 1e3).unwrap();
        assert!(trajs.iter().any(|t| t.label == Label::Stable));
        assert!(trajs.iter().any(|t| t.label == Label::Unstable));
    }

    #[test]
    fn empty_seed_list_is_an_error() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        assert!(build_dataset(&sys, &[], 10, 1e3).is_err());
    }

    #[test]
    fn seed_beyond_bound_yields_empty_dataset_error() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        let err = build_dataset(&sys, &[v(&[1e4, 0.0])], 10, 1e3).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
    }

    #[test]
    fn dataset_is_deterministic_and_csv_round_trips() {
        let sys = DynamicalSystem::benchmark(DEFAULT_DT).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let seeds = AxisBox::cube(2, -1.5, 1.5).unwrap().sample_uniform(20, &mut rng);
        let (a, _) = build_dataset(&sys, &seeds, 50, 1e3).unwrap();
        let (b, _) = build_dataset(&sys, &seeds, 50, 1e3).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let back = SnapshotDataset::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(linspace(2.0, 2.0, 1), vec![2.0]);
    }
}
