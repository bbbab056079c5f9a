//! Single JSON experiment configuration, its hash and per-stage seed
//! derivation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dictionary::RbfForm;
use crate::dynamics::{AxisBox, DynamicalSystem, DEFAULT_DIVERGENCE_BOUND, DEFAULT_DT};
use crate::encoding::{Quadrature, DEFAULT_RESOLUTION, DEFAULT_SVD_TOL};
use crate::error::{Error, Result};
use crate::modal::DEFAULT_STABILITY_EPS;
use crate::neural::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Only `benchmark` is built in.
    pub kind: String,
    pub dt: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            kind: "benchmark".into(),
            dt: DEFAULT_DT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedSampling {
    UniformRandom,
    /// `ceil(sqrt(count))` nodes per axis; `count` is rounded up to a square.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed_lo: Vec<f64>,
    pub seed_hi: Vec<f64>,
    pub sampling: SeedSampling,
    pub train_trajectories: usize,
    pub test_stable: usize,
    pub test_unstable: usize,
    /// Steps simulated per trajectory; also the labeling window.
    pub horizon: usize,
    pub divergence_bound: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed_lo: vec![-1.5, -1.5],
            seed_hi: vec![1.5, 1.5],
            sampling: SeedSampling::UniformRandom,
            train_trajectories: 400,
            test_stable: 100,
            test_unstable: 100,
            horizon: 300,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservableConfig {
    /// Total learned observables; each subspace network gets half.
    pub total: usize,
    pub rbf_omega: f64,
    pub rbf_form: RbfForm,
}

impl Default for ObservableConfig {
    fn default() -> Self {
        Self {
            total: 40,
            rbf_omega: 1.0,
            rbf_form: RbfForm::Gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DomainChoice {
    /// Initial-condition box grown by `inflate` (fraction of each side).
    SeedBox { inflate: f64 },
    /// Dataset bounding box grown by `inflate`, shrunk until the map stays finite.
    DatasetBox { inflate: f64 },
    Explicit { lo: Vec<f64>, hi: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingConfig {
    pub domain: DomainChoice,
    pub quadrature: Quadrature,
    pub svd_tol: f64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            domain: DomainChoice::SeedBox { inflate: 0.1 },
            quadrature: Quadrature::TensorTrapezoid {
                resolution: DEFAULT_RESOLUTION,
            },
            svd_tol: DEFAULT_SVD_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModalConfig {
    pub epsilon: f64,
    /// Boundary grid nodes per axis, spanning the seed box.
    pub grid_resolution: usize,
}

impl Default for ModalConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_STABILITY_EPS,
            grid_resolution: 101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub horizons: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { horizons: vec![1, 10] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub data: DataConfig,
    pub observables: ObservableConfig,
    pub train: TrainConfig,
    pub encoding: EncodingConfig,
    pub modal: ModalConfig,
    pub eval: EvalConfig,
    pub output_dir: String,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.system.kind != "benchmark" {
            return bad(format!("unknown system `{}`", self.system.kind));
        }
        if !(self.system.dt > 0.0 && self.system.dt.is_finite()) {
            return bad("dt must be positive".into());
        }
        let d = &self.data;
        if d.seed_lo.len() != 2 || d.seed_hi.len() != 2 {
            return bad("seed box must be 2-dimensional for the benchmark".into());
        }
        AxisBox::new(d.seed_lo.clone(), d.seed_hi.clone()).map_err(|e| Error::Config(e.to_string()))?;
        if d.train_trajectories == 0 || d.test_stable == 0 || d.test_unstable == 0 {
            return bad("trajectory counts must be positive".into());
        }
        if d.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        if !(d.divergence_bound > 0.0) {
            return bad("divergence bound must be positive".into());
        }
        let o = &self.observables;
        if o.total == 0 || o.total % 2 != 0 {
            return bad(format!("observable total must be a positive even number, got {}", o.total));
        }
        if !(o.rbf_omega > 0.0) {
            return bad("rbf_omega must be positive".into());
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        let e = &self.encoding;
        if !(e.svd_tol > 0.0 && e.svd_tol < 1.0) {
            return bad("svd_tol must lie in (0, 1)".into());
        }
        match &e.domain {
            DomainChoice::SeedBox { inflate } | DomainChoice::DatasetBox { inflate } if !(*inflate >= 0.0) => {
                return bad("domain inflation must be >= 0".into())
            }
            DomainChoice::Explicit { lo, hi } => {
                AxisBox::new(lo.clone(), hi.clone()).map_err(|e| Error::Config(e.to_string()))?;
            }
            _ => {}
        }
        if !(self.modal.epsilon > 0.0) {
            return bad("modal epsilon must be positive".into());
        }
        if self.modal.grid_resolution < 2 {
            return bad("grid resolution must be >= 2".into());
        }
        if self.eval.horizons.is_empty() || self.eval.horizons.contains(&0) {
            return bad("evaluation horizons must be nonempty and >= 1".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn system(&self) -> Result<DynamicalSystem> {
        DynamicalSystem::benchmark(self.system.dt)
    }

    pub fn seed_box(&self) -> AxisBox {
        AxisBox::new(self.data.seed_lo.clone(), self.data.seed_hi.clone()).expect("validated seed box")
    }

    /// Stage seed derived from the master seed and a fixed tag.
    pub fn derive_seed(&self, tag: &str) -> u64 {
        derive_seed(self.master_seed, tag)
    }
}

pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
