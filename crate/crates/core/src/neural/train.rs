use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, Moments};
use super::mlp::{row_major, Mlp, MlpRecord};
use super::TrainConfig;
use crate::dynamics::{Label, SnapshotDataset};
use crate::error::{shape_err, Error, Result};

/// Mean squared residual `mean((A z_k - z_{k+1})^2)` over every sample and
/// lifted coordinate. Lifted batches hold one sample per column.
pub fn loss(zk: &DMatrix<f64>, zkp1: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64> {
    if zk.shape() != zkp1.shape() {
        return Err(shape_err("loss batches", format!("{:?}", zk.shape()), format!("{:?}", zkp1.shape())));
    }
    if a.nrows() != zk.nrows() || a.ncols() != zk.nrows() {
        return Err(shape_err("loss linear layer", zk.nrows(), format!("{:?}", a.shape())));
    }
    if zk.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let r = a * zk - zkp1;
    Ok(r.norm_squared() / r.len() as f64)
}

/// An observable network together with the linear layer acting on
/// `z = [x; g(x)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanNet {
    pub network: Mlp,
    pub linear: DMatrix<f64>,
}

impl KoopmanNet {
    pub fn new(network: Mlp, linear: DMatrix<f64>) -> Result<Self> {
        let d = network.input_dim() + network.output_dim();
        if linear.shape() != (d, d) {
            return Err(shape_err("KoopmanNet linear layer", format!("({d}, {d})"), format!("{:?}", linear.shape())));
        }
        Ok(Self { network, linear })
    }

    /// Kaiming-initialized network `[n, hidden.., m]` and a fan-in uniform
    /// linear layer.
    pub fn new_kaiming(n: usize, hidden: &[usize], m: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut sizes = vec![n];
        sizes.extend_from_slice(hidden);
        sizes.push(m);
        let network = Mlp::new_kaiming(&sizes, rng)?;
        let d = n + m;
        let bound = 1.0 / (d as f64).sqrt();
        let linear = DMatrix::from_fn(d, d, |_, _| rng.random_range(-bound..bound));
        Self::new(network, linear)
    }

    pub fn state_dim(&self) -> usize {
        self.network.input_dim()
    }

    pub fn lifted_dim(&self) -> usize {
        self.network.input_dim() + self.network.output_dim()
    }

    fn lift(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, super::mlp::ForwardCache) {
        let n = self.state_dim();
        let cache = self.network.forward_batch(x);
        let mut z = DMatrix::zeros(self.lifted_dim(), x.ncols());
        z.rows_mut(0, n).copy_from(x);
        z.rows_mut(n, self.network.output_dim()).copy_from(cache.output());
        (z, cache)
    }

    /// Training loss on a batch of states (`n x batch`, one sample per column).
    pub fn batch_loss(&self, xk: &DMatrix<f64>, xkp1: &DMatrix<f64>) -> Result<f64> {
        let (zk, _) = self.lift(xk);
        let (zkp1, _) = self.lift(xkp1);
        loss(&zk, &zkp1, &self.linear)
    }

    /// Loss and its exact gradient with respect to every network parameter and
    /// the linear layer. Both `z_k` and `z_{k+1}` are lifted by the current
    /// network and the gradient flows through both.
    pub fn loss_and_gradients(&self, xk: &DMatrix<f64>, xkp1: &DMatrix<f64>) -> Result<(f64, KoopmanNet)> {
        if xk.shape() != xkp1.shape() || xk.nrows() != self.state_dim() {
            return Err(shape_err("gradients batch", self.state_dim(), format!("{:?}/{:?}", xk.shape(), xkp1.shape())));
        }
        let n = self.state_dim();
        let m = self.network.output_dim();
        let (zk, cache_k) = self.lift(xk);
        let (zkp1, cache_kp1) = self.lift(xkp1);
        let residual = &self.linear * &zk - &zkp1;
        let count = residual.len() as f64;
        let value = residual.norm_squared() / count;

        let d_res = residual * (2.0 / count);
        let d_linear = &d_res * zk.transpose();
        let d_zk = self.linear.transpose() * &d_res;

        let mut grads = KoopmanNet {
            network: self.network.zeros_like(),
            linear: d_linear,
        };
        self.network
            .backward_accumulate(&cache_k, d_zk.rows(n, m).into_owned(), &mut grads.network);
        self.network
            .backward_accumulate(&cache_kp1, -d_res.rows(n, m).into_owned(), &mut grads.network);
        Ok((value, grads))
    }

    pub fn parameter_count(&self) -> usize {
        self.network.slices().iter().map(|s| s.len()).sum::<usize>() + self.linear.len()
    }

    /// All parameters in a fixed order: layer weights and biases, then the
    /// linear layer (column-major storage order).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for s in self.network.slices() {
            out.extend_from_slice(s);
        }
        out.extend_from_slice(self.linear.as_slice());
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.parameter_count());
        let mut off = 0;
        for s in self.network.slices_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
        self.linear.as_mut_slice().copy_from_slice(&flat[off..]);
    }

    pub fn is_finite(&self) -> bool {
        self.network.is_finite() && self.linear.iter().all(|v| v.is_finite())
    }
}

/// Which slice of the data a network was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubspaceTag {
    Unstable,
    Stable,
    Aggregate,
}

impl SubspaceTag {
    pub fn label(self) -> Option<Label> {
        match self {
            SubspaceTag::Unstable => Some(Label::Unstable),
            SubspaceTag::Stable => Some(Label::Stable),
            SubspaceTag::Aggregate => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SubspaceTag::Unstable => "unstable",
            SubspaceTag::Stable => "stable",
            SubspaceTag::Aggregate => "aggregate",
        }
    }
}

/// A trained observable network with its learned linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    pub tag: SubspaceTag,
    pub net: KoopmanNet,
    pub loss_history: Vec<f64>,
}

/// Runs the epoch loop: each epoch draws one batch, lifts both sides with the
/// current network, predicts through the linear layer and takes one Adam step
/// on all parameters.
///
/// The subset must carry only the label matching `tag` (any mix is allowed
/// for [`SubspaceTag::Aggregate`]).
pub fn train_subspace_model(
    data: &SnapshotDataset,
    tag: SubspaceTag,
    observables: usize,
    cfg: &TrainConfig,
) -> Result<SubspaceModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Precondition(format!("empty {} training subset", tag.as_str())));
    }
    if let Some(label) = tag.label() {
        if data.labels.iter().any(|l| *l != label) {
            return Err(Error::Precondition(format!(
                "{} subset contains pairs with another label",
                tag.as_str()
            )));
        }
    }
    if observables == 0 {
        return Err(Error::Precondition("observable count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = KoopmanNet::new_kaiming(data.dim(), &cfg.hidden, observables, &mut rng)?;
    let xk_all = data.xk.transpose();
    let xkp1_all = data.xkp1.transpose();
    let total = data.len();
    let full_batch = total <= cfg.full_batch_limit;

    let mut flat = net.to_flat();
    let mut moments = Moments::zeros(flat.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (value, grads) = if full_batch {
            net.loss_and_gradients(&xk_all, &xkp1_all)?
        } else {
            let idx = rand::seq::index::sample(&mut rng, total, cfg.batch_size.min(total)).into_vec();
            let bk = xk_all.select_columns(&idx);
            let bkp1 = xkp1_all.select_columns(&idx);
            net.loss_and_gradients(&bk, &bkp1)?
        };
        if !value.is_finite() {
            return Err(Error::Training {
                epoch,
                loss: value,
                history,
            });
        }
        history.push(value);
        adam_step(&mut flat, &grads.to_flat(), &mut moments, epoch as u64 + 1, cfg);
        net.set_flat(&flat);
    }
    if !net.is_finite() {
        return Err(Error::Training {
            epoch: cfg.epochs,
            loss: f64::NAN,
            history,
        });
    }
    Ok(SubspaceModel {
        tag,
        net,
        loss_history: history,
    })
}

/// On-disk form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub tag: SubspaceTag,
    pub network: MlpRecord,
    pub linear_rows: usize,
    pub linear: Vec<f64>,
    pub seed: u64,
    pub config: TrainConfig,
    pub final_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Checkpoint {
    pub fn from_model(model: &SubspaceModel, cfg: &TrainConfig) -> Self {
        Checkpoint {
            tag: model.tag,
            network: MlpRecord::from(&model.net.network),
            linear_rows: model.net.linear.nrows(),
            linear: row_major(&model.net.linear),
            seed: cfg.seed,
            config: cfg.clone(),
            final_loss: model.loss_history.last().copied(),
            config_hash: None,
        }
    }

    pub fn to_model(&self) -> Result<SubspaceModel> {
        let network = Mlp::try_from(&self.network)?;
        let d = self.linear_rows;
        if self.linear.len() != d * d {
            return Err(Error::Parse("checkpoint linear layer is not square".into()));
        }
        let linear = DMatrix::from_row_slice(d, d, &self.linear);
        Ok(SubspaceModel {
            tag: self.tag,
            net: KoopmanNet::new(network, linear)?,
            loss_history: Vec::new(),
        })
    }
}
