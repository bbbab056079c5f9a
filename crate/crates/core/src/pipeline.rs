//! The experiment stages behind the command line: generate data, train the
//! observable networks, build the five model variants, evaluate them and map
//! the instability quotient. Stages hand off through files under one output
//! directory, and every file carries the config hash.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DomainChoice, ExperimentConfig, SeedSampling};
use crate::dictionary::{make_rbf_dictionary, DictionaryDesc, IdentityDictionary, ObservableDictionary, RbfDictionary};
use crate::dynamics::{build_dataset, simulate_all, write_trajectories_csv, AxisBox, Label, SnapshotDataset, State, Trajectory};
use crate::encoding::{
    clipped_dataset_domain, direct_encode, edmd_fit, relift_linear_layer, write_matrix_csv, IntegrationDomain,
    LiftedLinearModel, ModelBundle, Provenance,
};
use crate::error::{Error, Result};
use crate::eval::{check_disjoint, evaluate_suite, ErrorTable};
use crate::modal::{boundary_grid_with, eigendecompose, ground_truth_labels, BoundaryField, BoundarySummary, ModeClass};
use crate::neural::{build_ssog, train_subspace_model, Checkpoint, NeuralDictionary, SubspaceModel, SubspaceTag};

/// Model variants in table order.
pub const MODEL_NAMES: [&str; 5] = ["ssog-de", "aggregate-de", "ssog", "aggregate", "edmd"];
pub const GROUND_TRUTH_PANEL: &str = "ground-truth";
const NETWORKS: [(SubspaceTag, &str); 3] = [
    (SubspaceTag::Unstable, "ssog-unstable"),
    (SubspaceTag::Stable, "ssog-stable"),
    (SubspaceTag::Aggregate, "aggregate"),
];

/// Resolved locations of every artifact.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("data/manifest.json")
    }
    pub fn train_pairs(&self) -> PathBuf {
        self.root.join("data/train_pairs.csv")
    }
    pub fn train_trajectories(&self) -> PathBuf {
        self.root.join("data/train_trajectories.csv")
    }
    pub fn test_trajectories(&self) -> PathBuf {
        self.root.join("data/test_trajectories.csv")
    }
    /// Relative to the root, as recorded inside bundles.
    pub fn checkpoint_rel(name: &str) -> String {
        format!("models/{name}.json")
    }
    pub fn loss_log(&self, name: &str) -> PathBuf {
        self.root.join(format!("models/{name}_loss.csv"))
    }
    pub fn bundle(&self, name: &str) -> PathBuf {
        self.root.join(format!("bundles/{name}.json"))
    }
    pub fn matrix(&self, name: &str) -> PathBuf {
        self.root.join(format!("bundles/{name}_A.csv"))
    }
    pub fn error_table(&self) -> PathBuf {
        self.root.join("eval/error_table.csv")
    }
    pub fn error_series(&self) -> PathBuf {
        self.root.join("eval/error_series.csv")
    }
    pub fn boundary(&self, panel: &str) -> PathBuf {
        self.root.join(format!("boundary/{panel}.csv"))
    }
    pub fn eigen_report(&self, name: &str) -> PathBuf {
        self.root.join(format!("boundary/{name}_eigen.csv"))
    }
    pub fn boundary_summary(&self) -> PathBuf {
        self.root.join("boundary/summary.json")
    }
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(fs::File::create(path)?)
}

/// Writes a CSV whose first line is `# config_hash=<hash>`.
fn write_csv_with_hash(path: &Path, hash: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "# config_hash={hash}")?;
    body(&mut buf)?;
    create(path)?.write_all(&buf)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    create(path)?.write_all(text.as_bytes())?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = fs::File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub train_seeds: Vec<Vec<f64>>,
    pub test_seeds: Vec<Vec<f64>>,
    pub test_labels: Vec<Label>,
    pub train_pairs_stable: usize,
    pub train_pairs_unstable: usize,
    pub train_trajectories_unstable: usize,
    pub dataset_bounding_box: AxisBox,
}

impl Manifest {
    pub fn train_states(&self) -> Vec<State> {
        self.train_seeds.iter().map(|s| State::from_column_slice(s)).collect()
    }

    pub fn test_states(&self) -> Vec<State> {
        self.test_seeds.iter().map(|s| State::from_column_slice(s)).collect()
    }
}

fn train_seeds(cfg: &ExperimentConfig) -> Vec<State> {
    let b = cfg.seed_box();
    match cfg.data.sampling {
        SeedSampling::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.derive_seed("train-seeds"));
            b.sample_uniform(cfg.data.train_trajectories, &mut rng)
        }
        SeedSampling::Grid => {
            let per_axis = (cfg.data.train_trajectories as f64).sqrt().ceil() as usize;
            b.grid(per_axis.max(2))
        }
    }
}

/// Draws test seeds from their own stream, keeping each until its label's
/// quota is met.
fn test_seeds(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    let sys = cfg.system()?;
    let b = cfg.seed_box();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.derive_seed("test-seeds"));
    let (want_s, want_u) = (cfg.data.test_stable, cfg.data.test_unstable);
    let (mut stable, mut unstable) = (Vec::new(), Vec::new());
    let mut attempts = 0usize;
    while stable.len() < want_s || unstable.len() < want_u {
        attempts += 64;
        if attempts > 1_000_000 {
            return Err(Error::Precondition(format!(
                "could not fill the test quotas ({} stable, {} unstable found)",
                stable.len(),
                unstable.len()
            )));
        }
        let batch = b.sample_uniform(64, &mut rng);
        for t in simulate_all(&sys, &batch, cfg.data.horizon, cfg.data.divergence_bound)? {
            match t.label {
                Label::Stable if stable.len() < want_s => stable.push(t),
                Label::Unstable if unstable.len() < want_u => unstable.push(t),
                _ => {}
            }
        }
    }
    stable.extend(unstable);
    Ok(stable)
}

/// Output of the data generation stage.
pub struct Generated {
    pub manifest: Manifest,
    pub dataset: SnapshotDataset,
    pub test: Vec<Trajectory>,
}

pub fn cmd_gen(cfg: &ExperimentConfig, layout: &Layout) -> Result<Generated> {
    cfg.validate()?;
    let hash = cfg.hash();
    let sys = cfg.system()?;
    let seeds = train_seeds(cfg);
    let (dataset, trajectories) = build_dataset(&sys, &seeds, cfg.data.horizon, cfg.data.divergence_bound)?;
    let test = test_seeds(cfg)?;
    let test_states: Vec<State> = test.iter().map(|t| t.initial().clone()).collect();
    check_disjoint(&seeds, &test_states)?;
    log::info!(
        "generated {} training pairs ({} stable, {} unstable) from {} trajectories",
        dataset.len(),
        dataset.count(Label::Stable),
        dataset.count(Label::Unstable),
        seeds.len()
    );
    let manifest = Manifest {
        config_hash: hash.clone(),
        master_seed: cfg.master_seed,
        train_seeds: seeds.iter().map(|s| s.iter().copied().collect()).collect(),
        test_seeds: test_states.iter().map(|s| s.iter().copied().collect()).collect(),
        test_labels: test.iter().map(|t| t.label).collect(),
        train_pairs_stable: dataset.count(Label::Stable),
        train_pairs_unstable: dataset.count(Label::Unstable),
        train_trajectories_unstable: trajectories.iter().filter(|t| t.label == Label::Unstable).count(),
        dataset_bounding_box: dataset.bounding_box().expect("nonempty dataset"),
    };
    write_csv_with_hash(&layout.train_pairs(), &hash, |w| dataset.write_csv(w))?;
    write_csv_with_hash(&layout.train_trajectories(), &hash, |w| write_trajectories_csv(&trajectories, w))?;
    write_csv_with_hash(&layout.test_trajectories(), &hash, |w| write_trajectories_csv(&test, w))?;
    write_json(&layout.manifest(), &manifest)?;
    Ok(Generated {
        manifest,
        dataset,
        test,
    })
}

fn read_train_pairs(layout: &Layout) -> Result<SnapshotDataset> {
    let path = layout.train_pairs();
    let file = fs::File::open(&path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    SnapshotDataset::read_csv(BufReader::new(file))
}

fn observables_for(tag: SubspaceTag, total: usize) -> usize {
    match tag {
        SubspaceTag::Aggregate => total,
        _ => total / 2,
    }
}

/// Trains the unstable, stable and aggregate networks, each with its own
/// derived seed.
pub fn cmd_train(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<SubspaceModel>> {
    cfg.validate()?;
    let hash = cfg.hash();
    let data = read_train_pairs(layout)?;
    let job = |tag: SubspaceTag, name: &str| -> Result<(SubspaceModel, crate::neural::TrainConfig)> {
        let subset = match tag.label() {
            Some(label) => data.partition(label),
            None => data.clone(),
        };
        let tc = crate::neural::TrainConfig {
            seed: cfg.derive_seed(&format!("train-{name}")),
            ..cfg.train.clone()
        };
        let model = train_subspace_model(&subset, tag, observables_for(tag, cfg.observables.total), &tc)?;
        log::info!(
            "{name}: {} pairs, final loss {:e}",
            subset.len(),
            model.loss_history.last().copied().unwrap_or(f64::NAN)
        );
        Ok((model, tc))
    };
    let ((u, s), a) = rayon::join(
        || rayon::join(|| job(NETWORKS[0].0, NETWORKS[0].1), || job(NETWORKS[1].0, NETWORKS[1].1)),
        || job(NETWORKS[2].0, NETWORKS[2].1),
    );
    let mut out = Vec::new();
    for ((model, tc), (_, name)) in [u?, s?, a?].into_iter().zip(NETWORKS) {
        let mut ck = Checkpoint::from_model(&model, &tc);
        ck.config_hash = Some(hash.clone());
        write_json(&layout.root.join(Layout::checkpoint_rel(name)), &ck)?;
        write_csv_with_hash(&layout.loss_log(name), &hash, |w| {
            writeln!(w, "epoch,loss")?;
            for (e, l) in model.loss_history.iter().enumerate() {
                writeln!(w, "{e},{l:e}")?;
            }
            Ok(())
        })?;
        out.push(model);
    }
    Ok(out)
}

fn load_network(layout: &Layout, name: &str) -> Result<NeuralDictionary> {
    let rel = Layout::checkpoint_rel(name);
    let ck: Checkpoint = read_json(&layout.root.join(&rel))?;
    Ok(NeuralDictionary::new(ck.to_model()?.net.network).with_checkpoint(rel))
}

fn load_learned_layer(layout: &Layout, name: &str) -> Result<nalgebra::DMatrix<f64>> {
    let ck: Checkpoint = read_json(&layout.root.join(Layout::checkpoint_rel(name)))?;
    Ok(ck.to_model()?.net.linear)
}

pub fn encoding_domain(cfg: &ExperimentConfig, data: Option<&SnapshotDataset>) -> Result<IntegrationDomain> {
    let q = cfg.encoding.quadrature.clone();
    match &cfg.encoding.domain {
        DomainChoice::SeedBox { inflate } => IntegrationDomain::new(cfg.seed_box().inflate(*inflate), q),
        DomainChoice::DatasetBox { inflate } => {
            let data = data.ok_or_else(|| Error::Precondition("dataset-box domain needs the training data".into()))?;
            clipped_dataset_domain(data, &cfg.system()?, *inflate, q)
        }
        DomainChoice::Explicit { lo, hi } => IntegrationDomain::new(AxisBox::new(lo.clone(), hi.clone())?, q),
    }
}

/// Builds the five variants: the joint dictionary with direct encoding and
/// with least squares, the aggregate dictionary with direct encoding and
/// with its learned layer, and the radial-basis baseline.
pub fn cmd_encode(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<(String, LiftedLinearModel)>> {
    cfg.validate()?;
    let hash = cfg.hash();
    let sys = cfg.system()?;
    let data = read_train_pairs(layout)?;
    let domain = encoding_domain(cfg, Some(&data))?;
    let tol = cfg.encoding.svd_tol;

    let ssog = Arc::new(build_ssog(load_network(layout, "ssog-unstable")?, load_network(layout, "ssog-stable")?)?);
    let aggregate: Arc<dyn ObservableDictionary> = Arc::new(load_network(layout, "aggregate")?);
    let rbf = make_rbf_dictionary(&data, cfg.observables.total / 2, cfg.observables.rbf_omega, cfg.observables.rbf_form)?;

    let models = vec![
        ("ssog-de".to_string(), relift_linear_layer(ssog.clone(), &sys, &domain, tol)?),
        ("aggregate-de".to_string(), direct_encode(aggregate.clone(), &sys, &domain, tol)?),
        ("ssog".to_string(), edmd_fit(ssog, &data, tol)?),
        (
            "aggregate".to_string(),
            LiftedLinearModel::new(aggregate, load_learned_layer(layout, "aggregate")?, Provenance::LearnedLinearLayer)?,
        ),
        ("edmd".to_string(), edmd_fit(Arc::new(rbf), &data, tol)?),
    ];
    for (name, model) in &models {
        let mut bundle = model.bundle(name);
        bundle.config_hash = Some(hash.clone());
        write_json(&layout.bundle(name), &bundle)?;
        write_csv_with_hash(&layout.matrix(name), &hash, |w| write_matrix_csv(&model.a, w))?;
    }
    Ok(models)
}

fn dictionary_from(desc: &DictionaryDesc, layout: &Layout) -> Result<Arc<dyn ObservableDictionary>> {
    let neural = |d: &DictionaryDesc| -> Result<NeuralDictionary> {
        match d {
            DictionaryDesc::Neural {
                checkpoint: Some(path), ..
            } => {
                let ck: Checkpoint = read_json(&layout.root.join(path))?;
                Ok(NeuralDictionary::new(ck.to_model()?.net.network).with_checkpoint(path.clone()))
            }
            other => Err(Error::Parse(format!("expected a neural dictionary with a checkpoint, found `{}`", other.kind()))),
        }
    };
    Ok(match desc {
        DictionaryDesc::Identity { n } => Arc::new(IdentityDictionary::new(*n)),
        DictionaryDesc::Rbf { centers, omega, form, .. } => Arc::new(RbfDictionary::new(centers.clone(), *omega, *form)?),
        DictionaryDesc::Neural { .. } => Arc::new(neural(desc)?),
        DictionaryDesc::Concat { parts, .. } if parts.len() == 2 => Arc::new(build_ssog(neural(&parts[0])?, neural(&parts[1])?)?),
        other => return Err(Error::Parse(format!("cannot rebuild a `{}` dictionary from a bundle", other.kind()))),
    })
}

/// Reads one bundle and rebuilds its dictionary.
pub fn load_model(layout: &Layout, name: &str) -> Result<LiftedLinearModel> {
    let bundle: ModelBundle = read_json(&layout.bundle(name))?;
    let dict = dictionary_from(&bundle.dictionary, layout)?;
    let mut model = LiftedLinearModel::new(dict, bundle.matrix()?, bundle.provenance)?;
    model.svd = bundle.svd;
    model.domain = bundle.domain;
    model.rejected_nodes = bundle.rejected_nodes;
    Ok(model)
}

fn load_models(layout: &Layout) -> Result<Vec<(String, LiftedLinearModel)>> {
    MODEL_NAMES
        .iter()
        .map(|n| Ok((n.to_string(), load_model(layout, n)?)))
        .collect()
}

/// Re-simulates the manifest's test seeds over the evaluation window.
fn test_trajectories(cfg: &ExperimentConfig, manifest: &Manifest) -> Result<Vec<Trajectory>> {
    let sys = cfg.system()?;
    let horizon = *cfg.eval.horizons.iter().max().expect("validated horizons");
    let mut trajs = simulate_all(&sys, &manifest.test_states(), horizon, cfg.data.divergence_bound)?;
    for (t, label) in trajs.iter_mut().zip(&manifest.test_labels) {
        t.label = *label;
    }
    Ok(trajs)
}

pub fn cmd_eval(cfg: &ExperimentConfig, layout: &Layout) -> Result<ErrorTable> {
    cfg.validate()?;
    let hash = cfg.hash();
    let manifest: Manifest = read_json(&layout.manifest())?;
    check_disjoint(&manifest.train_states(), &manifest.test_states())?;
    let models = load_models(layout)?;
    let tests = test_trajectories(cfg, &manifest)?;
    let refs: Vec<(String, &LiftedLinearModel)> = models.iter().map(|(n, m)| (n.clone(), m)).collect();
    let table = evaluate_suite(&refs, &tests, &cfg.eval.horizons)?;
    write_csv_with_hash(&layout.error_table(), &hash, |w| table.write_csv(w))?;
    write_csv_with_hash(&layout.error_series(), &hash, |w| table.write_series_csv(w))?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSummary {
    pub panel: String,
    pub summary: BoundarySummary,
    pub unstable_modes: usize,
    pub marginal_modes: usize,
    pub stable_modes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub config_hash: String,
    /// How the unstable left basis is normalized before projecting.
    pub projection: String,
    pub resolution: usize,
    pub panels: Vec<PanelSummary>,
}

/// Ground truth plus one quotient grid per model over the seed box.
pub fn cmd_boundary(cfg: &ExperimentConfig, layout: &Layout) -> Result<BoundaryReport> {
    cfg.validate()?;
    let hash = cfg.hash();
    let sys = cfg.system()?;
    let b = cfg.seed_box();
    let res = cfg.modal.grid_resolution;
    let labels = ground_truth_labels(&sys, &b, res, cfg.data.horizon, cfg.data.divergence_bound)?;
    let truth = BoundaryField::ground_truth(b.clone(), res, labels.clone());
    write_csv_with_hash(&layout.boundary(GROUND_TRUTH_PANEL), &hash, |w| truth.write_csv(w))?;
    let mut panels = vec![PanelSummary {
        panel: GROUND_TRUTH_PANEL.into(),
        summary: truth.summary.expect("labels given"),
        unstable_modes: 0,
        marginal_modes: 0,
        stable_modes: 0,
    }];
    for (name, model) in load_models(layout)? {
        let decomp = eigendecompose(&model.a, cfg.modal.epsilon)?;
        let field = boundary_grid_with(&decomp, model.dictionary.as_ref(), &b, res, Some(labels.clone()))?;
        write_csv_with_hash(&layout.boundary(&name), &hash, |w| field.write_csv(w))?;
        write_csv_with_hash(&layout.eigen_report(&name), &hash, |w| decomp.write_eigen_csv(w))?;
        panels.push(PanelSummary {
            panel: name,
            summary: field.summary.expect("labels given"),
            unstable_modes: decomp.indices(ModeClass::Unstable).len(),
            marginal_modes: decomp.indices(ModeClass::Marginal).len(),
            stable_modes: decomp.indices(ModeClass::Stable).len(),
        });
    }
    let report = BoundaryReport {
        config_hash: hash,
        projection: "orthonormalized-unstable-left-basis".into(),
        resolution: res,
        panels,
    };
    write_json(&layout.boundary_summary(), &report)?;
    Ok(report)
}

/// Every stage in order.
pub fn run_all(cfg: &ExperimentConfig, layout: &Layout) -> Result<(ErrorTable, BoundaryReport)> {
    cmd_gen(cfg, layout)?;
    cmd_train(cfg, layout)?;
    cmd_encode(cfg, layout)?;
    let table = cmd_eval(cfg, layout)?;
    let report = cmd_boundary(cfg, layout)?;
    Ok((table, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.data.train_trajectories = 40;
        cfg.data.test_stable = 5;
        cfg.data.test_unstable = 5;
        cfg.data.horizon = 200;
        cfg.observables.total = 4;
        cfg.train.epochs = 20;
        cfg.encoding.quadrature = crate::encoding::Quadrature::TensorTrapezoid { resolution: 30 };
        cfg.modal.grid_resolution = 6;
        cfg
    }

    #[test]
    fn tiny_pipeline_runs_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        let cfg = tiny_config();
        let gen = cmd_gen(&cfg, &layout).unwrap();
        assert_eq!(gen.manifest.test_seeds.len(), 10);
        assert_eq!(gen.test.iter().filter(|t| t.label == Label::Unstable).count(), 5);
        let nets = cmd_train(&cfg, &layout).unwrap();
        assert_eq!(nets.len(), 3);
        assert_eq!(nets[2].net.network.output_dim(), 2 * nets[0].net.network.output_dim());
        let models = cmd_encode(&cfg, &layout).unwrap();
        assert_eq!(models.len(), 5);
        assert!(models.iter().all(|(_, m)| m.order() == 6));
        let table = cmd_eval(&cfg, &layout).unwrap();
        assert_eq!(table.rows.len(), 5 * 2 * 2);
        let report = cmd_boundary(&cfg, &layout).unwrap();
        assert_eq!(report.panels.len(), 6);
        let text = fs::read_to_string(layout.boundary(GROUND_TRUTH_PANEL)).unwrap();
        assert!(text.starts_with(&format!("# config_hash={}", cfg.hash())));
        assert_eq!(text.lines().count(), 2 + 36);
    }

    #[test]
    fn bundles_reload_to_the_same_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        let cfg = tiny_config();
        cmd_gen(&cfg, &layout).unwrap();
        cmd_train(&cfg, &layout).unwrap();
        let built = cmd_encode(&cfg, &layout).unwrap();
        for (name, model) in &built {
            let back = load_model(&layout, name).unwrap();
            assert_eq!(back.a, model.a, "{name}");
            let x = State::from_vec(vec![0.3, -0.2]);
            assert_eq!(back.lift(&x).unwrap(), model.lift(&x).unwrap(), "{name}");
        }
    }

    #[test]
    fn missing_inputs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        assert!(matches!(cmd_train(&tiny_config(), &layout), Err(Error::Io(_))));
        assert!(matches!(cmd_eval(&tiny_config(), &layout), Err(Error::Io(_))));
    }
}
