//! Linear rollouts in lifted space and state-space SSE tables over labeled
//! test trajectories.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Label, State, Trajectory};
use crate::encoding::LiftedLinearModel;
use crate::error::{Error, Result};

/// Saturated SSE reported for diverged rollouts.
pub const DIVERGENCE_SENTINEL: f64 = 6.8e131;
/// Lifted-state magnitude beyond which a rollout counts as diverged.
pub const ROLLOUT_LIMIT: f64 = 1e60;

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `horizon + 1` states; entries from `diverged_at` on are frozen at the sentinel.
    pub states: Vec<State>,
    pub diverged_at: Option<usize>,
}

impl Rollout {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// Lifts `x0` once and iterates the transition matrix, reading back the
/// state prefix at each step.
pub fn rollout(model: &LiftedLinearModel, x0: &State, horizon: usize) -> Result<Rollout> {
    if horizon < 1 {
        return Err(Error::Precondition("rollout horizon must be >= 1".into()));
    }
    let n = model.state_dim();
    let mut z = model.lift(x0)?;
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x0.clone());
    let mut diverged_at = None;
    for k in 1..=horizon {
        if diverged_at.is_some() {
            states.push(State::from_element(n, DIVERGENCE_SENTINEL));
            continue;
        }
        z = &model.a * &z;
        if z.iter().any(|v| !(v.abs() <= ROLLOUT_LIMIT)) {
            diverged_at = Some(k);
            states.push(State::from_element(n, DIVERGENCE_SENTINEL));
        } else {
            states.push(z.rows(0, n).into_owned());
        }
    }
    Ok(Rollout { states, diverged_at })
}

/// Squared state error at `step`. Saturates to the sentinel when the
/// prediction has diverged or the true trajectory left the divergence bound
/// before `step`.
pub fn sse(pred: &Rollout, truth: &Trajectory, step: usize) -> Result<f64> {
    if step > pred.horizon() {
        return Err(Error::StepOutOfRange {
            step,
            available: pred.horizon(),
        });
    }
    if pred.diverged_at.is_some_and(|d| d <= step) {
        return Ok(DIVERGENCE_SENTINEL);
    }
    let Some(actual) = truth.states.get(step) else {
        if truth.diverged() {
            return Ok(DIVERGENCE_SENTINEL);
        }
        return Err(Error::StepOutOfRange {
            step,
            available: truth.states.len().saturating_sub(1),
        });
    };
    let predicted = &pred.states[step];
    if predicted.len() != actual.len() {
        return Err(crate::error::shape_err("sse", actual.len(), predicted.len()));
    }
    let e: f64 = predicted.iter().zip(actual.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(if e.is_finite() { e.min(DIVERGENCE_SENTINEL) } else { DIVERGENCE_SENTINEL })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// Mean across trajectories; the sentinel as soon as one entry saturates.
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub saturated: usize,
}

impl Envelope {
    fn of(values: &[f64]) -> Self {
        let saturated = values.iter().filter(|v| **v >= DIVERGENCE_SENTINEL).count();
        let mean = if saturated > 0 {
            DIVERGENCE_SENTINEL
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        Self {
            mean,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            saturated,
        }
    }

    pub fn is_saturated(&self) -> bool {
        self.mean >= DIVERGENCE_SENTINEL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub model: String,
    pub subspace: Label,
    pub order: usize,
    pub horizon: usize,
    pub sse: Envelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub model: String,
    pub subspace: Label,
    pub step: usize,
    pub sse: Envelope,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    pub series: Vec<SeriesRow>,
}

impl ErrorTable {
    pub fn get(&self, model: &str, subspace: Label, horizon: usize) -> Option<&ErrorRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.subspace == subspace && r.horizon == horizon)
    }

    /// `model,subspace,order,horizon,mean_sse,min_sse,max_sse`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "model,subspace,order,horizon,mean_sse,min_sse,max_sse")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{:e},{:e},{:e}",
                r.model, r.subspace, r.order, r.horizon, r.sse.mean, r.sse.min, r.sse.max
            )?;
        }
        Ok(())
    }

    /// `model,subspace,step,mean_sse,min_sse,max_sse,saturated`.
    pub fn write_series_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "model,subspace,step,mean_sse,min_sse,max_sse,saturated")?;
        for r in &self.series {
            writeln!(
                w,
                "{},{},{},{:e},{:e},{:e},{}",
                r.model, r.subspace, r.step, r.sse.mean, r.sse.min, r.sse.max, r.sse.saturated
            )?;
        }
        Ok(())
    }
}

/// Every model against every labeled test trajectory. Rows are ordered by
/// model, then subspace (stable first), then horizon.
pub fn evaluate_suite(
    models: &[(String, &LiftedLinearModel)],
    tests: &[Trajectory],
    horizons: &[usize],
) -> Result<ErrorTable> {
    let max_h = *horizons
        .iter()
        .max()
        .ok_or_else(|| Error::Precondition("no evaluation horizons".into()))?;
    let mut table = ErrorTable::default();
    for (name, model) in models {
        for subspace in [Label::Stable, Label::Unstable] {
            let subset: Vec<&Trajectory> = tests.iter().filter(|t| t.label == subspace).collect();
            if subset.is_empty() {
                return Err(Error::EmptyDataset(format!("no {subspace} test trajectories")));
            }
            // per trajectory, the SSE at every step 0..=max_h
            let per_traj = subset
                .par_iter()
                .map(|t| {
                    let pred = rollout(model, t.initial(), max_h)?;
                    (0..=max_h).map(|k| sse(&pred, t, k)).collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let at = |k: usize| per_traj.iter().map(|s| s[k]).collect::<Vec<_>>();
            for &h in horizons {
                table.rows.push(ErrorRow {
                    model: name.clone(),
                    subspace,
                    order: model.order(),
                    horizon: h,
                    sse: Envelope::of(&at(h)),
                });
            }
            for k in 0..=max_h {
                table.series.push(SeriesRow {
                    model: name.clone(),
                    subspace,
                    step: k,
                    sse: Envelope::of(&at(k)),
                });
            }
        }
    }
    Ok(table)
}

/// Fails if any test initial condition coincides bit for bit with a
/// training initial condition.
pub fn check_disjoint(train: &[State], test: &[State]) -> Result<()> {
    let key = |x: &State| x.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let seen: HashSet<Vec<u64>> = train.iter().map(key).collect();
    match test.iter().position(|x| seen.contains(&key(x))) {
        Some(i) => Err(Error::Precondition(format!("test seed {i} also appears in the training seeds"))),
        None => Ok(()),
    }
}
