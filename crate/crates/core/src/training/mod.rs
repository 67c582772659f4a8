//! L1 training with Adam on bicubic-degraded patches.

mod adam;
mod data;
mod schedule;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use adam::{AdamConfig, AdamState};
pub use data::{crop, image_files, load_pairs, TrainPair};
pub use schedule::Schedule;

use crate::config::parse_num;
use crate::error::{Error, Result};
use crate::network::EstnWeights;
use crate::tensor::{Element, Tape, Tensor, Var};
use crate::weights::{save_checkpoint, write_atomic};

/// Mean over the batch of per-image L1 norms.
pub fn l1_loss<'t, T: Element>(sr: &[Var<'t, T>], hr: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    if sr.is_empty() || sr.len() != hr.len() {
        return Err(Error::shape("l1_loss", format!("{} outputs vs {} targets", sr.len(), hr.len())));
    }
    let mut total: Option<Var<'t, T>> = None;
    for (s, h) in sr.iter().zip(hr) {
        let term = s.sub(*h)?.abs()?.sum()?;
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    total.expect("non-empty batch").scale(1.0 / sr.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub patch: usize,
    pub iterations: usize,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Checkpoint period in iterations; 0 keeps only the first and last.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 64,
            patch: 64,
            iterations: 500,
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.patch == 0 {
            return Err(Error::Config("batch and patch must be at least 1".into()));
        }
        self.schedule.validate()
    }

    /// Applies one key; returns false for keys this type does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "batch" => self.batch = parse_num(value)?,
            "patch" => self.patch = parse_num(value)?,
            "iterations" => self.iterations = parse_num(value)?,
            "lr" => self.schedule.initial = parse_num(value)?,
            "milestones" => {
                self.schedule.milestones = if value.trim().is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(parse_num).collect::<Result<_>>()?
                };
            }
            "beta1" => self.adam.beta1 = parse_num(value)?,
            "beta2" => self.adam.beta2 = parse_num(value)?,
            "adam_eps" => self.adam.eps = parse_num(value)?,
            "weight_decay" => self.adam.weight_decay = parse_num(value)?,
            "seed" => self.seed = parse_num(value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Outcome of a run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub records: Vec<IterationRecord>,
    pub adam: AdamState<f32>,
    pub checkpoints: Vec<PathBuf>,
}

/// Loss and parameter gradients of one sample, already divided by `n`.
fn sample_grads(w: &EstnWeights<f32>, lr: &Tensor<f32>, hr: &Tensor<f32>, n: usize) -> Result<(f64, Vec<Tensor<f32>>)> {
    let tape = Tape::new();
    let p = w.params.bind(&tape, true);
    let sr = w.forward(&p, tape.constant(lr.clone()))?;
    let loss = l1_loss(&[sr], &[tape.constant(hr.clone())])?.scale(1.0 / n as f64)?;
    tape.backward(loss)?;
    Ok((loss.value().item() as f64, p.grads()))
}

/// One optimisation step on `batch`; returns the batch loss before the
/// update.
pub fn train_step(
    w: &mut EstnWeights<f32>,
    adam: &mut AdamState<f32>,
    batch: &[(Tensor<f32>, Tensor<f32>)],
    lr: f64,
    cfg: &AdamConfig,
) -> Result<f64> {
    let n = batch.len();
    let model = &*w;
    let results: Vec<_> = batch.par_iter().map(|(l, h)| sample_grads(model, l, h, n)).collect();
    let mut loss = 0.0;
    let mut grads: Option<Vec<Tensor<f32>>> = None;
    for r in results {
        let (l, g) = r?;
        loss += l;
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
        }
    }
    let grads = grads.ok_or_else(|| Error::Data("empty batch".into()))?;
    adam.update(w.params.tensors_mut(), &grads, lr, cfg)?;
    Ok(loss)
}

fn checkpoint_name(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("checkpoint_{iteration:06}.bin"))
}

/// Runs `cfg.iterations` steps. With `out`, writes `loss.csv` and
/// checkpoints (always the initial state and the final one). `on_iter` sees
/// every record as it is produced.
pub fn train_loop(
    w: &mut EstnWeights<f32>,
    pairs: &[TrainPair],
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut on_iter: impl FnMut(&IterationRecord),
) -> Result<TrainOutput> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(w.params.tensors());
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut checkpoints = Vec::new();
    let mut csv = String::from("iteration,lr,loss\n");
    let save = |w: &EstnWeights<f32>, adam: &AdamState<f32>, it: usize, list: &mut Vec<PathBuf>| -> Result<()> {
        if let Some(dir) = out {
            let path = checkpoint_name(dir, it);
            save_checkpoint(w, adam, &path)?;
            list.push(path);
        }
        Ok(())
    };
    save(w, &adam, 0, &mut checkpoints)?;
    for it in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let pair = pairs.choose(&mut rng).expect("non-empty");
            batch.push(pair.sample(cfg.patch, &mut rng)?);
        }
        let lr = cfg.schedule.lr_at(it);
        let loss = match train_step(w, &mut adam, &batch, lr, &cfg.adam) {
            Err(Error::NonFinite { .. }) => return Err(Error::NumericalAbort { iteration: it }),
            other => other?,
        };
        if !loss.is_finite() || !w.params.tensors().iter().all(Tensor::is_finite) {
            return Err(Error::NumericalAbort { iteration: it });
        }
        let rec = IterationRecord { iteration: it, lr, loss };
        let _ = writeln!(csv, "{},{:e},{:.9e}", it, lr, loss);
        on_iter(&rec);
        records.push(rec);
        let done = it + 1;
        if done < cfg.iterations && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            save(w, &adam, done, &mut checkpoints)?;
        }
    }
    if cfg.iterations > 0 {
        save(w, &adam, cfg.iterations, &mut checkpoints)?;
    }
    if let Some(dir) = out {
        write_atomic(&dir.join("loss.csv"), csv.as_bytes())?;
    }
    Ok(TrainOutput {
        records,
        adam,
        checkpoints,
    })
}
