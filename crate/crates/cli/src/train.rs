//! The training loop behind `seg train`.

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use atrous_seg::arch::Model;
use atrous_seg::data::{augment, collate, Sample};
use atrous_seg::optim::PolySchedule;
use atrous_seg::train::train_step;
use atrous_seg::{Params, Result, SegError, Sgd};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_LOG_FILE: &str = "loss.csv";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Params,
    pub sgd: Sgd,
    pub log: Vec<LogRow>,
    pub iteration: usize,
}

pub fn loss_log_csv(rows: &[LogRow], header: bool) -> String {
    let mut out = if header { "iter,lr,loss\n".to_string() } else { String::new() };
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.iter, r.lr, r.loss);
    }
    out
}

/// splitmix64 finalizer, for deriving independent per-use seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sample order: a fresh seeded permutation per epoch, so the batch at any
/// iteration is known without replaying earlier ones.
struct Sampler {
    seed: u64,
    n: usize,
    epoch: Option<usize>,
    perm: Vec<usize>,
}

impl Sampler {
    fn index(&mut self, global: usize) -> usize {
        let epoch = global / self.n;
        if self.epoch != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch as u64);
            self.perm = (0..self.n).collect();
            self.perm.shuffle(&mut rng);
            self.epoch = Some(epoch);
        }
        self.perm[global % self.n]
    }
}

/// Runs the configured schedule from `resume` (or from a fresh
/// initialization). With `out_dir`, checkpoints and the loss log are
/// written there; a checkpoint is only replaced by a later good one.
pub fn train(cfg: &RunConfig, samples: &[Sample], resume: Option<&Checkpoint>, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    train_until(cfg, samples, resume, out_dir, None)
}

/// Like [`train`], but stops after iteration `until` (the schedule still
/// spans `train.max_iter`), so the run can be resumed later.
pub fn train_until(
    cfg: &RunConfig,
    samples: &[Sample],
    resume: Option<&Checkpoint>,
    out_dir: Option<&Path>,
    until: Option<usize>,
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(SegError::Data("no training samples".into()));
    }
    let t = &cfg.train;
    let model = Model::new(&cfg.arch)?;
    let (mut params, start) = match resume {
        Some(ck) => {
            model.graph().check_params(&ck.params)?;
            (ck.params.clone(), ck.iteration as usize)
        }
        None => (model.init_params::<f64>(cfg.seed)?, 0),
    };
    let mut sgd = Sgd::new(t.momentum, t.weight_decay)?;
    if let Some(ck) = resume {
        ck.restore_velocities(&mut sgd);
    }
    let schedule = PolySchedule::new(t.base_lr, t.power, t.max_iter)?;
    let aug = t.augment();
    let config_text = cfg.to_text();
    let mut sampler = Sampler { seed: mix_seed(cfg.seed, 1), n: samples.len(), epoch: None, perm: Vec::new() };
    let mut log = Vec::new();
    let save = |params: &Params, sgd: &Sgd, iteration: usize, log: &[LogRow]| -> Result<()> {
        if let Some(dir) = out_dir {
            Checkpoint::new(config_text.clone(), iteration as u64, params, Some(sgd)).save(&dir.join(CHECKPOINT_FILE))?;
            write_log(dir, log, start)?;
        }
        Ok(())
    };
    let end = until.map_or(t.max_iter, |u| u.min(t.max_iter));
    for it in start..end {
        let mut batch = Vec::with_capacity(t.batch);
        for j in 0..t.batch {
            let g = it * t.batch + j;
            let s = &samples[sampler.index(g)];
            batch.push(augment(s, &aug, mix_seed(cfg.seed, 2 + g as u64))?);
        }
        let batch = collate(&batch)?;
        let lr = schedule.lr_at(it);
        let loss = match train_step(&model, &mut params, &mut sgd, &batch, lr) {
            Ok(l) => l,
            Err(e) => {
                if let Some(dir) = out_dir {
                    write_log(dir, &log, start)?;
                }
                return Err(match e {
                    SegError::NonFinite(m) => SegError::NonFinite(format!("iteration {it}: {m}")),
                    other => other,
                });
            }
        };
        log.push(LogRow { iter: it, lr, loss });
        if (it + 1) % 50 == 0 || it + 1 == t.max_iter {
            info!("iter {:>6}/{} lr {lr:.6} loss {loss:.5}", it + 1, t.max_iter);
        }
        if t.checkpoint_every > 0 && (it + 1) % t.checkpoint_every == 0 && it + 1 < end {
            save(&params, &sgd, it + 1, &log)?;
        }
    }
    let iteration = end.max(start);
    save(&params, &sgd, iteration, &log)?;
    Ok(TrainOutcome { params, sgd, log, iteration })
}

/// Writes the loss log. A resumed run appends to the rows already on disk.
fn write_log(dir: &Path, log: &[LogRow], start: usize) -> Result<()> {
    let path = dir.join(LOSS_LOG_FILE);
    let mut text = if start > 0 && path.is_file() {
        let old = std::fs::read_to_string(&path)?;
        old.lines()
            .filter(|l| l.split(',').next().and_then(|i| i.parse::<usize>().ok()).map_or(true, |i| i < start))
            .map(|l| format!("{l}\n"))
            .collect()
    } else {
        "iter,lr,loss\n".to_string()
    };
    text.push_str(&loss_log_csv(log, false));
    std::fs::write(path, text)?;
    Ok(())
}
