//! DPO fine-tuning against a frozen reference copy, SFT pretraining, PFC1
//! checkpoints, and the beta/lr grid runner.
//!
//! The pair loss is `-log sigmoid(-beta ((L_theta^w - L_ref^w) -
//! (L_theta^l - L_ref^l)))` with the inner loss chosen by the generator tag
//! (denoising MSE for DDPM, velocity MSE for flow matching). The timestep
//! draw is shared across all four inner evaluations; the noise draws are
//! independent per image but shared between policy and reference.
//!
//! ## PFC1 layout (little-endian, f32 weights)
//!
//! ```text
//! magic "PFC1" | u16 version=1 | u8 generator_tag | u8 activation(0=tanh)
//! | u32 input_dim | u32 n_hidden | hidden dims (u32 each) | u32 output_dim
//! | u64 config_hash | u64 step
//! then per layer: weights f32 * (out*in), biases f32 * out
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::diffusion::{ddpm_loss, ddpm_loss_value};
use crate::error::{Error, Result};
use crate::flowmatch::{fm_loss, fm_loss_value};
use crate::generate::{GeneratorTag, SampleSpec};
use crate::nn::{adam_step, AdamState, Activation, Layer, MlpGrads, MlpParams};
use crate::prefdata::{PairRecord, PreferenceDataset};
use crate::rng::{normal_vec, rng_from, stable_hash};
use crate::tensor::Tensor;
use crate::toyworld::{to_model_space, InpaintTask};

pub const DEFAULT_BETA: f64 = 2000.0;
pub const DEFAULT_TOY_LR: f64 = 1e-5;
pub const PAPER_LR: f64 = 1e-7;
pub const DEFAULT_STEPS: usize = 2000;
pub const DEFAULT_BATCH: usize = 32;

#[derive(Debug, Clone)]
pub struct DpoConfig {
    pub beta: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub generator_tag: GeneratorTag,
    pub seed: u64,
}

impl DpoConfig {
    pub fn toy(generator_tag: GeneratorTag, seed: u64) -> Self {
        DpoConfig {
            beta: DEFAULT_BETA,
            lr: DEFAULT_TOY_LR,
            steps: DEFAULT_STEPS,
            batch: DEFAULT_BATCH,
            generator_tag,
            seed,
        }
    }

    pub fn hash(&self) -> u64 {
        stable_hash(&[
            self.beta.to_bits(),
            self.lr.to_bits(),
            self.steps as u64,
            self.batch as u64,
            self.generator_tag.to_byte() as u64,
            self.seed,
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub generator_tag: GeneratorTag,
    pub config_hash: u64,
    pub step: u64,
}

/// Timestep draw for one pair visit: a discrete step for DDPM, a flow time
/// for FM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeDraw {
    Step(usize),
    Frac(f64),
}

fn inner_loss_grads(
    params: &MlpParams,
    task: &InpaintTask,
    k: usize,
    x0: &Tensor,
    time: TimeDraw,
    eps: &Tensor,
    spec: &SampleSpec,
) -> Result<(f64, MlpGrads)> {
    match (spec.tag, time) {
        (GeneratorTag::Ddpm, TimeDraw::Step(t)) => ddpm_loss(params, task, k, x0, t, eps, &spec.sched),
        (GeneratorTag::Fm, TimeDraw::Frac(t)) => fm_loss(params, task, k, x0, t, eps),
        _ => Err(Error::InvalidParam {
            name: "time",
            reason: "time draw kind does not match generator tag".into(),
        }),
    }
}

fn inner_loss_value(
    params: &MlpParams,
    task: &InpaintTask,
    k: usize,
    x0: &Tensor,
    time: TimeDraw,
    eps: &Tensor,
    spec: &SampleSpec,
) -> Result<f64> {
    match (spec.tag, time) {
        (GeneratorTag::Ddpm, TimeDraw::Step(t)) => {
            ddpm_loss_value(params, task, k, x0, t, eps, &spec.sched)
        }
        (GeneratorTag::Fm, TimeDraw::Frac(t)) => fm_loss_value(params, task, k, x0, t, eps),
        _ => Err(Error::InvalidParam {
            name: "time",
            reason: "time draw kind does not match generator tag".into(),
        }),
    }
}

fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        0.0
    } else {
        (1.0 + x.exp()).ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// DPO pair loss with gradients w.r.t. the policy only.
#[allow(clippy::too_many_arguments)]
pub fn dpo_pair_loss(
    policy: &MlpParams,
    reference: &MlpParams,
    rec: &PairRecord,
    k: usize,
    time: TimeDraw,
    eps_w: &Tensor,
    eps_l: &Tensor,
    beta: f64,
    spec: &SampleSpec,
) -> Result<(f64, MlpGrads)> {
    let task = &rec.task;
    let x0_w = to_model_space(&rec.pair.preferred);
    let x0_l = to_model_space(&rec.pair.dispreferred);
    let (loss_w, grads_w) = inner_loss_grads(policy, task, k, &x0_w, time, eps_w, spec)?;
    let (loss_l, grads_l) = inner_loss_grads(policy, task, k, &x0_l, time, eps_l, spec)?;
    let ref_w = inner_loss_value(reference, task, k, &x0_w, time, eps_w, spec)?;
    let ref_l = inner_loss_value(reference, task, k, &x0_l, time, eps_l, spec)?;
    let h = -beta * ((loss_w - ref_w) - (loss_l - ref_l));
    let loss = softplus(-h);
    if !loss.is_finite() {
        return Err(Error::NonFinite { context: "dpo_pair_loss", step: None });
    }
    // dLoss/dL_theta^w = -beta (sigma(h) - 1) = beta (1 - sigma(h)); mirrored
    // for the dispreferred branch.
    let factor = beta * (1.0 - sigmoid(h));
    let mut grads = grads_w;
    grads.scale(factor);
    grads.add_scaled(&grads_l, -factor);
    Ok((loss, grads))
}

fn draw_time(spec: &SampleSpec, rng_seed: u64) -> TimeDraw {
    let mut rng = rng_from(rng_seed);
    match spec.tag {
        GeneratorTag::Ddpm => TimeDraw::Step(rng.gen_range(1..=spec.sched.t_steps)),
        GeneratorTag::Fm => TimeDraw::Frac(rng.gen_range(0.0..1.0)),
    }
}

/// Train DPO on a preference dataset, returning the final checkpoint, the
/// per-step loss trace, and snapshots at the requested step counts.
pub fn train_dpo_with_snapshots(
    pretrained: &Checkpoint,
    dataset: &PreferenceDataset,
    k: usize,
    config: &DpoConfig,
    spec: &SampleSpec,
    snapshot_steps: &[usize],
) -> Result<(Checkpoint, Vec<(usize, f64)>, Vec<(usize, Checkpoint)>)> {
    if pretrained.generator_tag != dataset.header.generator_tag
        || config.generator_tag != dataset.header.generator_tag
    {
        return Err(Error::TagMismatch {
            checkpoint: pretrained.generator_tag.as_str().into(),
            dataset: dataset.header.generator_tag.as_str().into(),
        });
    }
    if dataset.records.is_empty() {
        return Err(Error::InvalidParam {
            name: "dataset",
            reason: "no preference pairs".into(),
        });
    }
    let reference = pretrained.params.clone();
    let mut policy = pretrained.params.clone();
    let mut adam = AdamState::new(&policy, config.lr);
    let mut trace = Vec::with_capacity(config.steps);
    let mut snapshots = Vec::new();
    let mut order: Vec<usize> = (0..dataset.records.len()).collect();
    let mut shuffle_rng = rng_from(stable_hash(&[config.seed, 0x5AFF]));
    let mut cursor = order.len();

    let at_snapshot = |step: usize, policy: &MlpParams| Checkpoint {
        params: policy.clone(),
        generator_tag: config.generator_tag,
        config_hash: config.hash(),
        step: step as u64,
    };
    if snapshot_steps.contains(&0) {
        snapshots.push((0, at_snapshot(0, &policy)));
    }

    let eps_dim = 3 * dataset.header.width * dataset.header.height;
    for step in 0..config.steps {
        // Refill the shuffled visit order when exhausted.
        let mut batch_idx = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            batch_idx.push(order[cursor]);
            cursor += 1;
        }

        let evals: Vec<Result<(f64, MlpGrads)>> = batch_idx
            .par_iter()
            .enumerate()
            .map(|(slot, &pair_i)| {
                let rec = &dataset.records[pair_i];
                let visit = stable_hash(&[config.seed, step as u64, slot as u64, 0xD120]);
                let time = draw_time(spec, stable_hash(&[visit, 1]));
                let eps_w = Tensor::vector(normal_vec(stable_hash(&[visit, 2]), eps_dim));
                let eps_l = Tensor::vector(normal_vec(stable_hash(&[visit, 3]), eps_dim));
                dpo_pair_loss(&policy, &reference, rec, k, time, &eps_w, &eps_l, config.beta, spec)
            })
            .collect();

        let mut total = policy.zero_grads();
        let mut loss_sum = 0.0;
        for ev in evals {
            let (loss, grads) = ev.map_err(|e| match e {
                Error::NonFinite { context, .. } => Error::NonFinite { context, step: Some(step) },
                other => other,
            })?;
            loss_sum += loss;
            total.add(&grads);
        }
        total.scale(1.0 / config.batch as f64);
        let mean_loss = loss_sum / config.batch as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite { context: "train_dpo", step: Some(step) });
        }
        adam_step(&mut adam, &mut policy, &total)?;
        trace.push((step, mean_loss));
        if snapshot_steps.contains(&(step + 1)) {
            snapshots.push((step + 1, at_snapshot(step + 1, &policy)));
        }
    }

    debug_assert_eq!(reference, pretrained.params);
    let final_ckpt = Checkpoint {
        params: policy,
        generator_tag: config.generator_tag,
        config_hash: config.hash(),
        step: config.steps as u64,
    };
    Ok((final_ckpt, trace, snapshots))
}

pub fn train_dpo(
    pretrained: &Checkpoint,
    dataset: &PreferenceDataset,
    k: usize,
    config: &DpoConfig,
    spec: &SampleSpec,
) -> Result<(Checkpoint, Vec<(usize, f64)>)> {
    let (ckpt, trace, _) = train_dpo_with_snapshots(pretrained, dataset, k, config, spec, &[])?;
    Ok((ckpt, trace))
}

/// Supervised pretraining on the toy dataset: minimizes the generator's own
/// denoising/velocity loss over random (t, eps) draws. This checkpoint plays
/// the pre-DPO baseline role.
pub fn pretrain_sft(
    tasks: &[InpaintTask],
    k: usize,
    spec: &SampleSpec,
    hidden_dims: &[usize],
    steps: usize,
    lr: f64,
    batch: usize,
    seed: u64,
) -> Result<(Checkpoint, Vec<(usize, f64)>)> {
    let first = tasks.first().ok_or_else(|| Error::InvalidParam {
        name: "tasks",
        reason: "empty task list".into(),
    })?;
    let (w, h) = (first.source.width, first.source.height);
    let input_dim = crate::cond::cond_input_dim(w, h, k);
    let output_dim = 3 * w * h;
    let mut params = MlpParams::init(input_dim, hidden_dims, output_dim, stable_hash(&[seed, 0x1417]));
    let mut adam = AdamState::new(&params, lr);
    let mut trace = Vec::with_capacity(steps);
    let mut rng = rng_from(stable_hash(&[seed, 0x5F7]));

    for step in 0..steps {
        let batch_tasks: Vec<(usize, u64)> = (0..batch)
            .map(|slot| {
                let ti = rng.gen_range(0..tasks.len());
                (ti, stable_hash(&[seed, step as u64, slot as u64, 0x5F72]))
            })
            .collect();
        let evals: Vec<Result<(f64, MlpGrads)>> = batch_tasks
            .par_iter()
            .map(|&(ti, visit)| {
                let task = &tasks[ti];
                let x0 = to_model_space(&task.source);
                let time = draw_time(spec, stable_hash(&[visit, 1]));
                let eps = Tensor::vector(normal_vec(stable_hash(&[visit, 2]), output_dim));
                inner_loss_grads(&params, task, k, &x0, time, &eps, spec)
            })
            .collect();
        let mut total = params.zero_grads();
        let mut loss_sum = 0.0;
        for ev in evals {
            let (loss, grads) = ev?;
            loss_sum += loss;
            total.add(&grads);
        }
        total.scale(1.0 / batch as f64);
        let mean_loss = loss_sum / batch as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite { context: "pretrain_sft", step: Some(step) });
        }
        adam_step(&mut adam, &mut params, &total)?;
        trace.push((step, mean_loss));
    }

    Ok((
        Checkpoint {
            params,
            generator_tag: spec.tag,
            config_hash: stable_hash(&[seed, steps as u64, lr.to_bits()]),
            step: steps as u64,
        },
        trace,
    ))
}

/// One grid cell result. Failed cells carry the error and no metrics.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub beta: f64,
    pub lr: f64,
    pub metrics: Vec<(String, f64)>,
    pub error: Option<String>,
}

/// Train one model per (beta, lr) and evaluate each with the supplied
/// evaluator. Cell failures are recorded and the grid continues.
pub fn hparam_grid<F>(
    pretrained: &Checkpoint,
    dataset: &PreferenceDataset,
    k: usize,
    betas: &[f64],
    lrs: &[f64],
    base: &DpoConfig,
    spec: &SampleSpec,
    eval_fn: F,
) -> Result<Vec<GridRow>>
where
    F: Fn(&Checkpoint) -> Result<Vec<(String, f64)>>,
{
    if betas.is_empty() || lrs.is_empty() {
        return Err(Error::InvalidParam {
            name: "grid",
            reason: "beta and lr grids must be non-empty".into(),
        });
    }
    let mut rows = Vec::with_capacity(betas.len() * lrs.len());
    for &beta in betas {
        for &lr in lrs {
            let config = DpoConfig { beta, lr, ..base.clone() };
            let cell = train_dpo(pretrained, dataset, k, &config, spec)
                .and_then(|(ckpt, _)| eval_fn(&ckpt));
            match cell {
                Ok(metrics) => rows.push(GridRow { beta, lr, metrics, error: None }),
                Err(e) => rows.push(GridRow {
                    beta,
                    lr,
                    metrics: Vec::new(),
                    error: Some(format!("{}: {e}", e.category())),
                }),
            }
        }
    }
    Ok(rows)
}

/// The paper-faithful search grids.
pub fn paper_grid() -> (Vec<f64>, Vec<f64>) {
    (vec![2000.0, 4000.0, 8000.0], vec![1e-7, 1e-6, 1e-5])
}

// ---------------------------------------------------------------------------
// PFC1 checkpoints
// ---------------------------------------------------------------------------

const PFC_MAGIC: &[u8; 4] = b"PFC1";
const PFC_VERSION: u16 = 1;

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(PFC_MAGIC)?;
    w.write_all(&PFC_VERSION.to_le_bytes())?;
    w.write_all(&[ckpt.generator_tag.to_byte(), 0u8])?;
    let p = &ckpt.params;
    w.write_all(&(p.input_dim as u32).to_le_bytes())?;
    w.write_all(&(p.hidden_dims.len() as u32).to_le_bytes())?;
    for d in &p.hidden_dims {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    w.write_all(&(p.output_dim as u32).to_le_bytes())?;
    w.write_all(&ckpt.config_hash.to_le_bytes())?;
    w.write_all(&ckpt.step.to_le_bytes())?;
    for layer in &p.layers {
        for v in layer.weights.iter().chain(&layer.biases) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let fail = |reason: &str| Error::Format { format: "PFC1", reason: reason.into() };
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fail("truncated file"))?;
    if &magic != PFC_MAGIC {
        return Err(fail(&format!("bad magic {magic:?}")));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2).map_err(|_| fail("truncated file"))?;
    if u16::from_le_bytes(b2) != PFC_VERSION {
        return Err(fail("unsupported version"));
    }
    let mut tags = [0u8; 2];
    r.read_exact(&mut tags).map_err(|_| fail("truncated file"))?;
    let generator_tag = GeneratorTag::from_byte(tags[0])?;
    if tags[1] != 0 {
        return Err(fail("unknown activation tag"));
    }
    let mut b4 = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut b4).map_err(|_| fail("truncated file"))?;
        Ok(u32::from_le_bytes(b4))
    };
    let input_dim = read_u32(&mut r)? as usize;
    let n_hidden = read_u32(&mut r)? as usize;
    if n_hidden > 64 {
        return Err(fail("implausible hidden layer count"));
    }
    let mut hidden_dims = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden_dims.push(read_u32(&mut r)? as usize);
    }
    let output_dim = read_u32(&mut r)? as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(|_| fail("truncated file"))?;
    let config_hash = u64::from_le_bytes(b8);
    r.read_exact(&mut b8).map_err(|_| fail("truncated file"))?;
    let step = u64::from_le_bytes(b8);

    let mut dims = vec![input_dim];
    dims.extend_from_slice(&hidden_dims);
    dims.push(output_dim);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    let mut f4 = [0u8; 4];
    for win in dims.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let mut weights = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            r.read_exact(&mut f4).map_err(|_| fail("truncated weights"))?;
            weights.push(f32::from_le_bytes(f4) as f64);
        }
        let mut biases = Vec::with_capacity(fan_out);
        for _ in 0..fan_out {
            r.read_exact(&mut f4).map_err(|_| fail("truncated biases"))?;
            biases.push(f32::from_le_bytes(f4) as f64);
        }
        layers.push(Layer { in_dim: fan_in, out_dim: fan_out, weights, biases });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(fail("trailing bytes after weights"));
    }
    Ok(Checkpoint {
        params: MlpParams {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Tanh,
            layers,
        },
        generator_tag,
        config_hash,
        step,
    })
}
