//! Evaluation and experiment harness: reward-metric reports, paired win
//! rates, bias-drift diagnostics (the reward-hacking instrument), and the
//! candidate/sample scaling runners. All tables go out as one-line-header
//! CSV for external plotting.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dpo::{train_dpo, train_dpo_with_snapshots, Checkpoint, DpoConfig};
use crate::error::{Error, Result};
use crate::generate::SampleSpec;
use crate::prefdata::{build_pairs, gen_candidates, PreferenceDataset, Selector};
use crate::rewards::{brightness, complexity, fidelity, reward_score, vividness, BiasProfile};
use crate::rng::{rng_from, stable_hash};
use crate::toyworld::{prototype_image, Image, InpaintTask};

/// Anything that can produce one blended image per (task, seed).
pub trait SampleSource: Sync {
    fn tag(&self) -> String;
    fn draw(&self, task: &InpaintTask, seed: u64) -> Result<Image>;
}

/// Samples from a trained checkpoint with its generator family.
pub struct CheckpointSource<'a> {
    pub ckpt: &'a Checkpoint,
    pub spec: &'a SampleSpec,
    pub k: usize,
}

impl SampleSource for CheckpointSource<'_> {
    fn tag(&self) -> String {
        format!("{}@{}", self.ckpt.generator_tag.as_str(), self.ckpt.step)
    }
    fn draw(&self, task: &InpaintTask, seed: u64) -> Result<Image> {
        self.spec.sample(&self.ckpt.params, task, self.k, seed)
    }
}

/// Resamples the training distribution itself: prototype plus fresh noise.
/// This is the null generator used to calibrate the hacking index.
pub struct DataResampler {
    pub k: usize,
    pub noise_sigma: f64,
}

impl SampleSource for DataResampler {
    fn tag(&self) -> String {
        "data-resample".into()
    }
    fn draw(&self, task: &InpaintTask, seed: u64) -> Result<Image> {
        let mut img = prototype_image(task.label, self.k, task.source.width, task.source.height);
        let mut rng = rng_from(seed);
        for v in &mut img.pixels {
            let noise: f64 = rng.sample(StandardNormal);
            *v = (*v + self.noise_sigma * noise).clamp(0.0, 1.0);
        }
        Ok(img)
    }
}

/// Emits each task's own source image.
pub struct SourceImages;

impl SampleSource for SourceImages {
    fn tag(&self) -> String {
        "source".into()
    }
    fn draw(&self, task: &InpaintTask, _seed: u64) -> Result<Image> {
        Ok(task.source.clone())
    }
}

/// Emits one fixed image regardless of task or seed.
pub struct ConstantSource(pub Image);

impl SampleSource for ConstantSource {
    fn tag(&self) -> String {
        "constant".into()
    }
    fn draw(&self, _task: &InpaintTask, _seed: u64) -> Result<Image> {
        Ok(self.0.clone())
    }
}

/// A scalar judge over (task, image). Implemented by reward profiles and the
/// mock/remote judges.
pub trait Judge: Sync {
    fn score(&self, task: &InpaintTask, img: &Image) -> Result<f64>;
}

impl<F> Judge for F
where
    F: Fn(&InpaintTask, &Image) -> Result<f64> + Sync,
{
    fn score(&self, task: &InpaintTask, img: &Image) -> Result<f64> {
        self(task, img)
    }
}

/// Judge view of a bias profile.
pub struct RewardJudge {
    pub profile: BiasProfile,
    pub k: usize,
}

impl Judge for RewardJudge {
    fn score(&self, task: &InpaintTask, img: &Image) -> Result<f64> {
        Ok(reward_score(&self.profile, task, img, self.k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_tag: String,
    pub reward_means: Vec<(String, f64)>,
    pub mean_brightness: f64,
    pub mean_vividness: f64,
    pub mean_complexity: f64,
    pub mean_fidelity: f64,
    pub judge_mean: Option<f64>,
    pub sample_count: usize,
}

fn eval_seed(seed: u64, task_id: u32, m_idx: usize) -> u64 {
    stable_hash(&[seed, task_id as u64, m_idx as u64, 0xE7A1])
}

/// Generate `m` samples per task and average every requested scorer plus the
/// bias statistics and fidelity. Deterministic in `seed`.
pub fn evaluate(
    source: &dyn SampleSource,
    tasks: &[InpaintTask],
    k: usize,
    profiles: &[BiasProfile],
    m: usize,
    seed: u64,
    judge: Option<&dyn Judge>,
) -> Result<EvalReport> {
    if m < 1 {
        return Err(Error::InvalidParam {
            name: "m",
            reason: "need at least 1 sample per task".into(),
        });
    }
    let samples: Vec<Result<(usize, Image)>> = tasks
        .par_iter()
        .enumerate()
        .flat_map(|(ti, task)| {
            (0..m)
                .map(move |mi| {
                    source
                        .draw(task, eval_seed(seed, task.task_id, mi))
                        .map(|img| (ti, img))
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let n = tasks.len() * m;
    let mut reward_sums = vec![0.0; profiles.len()];
    let (mut b_sum, mut v_sum, mut c_sum, mut f_sum) = (0.0, 0.0, 0.0, 0.0);
    let mut judge_sum = 0.0;
    for s in samples {
        let (ti, img) = s?;
        let task = &tasks[ti];
        for (acc, p) in reward_sums.iter_mut().zip(profiles) {
            *acc += reward_score(p, task, &img, k);
        }
        b_sum += brightness(&img);
        v_sum += vividness(&img);
        c_sum += complexity(&img);
        f_sum += fidelity(task, &img, k);
        if let Some(j) = judge {
            judge_sum += j.score(task, &img)?;
        }
    }
    Ok(EvalReport {
        model_tag: source.tag(),
        reward_means: profiles
            .iter()
            .zip(&reward_sums)
            .map(|(p, s)| (p.name.clone(), s / n as f64))
            .collect(),
        mean_brightness: b_sum / n as f64,
        mean_vividness: v_sum / n as f64,
        mean_complexity: c_sum / n as f64,
        mean_fidelity: f_sum / n as f64,
        judge_mean: judge.map(|_| judge_sum / n as f64),
        sample_count: n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinRate {
    pub win_a: f64,
    pub win_b: f64,
    pub tie: f64,
    pub counted: usize,
    pub skipped: usize,
}

/// Pairwise comparison with paired seeds: one sample per task from each
/// source against identical noise; the judge picks the winner. Judge
/// failures skip the task and are counted.
pub fn win_rate(
    a: &dyn SampleSource,
    b: &dyn SampleSource,
    tasks: &[InpaintTask],
    judge: &dyn Judge,
    seed: u64,
) -> Result<WinRate> {
    let mut wins_a = 0usize;
    let mut wins_b = 0usize;
    let mut ties = 0usize;
    let mut skipped = 0usize;
    let outcomes: Vec<Result<Option<std::cmp::Ordering>>> = tasks
        .par_iter()
        .map(|task| {
            let s = stable_hash(&[seed, task.task_id as u64, 0x317]);
            let img_a = a.draw(task, s)?;
            let img_b = b.draw(task, s)?;
            let score_a = match judge.score(task, &img_a) {
                Ok(v) => v,
                Err(_) => return Ok(None),
            };
            let score_b = match judge.score(task, &img_b) {
                Ok(v) => v,
                Err(_) => return Ok(None),
            };
            Ok(Some(score_a.partial_cmp(&score_b).ok_or(Error::NonFinite {
                context: "win_rate judge score",
                step: None,
            })?))
        })
        .collect();
    for o in outcomes {
        match o? {
            None => skipped += 1,
            Some(std::cmp::Ordering::Greater) => wins_a += 1,
            Some(std::cmp::Ordering::Less) => wins_b += 1,
            Some(std::cmp::Ordering::Equal) => ties += 1,
        }
    }
    let counted = wins_a + wins_b + ties;
    if counted == 0 {
        return Err(Error::InvalidParam {
            name: "tasks",
            reason: "no tasks could be judged".into(),
        });
    }
    Ok(WinRate {
        win_a: wins_a as f64 / counted as f64,
        win_b: wins_b as f64 / counted as f64,
        tie: ties as f64 / counted as f64,
        counted,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftStat {
    pub name: String,
    /// mean(stat over generated) - mean(stat over training sources).
    pub drift: f64,
    /// Standard error of the drift estimate.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub model_tag: String,
    pub stats: Vec<DriftStat>,
    /// max |drift| over the bias statistics.
    pub hacking_index: f64,
}

fn mean_and_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() < 2 {
        0.0
    } else {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    };
    (mean, var)
}

/// Bias drift of a generator against the training data distribution.
pub fn drift(
    source: &dyn SampleSource,
    eval_tasks: &[InpaintTask],
    train_tasks: &[InpaintTask],
    m: usize,
    seed: u64,
) -> Result<DriftReport> {
    let generated: Vec<Image> = eval_tasks
        .par_iter()
        .flat_map(|task| {
            (0..m)
                .map(move |mi| source.draw(task, eval_seed(seed, task.task_id, mi)))
                .collect::<Vec<_>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let stats: [(&str, fn(&Image) -> f64); 3] = [
        ("brightness", brightness),
        ("vividness", vividness),
        ("complexity", complexity),
    ];
    let mut out = Vec::with_capacity(3);
    for (name, f) in stats {
        let gen_vals: Vec<f64> = generated.iter().map(f).collect();
        let train_vals: Vec<f64> = train_tasks.iter().map(|t| f(&t.source)).collect();
        let (gm, gv) = mean_and_var(&gen_vals);
        let (tm, tv) = mean_and_var(&train_vals);
        let se = (gv / gen_vals.len() as f64 + tv / train_vals.len() as f64).sqrt();
        out.push(DriftStat { name: name.into(), drift: gm - tm, se });
    }
    let hacking_index = out.iter().map(|s| s.drift.abs()).fold(0.0, f64::max);
    Ok(DriftReport { model_tag: source.tag(), stats: out, hacking_index })
}

/// Paired drift comparison between two generators on an identical seed set.
///
/// Sample `i` of each source shares its noise seed, so the (large)
/// across-task spread of the bias statistics cancels in the per-sample
/// difference. `drift` is the mean difference `b - a` of each statistic and
/// `se` its paired standard error — typically far tighter than comparing two
/// independent [`drift`] reports.
pub fn drift_paired(
    source_a: &dyn SampleSource,
    source_b: &dyn SampleSource,
    eval_tasks: &[InpaintTask],
    m: usize,
    seed: u64,
) -> Result<Vec<DriftStat>> {
    let pairs: Vec<(Image, Image)> = eval_tasks
        .par_iter()
        .flat_map(|task| {
            (0..m)
                .map(move |mi| {
                    let s = eval_seed(seed, task.task_id, mi);
                    Ok((source_a.draw(task, s)?, source_b.draw(task, s)?))
                })
                .collect::<Vec<_>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let stats: [(&str, fn(&Image) -> f64); 3] = [
        ("brightness", brightness),
        ("vividness", vividness),
        ("complexity", complexity),
    ];
    let mut out = Vec::with_capacity(3);
    for (name, f) in stats {
        let diffs: Vec<f64> = pairs.iter().map(|(a, b)| f(b) - f(a)).collect();
        let (dm, dv) = mean_and_var(&diffs);
        out.push(DriftStat {
            name: name.into(),
            drift: dm,
            se: (dv / diffs.len() as f64).sqrt(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScaleRow {
    pub n: usize,
    pub mean_margin: f64,
    pub pair_count: usize,
    pub fidelity: f64,
    pub brightness: f64,
    pub vividness: f64,
    pub complexity: f64,
    pub error: Option<String>,
}

/// Candidate-scaling runner: per N, build best-of-N data, train with an
/// identical config, and evaluate. Per-cell failures are recorded and the
/// sweep continues.
#[allow(clippy::too_many_arguments)]
pub fn scale_candidates(
    pretrained: &Checkpoint,
    train_tasks: &[InpaintTask],
    eval_tasks: &[InpaintTask],
    k: usize,
    selector: &Selector,
    n_list: &[usize],
    config: &DpoConfig,
    spec: &SampleSpec,
    profiles: &[BiasProfile],
    data_seed: u64,
    eval_m: usize,
    eval_seed: u64,
) -> Result<Vec<CandidateScaleRow>> {
    if !n_list.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidParam {
            name: "n_list",
            reason: "candidate counts must be strictly ascending".into(),
        });
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let cell = (|| -> Result<CandidateScaleRow> {
            let cands =
                gen_candidates(&pretrained.params, spec, train_tasks, k, n, data_seed, profiles)?;
            let ds = build_pairs(&cands, train_tasks, selector, data_seed, n, spec.tag, k)?;
            let mean_margin = if ds.records.is_empty() {
                0.0
            } else {
                ds.records.iter().map(|r| r.pair.margin).sum::<f64>() / ds.records.len() as f64
            };
            let (ckpt, _) = train_dpo(pretrained, &ds, k, config, spec)?;
            let report = evaluate(
                &CheckpointSource { ckpt: &ckpt, spec, k },
                eval_tasks,
                k,
                profiles,
                eval_m,
                eval_seed,
                None,
            )?;
            Ok(CandidateScaleRow {
                n,
                mean_margin,
                pair_count: ds.records.len(),
                fidelity: report.mean_fidelity,
                brightness: report.mean_brightness,
                vividness: report.mean_vividness,
                complexity: report.mean_complexity,
                error: None,
            })
        })();
        match cell {
            Ok(row) => rows.push(row),
            Err(e) => rows.push(CandidateScaleRow {
                n,
                mean_margin: f64::NAN,
                pair_count: 0,
                fidelity: f64::NAN,
                brightness: f64::NAN,
                vividness: f64::NAN,
                complexity: f64::NAN,
                error: Some(format!("{}: {e}", e.category())),
            }),
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleScaleRow {
    pub steps: usize,
    pub fidelity: f64,
    pub brightness: f64,
    pub vividness: f64,
    pub complexity: f64,
}

/// Sample-scaling runner: one training run with mid-training snapshots at
/// each requested step count, each snapshot evaluated on the same task set.
#[allow(clippy::too_many_arguments)]
pub fn scale_samples(
    pretrained: &Checkpoint,
    dataset: &PreferenceDataset,
    eval_tasks: &[InpaintTask],
    k: usize,
    step_list: &[usize],
    config: &DpoConfig,
    spec: &SampleSpec,
    profiles: &[BiasProfile],
    eval_m: usize,
    eval_seed: u64,
) -> Result<Vec<SampleScaleRow>> {
    if !step_list.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidParam {
            name: "step_list",
            reason: "step counts must be strictly ascending".into(),
        });
    }
    let max_steps = *step_list.last().ok_or_else(|| Error::InvalidParam {
        name: "step_list",
        reason: "empty step list".into(),
    })?;
    let run_config = DpoConfig { steps: max_steps, ..config.clone() };
    let (_, _, snapshots) =
        train_dpo_with_snapshots(pretrained, dataset, k, &run_config, spec, step_list)?;
    let mut rows = Vec::with_capacity(snapshots.len());
    for (steps, ckpt) in &snapshots {
        let report = evaluate(
            &CheckpointSource { ckpt, spec, k },
            eval_tasks,
            k,
            profiles,
            eval_m,
            eval_seed,
            None,
        )?;
        rows.push(SampleScaleRow {
            steps: *steps,
            fidelity: report.mean_fidelity,
            brightness: report.mean_brightness,
            vividness: report.mean_vividness,
            complexity: report.mean_complexity,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// CSV emission (one-line header; floats printed in round-trip form)
// ---------------------------------------------------------------------------

pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<(String, Vec<Vec<String>>)> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format { format: "csv", reason: "empty file".into() })??;
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if !line.is_empty() {
            rows.push(line.split(',').map(str::to_string).collect());
        }
    }
    Ok((header, rows))
}

pub fn eval_report_rows(report: &EvalReport) -> Vec<Vec<String>> {
    let mut rows = vec![vec!["model".into(), "tag".into(), report.model_tag.clone()]];
    for (name, value) in &report.reward_means {
        rows.push(vec!["reward".into(), name.clone(), value.to_string()]);
    }
    rows.push(vec!["bias".into(), "brightness".into(), report.mean_brightness.to_string()]);
    rows.push(vec!["bias".into(), "vividness".into(), report.mean_vividness.to_string()]);
    rows.push(vec!["bias".into(), "complexity".into(), report.mean_complexity.to_string()]);
    rows.push(vec!["oracle".into(), "fidelity".into(), report.mean_fidelity.to_string()]);
    if let Some(j) = report.judge_mean {
        rows.push(vec!["judge".into(), "total".into(), j.to_string()]);
    }
    rows.push(vec!["count".into(), "samples".into(), report.sample_count.to_string()]);
    rows
}

pub const EVAL_CSV_HEADER: &str = "metric,name,value";
pub const WIN_CSV_HEADER: &str = "winA,winB,tie";
pub const CAND_SCALE_CSV_HEADER: &str =
    "n,mean_margin,pair_count,fidelity,brightness,vividness,complexity,error";
pub const SAMPLE_SCALE_CSV_HEADER: &str = "steps,fidelity,brightness,vividness,complexity";
pub const GRID_CSV_HEADER: &str = "beta,lr,metric,value,error";

pub fn candidate_scale_rows(rows: &[CandidateScaleRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.mean_margin.to_string(),
                r.pair_count.to_string(),
                r.fidelity.to_string(),
                r.brightness.to_string(),
                r.vividness.to_string(),
                r.complexity.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect()
}

pub fn sample_scale_rows(rows: &[SampleScaleRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.steps.to_string(),
                r.fidelity.to_string(),
                r.brightness.to_string(),
                r.vividness.to_string(),
                r.complexity.to_string(),
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpo::pretrain_sft;
    use crate::generate::GeneratorTag;
    use crate::toyworld::make_dataset;

    fn tiny_world() -> (Vec<InpaintTask>, Checkpoint, SampleSpec) {
        let tasks = make_dataset(1, 2, 6, 0.05, 4, 4).unwrap();
        let spec = SampleSpec::new(GeneratorTag::Ddpm, 8, 4);
        let (ckpt, _) = pretrain_sft(&tasks, 2, &spec, &[8], 30, 1e-3, 4, 1).unwrap();
        (tasks, ckpt, spec)
    }

    #[test]
    fn evaluate_source_images_gives_noise_fidelity() {
        // Fidelity of the noisy sources is about -sigma^2.
        let sigma = 0.05;
        let tasks = make_dataset(5, 4, 200, sigma, 8, 8).unwrap();
        let report = evaluate(&SourceImages, &tasks, 4, &[], 1, 0, None).unwrap();
        let n = (tasks.len() * 8 * 8 * 3) as f64;
        // Var of the per-pixel squared error is ~2 sigma^4; 3 SE tolerance.
        let se = (2.0_f64 * sigma.powi(4) / n).sqrt();
        assert!(
            (report.mean_fidelity + sigma * sigma).abs() < 3.0 * se,
            "fidelity {} vs {}",
            report.mean_fidelity,
            -sigma * sigma
        );
    }

    #[test]
    fn evaluate_deterministic_and_constant_generator_stats() {
        let (tasks, ckpt, spec) = tiny_world();
        let src = CheckpointSource { ckpt: &ckpt, spec: &spec, k: 2 };
        let a = evaluate(&src, &tasks, 2, &[BiasProfile::hps_like()], 2, 3, None).unwrap();
        let b = evaluate(&src, &tasks, 2, &[BiasProfile::hps_like()], 2, 3, None).unwrap();
        assert_eq!(a, b);

        let gray = ConstantSource(Image::constant(4, 4, [0.5, 0.5, 0.5]));
        let r = evaluate(&gray, &tasks, 2, &[], 1, 0, None).unwrap();
        assert!((r.mean_brightness - 0.5).abs() < 1e-12);
        assert_eq!(r.mean_vividness, 0.0);
        assert_eq!(r.mean_complexity, 0.0);
        assert!(evaluate(&gray, &tasks, 2, &[], 0, 0, None).is_err());
    }

    #[test]
    fn win_rate_identity_is_all_ties() {
        let (tasks, ckpt, spec) = tiny_world();
        let src = CheckpointSource { ckpt: &ckpt, spec: &spec, k: 2 };
        let judge = RewardJudge { profile: BiasProfile::fidelity_only(), k: 2 };
        let wr = win_rate(&src, &src, &tasks, &judge, 9).unwrap();
        assert_eq!(wr.tie, 1.0);
        assert_eq!(wr.win_a, 0.0);
        assert_eq!(wr.counted, tasks.len());
    }

    #[test]
    fn win_rate_constant_judge_ties() {
        let (tasks, ckpt, spec) = tiny_world();
        let src = CheckpointSource { ckpt: &ckpt, spec: &spec, k: 2 };
        let gray = ConstantSource(Image::constant(4, 4, [0.5, 0.5, 0.5]));
        let constant = |_: &InpaintTask, _: &Image| -> Result<f64> { Ok(1.0) };
        let wr = win_rate(&src, &gray, &tasks, &constant, 9).unwrap();
        assert_eq!(wr.tie, 1.0);
    }

    #[test]
    fn win_rate_matches_per_task_brute_force() {
        let (tasks, ckpt, spec) = tiny_world();
        let src = CheckpointSource { ckpt: &ckpt, spec: &spec, k: 2 };
        let gray = ConstantSource(Image::constant(4, 4, [0.5, 0.5, 0.5]));
        let judge = RewardJudge { profile: BiasProfile::fidelity_only(), k: 2 };
        let wr = win_rate(&src, &gray, &tasks, &judge, 42).unwrap();
        let mut wins_a = 0;
        let mut wins_b = 0;
        let mut ties = 0;
        for task in &tasks {
            let s = stable_hash(&[42, task.task_id as u64, 0x317]);
            let ia = src.draw(task, s).unwrap();
            let ib = gray.draw(task, s).unwrap();
            let fa = fidelity(task, &ia, 2);
            let fb = fidelity(task, &ib, 2);
            if fa > fb {
                wins_a += 1;
            } else if fb > fa {
                wins_b += 1;
            } else {
                ties += 1;
            }
        }
        let n = tasks.len() as f64;
        assert_eq!(wr.win_a, wins_a as f64 / n);
        assert_eq!(wr.win_b, wins_b as f64 / n);
        assert_eq!(wr.tie, ties as f64 / n);
        assert!((wr.win_a + wr.win_b + wr.tie - 1.0).abs() < 1e-12);
    }

    #[test]
    fn win_rate_counts_judge_failures_as_skips() {
        let (tasks, ckpt, spec) = tiny_world();
        let src = CheckpointSource { ckpt: &ckpt, spec: &spec, k: 2 };
        let flaky = |task: &InpaintTask, img: &Image| -> Result<f64> {
            if task.task_id == 0 {
                Err(Error::JudgeParse { reason: "boom".into(), raw: String::new() })
            } else {
                Ok(fidelity(task, img, 2))
            }
        };
        let wr = win_rate(&src, &src, &tasks, &flaky, 1).unwrap();
        assert_eq!(wr.skipped, 1);
        assert_eq!(wr.counted, tasks.len() - 1);
    }

    #[test]
    fn null_drift_within_3_se() {
        let sigma = 0.05;
        let train = make_dataset(11, 4, 300, sigma, 8, 8).unwrap();
        let eval_tasks = make_dataset(12, 4, 100, sigma, 8, 8).unwrap();
        let null = DataResampler { k: 4, noise_sigma: sigma };
        let report = drift(&null, &eval_tasks, &train, 2, 5).unwrap();
        for s in &report.stats {
            assert!(s.drift.abs() < 3.0 * s.se, "{}: drift {} se {}", s.name, s.drift, s.se);
        }
    }

    #[test]
    fn paired_drift_of_identical_sources_is_exactly_zero() {
        let sigma = 0.05;
        let eval_tasks = make_dataset(15, 4, 20, sigma, 8, 8).unwrap();
        let null = DataResampler { k: 4, noise_sigma: sigma };
        let diffs = drift_paired(&null, &null, &eval_tasks, 2, 5).unwrap();
        for s in &diffs {
            assert_eq!(s.drift, 0.0, "{}", s.name);
            assert_eq!(s.se, 0.0, "{}", s.name);
        }
    }

    #[test]
    fn paired_drift_matches_white_minus_black_exactly() {
        let eval_tasks = make_dataset(16, 4, 10, 0.05, 8, 8).unwrap();
        let white = ConstantSource(Image::constant(8, 8, [1.0, 1.0, 1.0]));
        let black = ConstantSource(Image::constant(8, 8, [0.0, 0.0, 0.0]));
        let diffs = drift_paired(&black, &white, &eval_tasks, 1, 0).unwrap();
        let b = diffs.iter().find(|s| s.name == "brightness").unwrap();
        assert!((b.drift - 1.0).abs() < 1e-12);
        assert!(b.se < 1e-12);
    }

    #[test]
    fn constant_white_generator_brightness_drift() {
        let train = make_dataset(13, 4, 100, 0.05, 8, 8).unwrap();
        let eval_tasks = make_dataset(14, 4, 20, 0.05, 8, 8).unwrap();
        let white = ConstantSource(Image::constant(8, 8, [1.0, 1.0, 1.0]));
        let report = drift(&white, &eval_tasks, &train, 1, 0).unwrap();
        let data_mean: f64 =
            train.iter().map(|t| brightness(&t.source)).sum::<f64>() / train.len() as f64;
        let b = report.stats.iter().find(|s| s.name == "brightness").unwrap();
        assert!((b.drift - (1.0 - data_mean)).abs() < 1e-12);
        // Deterministic in seed.
        let again = drift(&white, &eval_tasks, &train, 1, 0).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![
            vec!["2".to_string(), (0.1f64 + 0.2).to_string()],
            vec!["4".to_string(), std::f64::consts::PI.to_string()],
        ];
        write_csv(&path, "n,value", &rows).unwrap();
        let (header, back) = read_csv(&path).unwrap();
        assert_eq!(header, "n,value");
        assert_eq!(back, rows);
        // Float text round-trips to the same bits.
        let v: f64 = back[1][1].parse().unwrap();
        assert_eq!(v, std::f64::consts::PI);
    }
}
