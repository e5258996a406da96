//! Command-line front end wiring the pipeline end to end. Every subcommand
//! reads a key=value config (plus flag overrides), writes its artifacts and
//! the resolved config under `--out`, and exits 0 on success or 1 with a
//! single-line machine-parseable error. Partial outputs are removed on
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prefalign::config::RunConfig;
use prefalign::dpo::{
    load_checkpoint, paper_grid, pretrain_sft, save_checkpoint, train_dpo, Checkpoint, DpoConfig,
};
use prefalign::error::{Error, Result};
use prefalign::evalsuite::{
    self, drift, evaluate, scale_candidates, scale_samples, win_rate, CheckpointSource, Judge,
};
use prefalign::generate::{GeneratorTag, SampleSpec};
use prefalign::judge::{build_request, judge_mock, judge_remote};
use prefalign::prefdata::{
    build_pairs, gen_candidates, load_dataset, load_tasks, save_dataset, save_tasks, Selector,
};
use prefalign::rewards::BiasProfile;
use prefalign::toyworld::{make_dataset, InpaintTask};

#[derive(Parser)]
#[command(name = "prefalign", about = "Toy preference-alignment lab for image inpainting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (key=value lines); defaults apply if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; all artifacts land here.
    #[arg(long)]
    out: PathBuf,
    /// key=value overrides applied after the config file.
    #[arg(long = "set")]
    set: Vec<String>,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Shortcut for --set seed=...
    #[arg(long)]
    seed: Option<u64>,
    /// Shortcut for --set tasks=...
    #[arg(long)]
    tasks: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural inpainting task list.
    MakeData {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain a denoiser on a task list.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tasks_file: PathBuf,
    },
    /// Sample N candidates per task and dump all reward scores.
    GenCandidates {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tasks_file: PathBuf,
    },
    /// Build a best-of-N preference dataset.
    BuildPairs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tasks_file: PathBuf,
    },
    /// DPO fine-tune a checkpoint on a preference dataset.
    DpoTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Evaluate a checkpoint on a task list.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tasks_file: PathBuf,
    },
    /// Pairwise win rate between two checkpoints under the mock judge.
    WinRate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint_a: PathBuf,
        #[arg(long)]
        checkpoint_b: PathBuf,
        #[arg(long)]
        tasks_file: PathBuf,
        /// Judge: "mock" (0-100 rubric total) or a reward profile name.
        #[arg(long, default_value = "mock")]
        judge: String,
    },
    /// Reward-drift diagnostics against the training distribution.
    Drift {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tasks_file: PathBuf,
        #[arg(long)]
        train_tasks_file: PathBuf,
    },
    /// Sweep candidate count N: build data, train, evaluate per N.
    ScaleCandidates {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tasks_file: PathBuf,
        #[arg(long)]
        eval_tasks_file: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        n_list: Vec<usize>,
    },
    /// Sweep training steps with mid-run snapshots.
    ScaleSamples {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        tasks_file: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "100,250,500,1000")]
        steps_list: Vec<usize>,
    },
    /// Train and evaluate one model per (beta, lr) grid cell.
    HparamGrid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        tasks_file: PathBuf,
        /// Comma-separated beta values; defaults to the full preset grid.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        /// Comma-separated learning rates; defaults to the full preset grid.
        #[arg(long, value_delimiter = ',')]
        lrs: Option<Vec<f64>>,
    },
    /// Judge one sample per task, via the mock judge or a remote endpoint.
    Judge {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tasks_file: PathBuf,
        /// Score with the deterministic offline judge instead of HTTP.
        #[arg(long)]
        mock: bool,
    },
}

/// Tracks files written by this run so failures can clean them up.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Outputs> {
        std::fs::create_dir_all(dir)?;
        Ok(Outputs { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn cleanup(&self) {
        for p in &self.written {
            let _ = std::fs::remove_file(p);
        }
    }
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(tasks) = common.tasks {
        cfg.set("tasks", &tasks.to_string())?;
    }
    cfg.apply_overrides(&common.set)?;
    if let Some(threads) = common.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    Ok(cfg)
}

fn profiles_from(cfg: &RunConfig) -> Result<Vec<BiasProfile>> {
    cfg.rewards
        .iter()
        .map(|name| {
            BiasProfile::by_name(name)
                .ok_or_else(|| Error::Config(format!("unknown reward `{name}`")))
        })
        .collect()
}

fn sample_spec(cfg: &RunConfig, tag: GeneratorTag) -> SampleSpec {
    SampleSpec::new(tag, cfg.t_steps, cfg.s_steps)
}

fn load_ckpt_and_tasks(
    checkpoint: &Path,
    tasks_file: &Path,
) -> Result<(Checkpoint, Vec<InpaintTask>, usize)> {
    let ckpt = load_checkpoint(checkpoint)?;
    let (tasks, k) = load_tasks(tasks_file)?;
    Ok((ckpt, tasks, k))
}

fn dpo_config(cfg: &RunConfig, tag: GeneratorTag) -> DpoConfig {
    DpoConfig {
        beta: cfg.beta,
        lr: cfg.lr,
        steps: cfg.steps,
        batch: cfg.batch,
        generator_tag: tag,
        seed: cfg.seed,
    }
}

fn write_loss_csv(path: &Path, trace: &[(usize, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|(s, l)| vec![s.to_string(), format!("{l:e}")])
        .collect();
    evalsuite::write_csv(path, "step,loss", &rows)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeData { common } => {
            let cfg = resolve_config(&common)?;
            let mut out = Outputs::new(&common.out)?;
            let result = (|| {
                let tasks =
                    make_dataset(cfg.seed, cfg.k, cfg.tasks, cfg.noise_sigma, cfg.width, cfg.height)?;
                save_tasks(&tasks, cfg.k, &out.path("tasks.pft"))?;
                cfg.save(&out.path("run.cfg"))
            })();
            finish(out, result)
        }
        Command::Pretrain { common, tasks_file } => {
            let cfg = resolve_config(&common)?;
            let mut out = Outputs::new(&common.out)?;
            let result = (|| {
                let (tasks, k) = load_tasks(&tasks_file)?;
                let tag = GeneratorTag::parse(&cfg.generator)?;
                let spec = sample_spec(&cfg, tag);
                let (ckpt, trace) = pretrain_sft(
                    &tasks,
                    k,
                    &spec,
                    &cfg.hidden,
                    cfg.sft_steps,
                    cfg.sft_lr,
                    cfg.batch,
                    cfg.seed,
                )?;
                save_checkpoint(&ckpt, &out.path("pretrained.pfc"))?;
                write_loss_csv(&out.path("sft_loss.csv"), &trace)?;
                cfg.save(&out.path("run.cfg"))
            })();
            finish(out, result)
        }
        Command::GenCandidates { common, checkpoint, tasks_file } => {
            let cfg = resolve_config(&common)?;
            let mut out = Outputs::new(&common.out)?;
            let result = (|| {
                let (ckpt, tasks, k) = load_ckpt_and_tasks(&checkpoint, &tasks_file)?;
                let spec = sample_spec(&cfg, ckpt.generator_tag);
                let profiles = profiles_from(&cfg)?;
                let cands = gen_candidates(
                    &ckpt.params,
                    &spec,
                    &tasks,
                    k,
                    cfg.n_candidates,
                    cfg.seed,
                    &profiles,
                )?;
                let mut rows = Vec::new();
                for c in &cands {
                    for (name, score) in &c.scores {
                        rows.push(vec![
                            c.task_id.to_string(),
                            c.candidate_idx.to_string(),
                            name.clone(),
                            format!("{score:e}"),
                        ]);
                    }
                }
                evalsuite::write_csv(
                    &out.path("candidate_scores.csv"),
                    "task_id,candidate_idx,reward,score",
                    &rows,
                )?;
                cfg.save(&out.path("run.cfg"))
            })();
            finish(out, result)
        }
        Command::BuildPairs { common, checkpoint, tasks_file } => {
            let cfg = resolve_config(&common)?;
            let mut out = Outputs::new(&common.out)?;
            let result = (|| {
                let (ckpt, tasks, k) = load_ckpt_and_tasks(&checkpoint, &tasks_file)?;
                let spec = sample_spec(&cfg, ckpt.generator_tag);
                let profiles = profiles_from(&cfg)?;
                let cands = gen_candidates(
                    &ckpt.params,
                    &spec,
                    &tasks,
                    k,
                    cfg.n_candidates,
                    cfg.seed,
                    &profiles,
                )?;
                let selector = Selector::parse(&cfg.selector);
                let ds = build_pairs(
                    &cands,
                    &tasks,
                    &selector,
                    cfg.seed,
                    cfg.n_candidates,
                    ckpt.generator_tag,
                    k,
                )?;
                save_dataset(&ds, &out.path("pairs.pfd"))?;
                cfg.save(&out.path("run.cfg"))
            })();
            finish(out, result)
        }
        Command::DpoTrain { common, checkpoint, pairs } => {
            let cfg = resolve_config(&common)?;
            let mut out = Outputs::new(&common.out)?;
            let result = (|| {
                let ckpt = load_checkpoint(&checkpoint)?;
                let ds = load_dataset(&pairs)?;
                let k = ds.header.k as usize;
                let spec = sample_spec(&cfg, ckpt.generator_tag);
                let config = dpo_config(&cfg, ckpt.generator_tag);
                let (tuned, trace) = train_dpo(&ckpt, &ds, k, &config, &spec)?;
                save_checkpoint(&tuned, &out.path("dpo.pfc"))?;
                write_loss_csv(&out.path("dpo_loss.csv"), &trace)?;
                cfg.save(&out.path("run.cfg"))
            })();
            finish(out, result)
        }
        Command::Eval { common, checkpoint, tasks_file } => {
            let cfg = resolve_config(&common)?;
            let mut out = Outputs::new(&common.out)?;
            let result = (|| {
                let (ckpt, tasks, k) = load_ckpt_and_tasks(&checkpoint, &tasks_file)?;
                let spec = sample_spec(&cfg, ckpt.generator_tag);
                let profiles = profiles_from(&cfg)?;
                let source = CheckpointSource { ckpt: &ckpt, spec: &spec, k };
                let judge = MockTotalJudge { k };
                let report = evaluate(
                    &source,
                    &tasks,
                    k,
                    &profiles,
                    cfg.samples_per_task,
                    cfg.seed,
                    Some(&judge),
                )?;
                evalsuite::write_csv(
                    &out.path("eval.csv"),
                    evalsuite::EVAL_CSV_HEADER,
                    &evalsuite::eval_report_rows(&report),
                )?;
                cfg.save(&out.path("run.cfg"))
            })();
            finish(out, result)
        }
        Command::WinRate { common, checkpoint_a, checkpoint_b, tasks_file, judge } => {
            let cfg = resolve_config(&common)?;
            let mut out = Outputs::new(&common.out)?;
            let result = (|| {
                let (ckpt_a, tasks, k) = load_ckpt_and_tasks(&checkpoint_a, &tasks_file)?;
                let ckpt_b = load_checkpoint(&checkpoint_b)?;
                let spec_a = sample_spec(&cfg, ckpt_a.generator_tag);
                let spec_b = sample_spec(&cfg, ckpt_b.generator_tag);
                let a = CheckpointSource { ckpt: &ckpt_a, spec: &spec_a, k };
                let b = CheckpointSource { ckpt: &ckpt_b, spec: &spec_b, k };
                let judge: Box<dyn Judge> = if judge == "mock" {
                    Box::new(MockTotalJudge { k })
                } else {
                    let profile = BiasProfile::by_name(&judge)
                        .ok_or_else(|| Error::Config(format!("unknown judge `{judge}`")))?;
                    Box::new(evalsuite::RewardJudge { profile, k })
                };
                let wr = win_rate(&a, &b, &tasks, judge.as_ref(), cfg.seed)?;
                evalsuite::write_csv(
                    &out.path("win_rate.csv"),
                    evalsuite::WIN_CSV_HEADER,
                    &[vec![
                        format!("{:e}", wr.win_a),
                        format!("{:e}", wr.win_b),
                        format!("{:e}", wr.tie),
                    ]],
                )?;
                cfg.save(&out.path("run.cfg"))
            })();
            finish(out, result)
        }
        Command::Drift { common, checkpoint, tasks_file, train_tasks_file } => {
            let cfg = resolve_config(&common)?;
            let mut out = Outputs::new(&common.out)?;
            let result = (|| {
                let (ckpt, tasks, k) = load_ckpt_and_tasks(&checkpoint, &tasks_file)?;
                let (train_tasks, _) = load_tasks(&train_tasks_file)?;
                let spec = sample_spec(&cfg, ckpt.generator_tag);
                let source = CheckpointSource { ckpt: &ckpt, spec: &spec, k };
                let report = drift(&source, &tasks, &train_tasks, cfg.samples_per_task, cfg.seed)?;
                let mut rows: Vec<Vec<String>> = report
                    .stats
                    .iter()
                    .map(|s| {
                        vec![s.name.clone(), format!("{:e}", s.drift), format!("{:e}", s.se)]
                    })
                    .collect();
                rows.push(vec![
                    "hacking_index".into(),
                    format!("{:e}", report.hacking_index),
                    String::new(),
                ]);
                evalsuite::write_csv(&out.path("drift.csv"), "name,drift,se", &rows)?;
                cfg.save(&out.path("run.cfg"))
            })();
            finish(out, result)
        }
        Command::ScaleCandidates {
            common,
            checkpoint,
            tasks_file,
            eval_tasks_file,
            n_list,
        } => {
            let cfg = resolve_config(&common)?;
            let mut out = Outputs::new(&common.out)?;
            let result = (|| {
                let (ckpt, train_tasks, k) = load_ckpt_and_tasks(&checkpoint, &tasks_file)?;
                let (eval_tasks, _) = load_tasks(&eval_tasks_file)?;
                let spec = sample_spec(&cfg, ckpt.generator_tag);
                let profiles = profiles_from(&cfg)?;
                let selector = Selector::parse(&cfg.selector);
                let config = dpo_config(&cfg, ckpt.generator_tag);
                let rows = scale_candidates(
                    &ckpt,
                    &train_tasks,
                    &eval_tasks,
                    k,
                    &selector,
                    &n_list,
                    &config,
                    &spec,
                    &profiles,
                    cfg.seed,
                    cfg.samples_per_task,
                    cfg.seed ^ 0xE7A1,
                )?;
                evalsuite::write_csv(
                    &out.path("scale_candidates.csv"),
                    evalsuite::CAND_SCALE_CSV_HEADER,
                    &evalsuite::candidate_scale_rows(&rows),
                )?;
                cfg.save(&out.path("run.cfg"))
            })();
            finish(out, result)
        }
        Command::ScaleSamples { common, checkpoint, pairs, tasks_file, steps_list } => {
            let cfg = resolve_config(&common)?;
            let mut out = Outputs::new(&common.out)?;
            let result = (|| {
                let ckpt = load_checkpoint(&checkpoint)?;
                let ds = load_dataset(&pairs)?;
                let (eval_tasks, k) = load_tasks(&tasks_file)?;
                let spec = sample_spec(&cfg, ckpt.generator_tag);
                let profiles = profiles_from(&cfg)?;
                let config = dpo_config(&cfg, ckpt.generator_tag);
                let rows = scale_samples(
                    &ckpt,
                    &ds,
                    &eval_tasks,
                    k,
                    &steps_list,
                    &config,
                    &spec,
                    &profiles,
                    cfg.samples_per_task,
                    cfg.seed ^ 0xE7A1,
                )?;
                evalsuite::write_csv(
                    &out.path("scale_samples.csv"),
                    evalsuite::SAMPLE_SCALE_CSV_HEADER,
                    &evalsuite::sample_scale_rows(&rows),
                )?;
                cfg.save(&out.path("run.cfg"))
            })();
            finish(out, result)
        }
        Command::HparamGrid { common, checkpoint, pairs, tasks_file, betas, lrs } => {
            let cfg = resolve_config(&common)?;
            let mut out = Outputs::new(&common.out)?;
            let result = (|| {
                let ckpt = load_checkpoint(&checkpoint)?;
                let ds = load_dataset(&pairs)?;
                let (eval_tasks, k) = load_tasks(&tasks_file)?;
                let spec = sample_spec(&cfg, ckpt.generator_tag);
                let profiles = profiles_from(&cfg)?;
                let config = dpo_config(&cfg, ckpt.generator_tag);
                let (grid_betas, grid_lrs) = paper_grid();
                let betas = betas.unwrap_or(grid_betas);
                let lrs = lrs.unwrap_or(grid_lrs);
                let eval_spec = spec.clone();
                let rows = prefalign::dpo::hparam_grid(
                    &ckpt,
                    &ds,
                    k,
                    &betas,
                    &lrs,
                    &config,
                    &spec,
                    |tuned: &Checkpoint| {
                        let source =
                            CheckpointSource { ckpt: tuned, spec: &eval_spec, k };
                        let report = evaluate(
                            &source,
                            &eval_tasks,
                            k,
                            &profiles,
                            cfg.samples_per_task,
                            cfg.seed ^ 0xE7A1,
                            None,
                        )?;
                        let mut metrics = vec![
                            ("fidelity".to_string(), report.mean_fidelity),
                            ("brightness".to_string(), report.mean_brightness),
                            ("vividness".to_string(), report.mean_vividness),
                            ("complexity".to_string(), report.mean_complexity),
                        ];
                        metrics.extend(report.reward_means);
                        Ok(metrics)
                    },
                )?;
                let mut csv_rows = Vec::new();
                for row in &rows {
                    match &row.error {
                        Some(err) => csv_rows.push(vec![
                            format!("{:e}", row.beta),
                            format!("{:e}", row.lr),
                            String::new(),
                            String::new(),
                            err.clone(),
                        ]),
                        None => {
                            for (name, value) in &row.metrics {
                                csv_rows.push(vec![
                                    format!("{:e}", row.beta),
                                    format!("{:e}", row.lr),
                                    name.clone(),
                                    format!("{value:e}"),
                                    String::new(),
                                ]);
                            }
                        }
                    }
                }
                evalsuite::write_csv(
                    &out.path("grid.csv"),
                    evalsuite::GRID_CSV_HEADER,
                    &csv_rows,
                )?;
                cfg.save(&out.path("run.cfg"))
            })();
            finish(out, result)
        }
        Command::Judge { common, checkpoint, tasks_file, mock } => {
            let cfg = resolve_config(&common)?;
            let mut out = Outputs::new(&common.out)?;
            let result = (|| {
                let (ckpt, tasks, k) = load_ckpt_and_tasks(&checkpoint, &tasks_file)?;
                let spec = sample_spec(&cfg, ckpt.generator_tag);
                let mut rows = Vec::new();
                for task in &tasks {
                    let seed = prefalign::rng::stable_hash(&[
                        cfg.seed,
                        task.task_id as u64,
                        0x10D6E,
                    ]);
                    let img = spec.sample(&ckpt.params, task, k, seed)?;
                    let verdict = if mock {
                        judge_mock(task, &img, k)
                    } else {
                        let req =
                            build_request(task, &img, &cfg.judge_endpoint, &cfg.judge_model);
                        judge_remote(&req)?
                    };
                    rows.push(vec![
                        task.task_id.to_string(),
                        format!("{:e}", verdict.aesthetic),
                        format!("{:e}", verdict.structural),
                        format!("{:e}", verdict.semantic),
                        format!("{:e}", verdict.total),
                    ]);
                }
                evalsuite::write_csv(
                    &out.path("judge.csv"),
                    "task_id,aesthetic,structural,semantic,total",
                    &rows,
                )?;
                cfg.save(&out.path("run.cfg"))
            })();
            finish(out, result)
        }
    }
}

/// Mock-judge adapter exposing the 0-100 total as an evalsuite judge.
struct MockTotalJudge {
    k: usize,
}

impl Judge for MockTotalJudge {
    fn score(&self, task: &InpaintTask, img: &prefalign::toyworld::Image) -> Result<f64> {
        Ok(judge_mock(task, img, self.k).total)
    }
}

fn finish(out: Outputs, result: Result<()>) -> Result<()> {
    if result.is_err() {
        out.cleanup();
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let msg: String = err.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: category={} {}", err.category(), msg);
            ExitCode::FAILURE
        }
    }
}
