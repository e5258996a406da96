//! Preference-data factory: best-of-N candidate generation, pair selection
//! (per reward, random, or rank-average ensemble), and the PFD1 binary
//! container.
//!
//! ## PFD1 layout (all integers little-endian, pixels f32)
//!
//! ```text
//! magic "PFD1" | u16 version=1 | u16 width | u16 height | u16 k
//! | u16 n_candidates | u8 generator_tag | u16 selector_len | selector bytes
//! | u32 pair_count | u32 excluded_count | excluded task ids (u32 each)
//! then per pair:
//!   u32 task_id | u16 label
//!   | source pixels  f32 * 3wh | mask u8 * wh
//!   | preferred pixels f32 * 3wh | dispreferred pixels f32 * 3wh
//!   | u64 preferred_seed | u64 dispreferred_seed | f32 margin
//! ```
//!
//! The task container PFT1 uses the same conventions:
//! `magic "PFT1" | u16 version | u16 width | u16 height | u16 k | u32 count`
//! then per task `u32 task_id | u16 label | source f32 * 3wh | mask u8 * wh`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index::sample as index_sample;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generate::{GeneratorTag, SampleSpec};
use crate::nn::MlpParams;
use crate::rewards::{ensemble_rank, random_reward, reward_score, BiasProfile, ScoreMatrix};
use crate::rng::{rng_from, stable_hash};
use crate::toyworld::{Image, InpaintTask, Mask};

#[derive(Debug, Clone)]
pub struct Candidate {
    pub task_id: u32,
    pub candidate_idx: usize,
    pub seed: u64,
    pub image: Image,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub task_id: u32,
    pub reward_name: String,
    pub preferred: Image,
    pub dispreferred: Image,
    pub preferred_seed: u64,
    pub dispreferred_seed: u64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub n_candidates: usize,
    pub generator_tag: GeneratorTag,
    pub selector_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub task: InpaintTask,
    pub pair: PreferencePair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub header: DatasetHeader,
    pub records: Vec<PairRecord>,
    /// Task ids excluded as no-signal (fully tied) pairs.
    pub excluded: Vec<u32>,
}

/// Candidate seed derivation; nested across N so that growing the candidate
/// budget only appends new seeds.
pub fn candidate_seed(global_seed: u64, task_id: u32, candidate_idx: usize) -> u64 {
    stable_hash(&[global_seed, task_id as u64, candidate_idx as u64, 0xCAD])
}

/// Generate and score N blended candidates per task. Parallel across tasks;
/// per-candidate seeds make the result independent of scheduling.
pub fn gen_candidates(
    params: &MlpParams,
    spec: &SampleSpec,
    tasks: &[InpaintTask],
    k: usize,
    n: usize,
    global_seed: u64,
    profiles: &[BiasProfile],
) -> Result<Vec<Candidate>> {
    if n < 2 {
        return Err(Error::InvalidParam {
            name: "n",
            reason: format!("need at least 2 candidates per task, got {n}"),
        });
    }
    let per_task: Vec<Result<Vec<Candidate>>> = tasks
        .par_iter()
        .map(|task| {
            (0..n)
                .map(|idx| {
                    let seed = candidate_seed(global_seed, task.task_id, idx);
                    let image = spec.sample(params, task, k, seed).map_err(|e| match e {
                        Error::NonFinite { context, step } => Error::NonFinite {
                            context,
                            step: step.or(Some(task.task_id as usize)),
                        },
                        other => other,
                    })?;
                    let scores = profiles
                        .iter()
                        .map(|p| (p.name.clone(), reward_score(p, task, &image, k)))
                        .collect();
                    Ok(Candidate {
                        task_id: task.task_id,
                        candidate_idx: idx,
                        seed,
                        image,
                        scores,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(tasks.len() * n);
    for group in per_task {
        out.extend(group?);
    }
    Ok(out)
}

/// Pair selection policy.
#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    Reward(String),
    Random,
    Ensemble,
}

impl Selector {
    pub fn parse(s: &str) -> Self {
        match s {
            "random" => Selector::Random,
            "ensemble" => Selector::Ensemble,
            name => Selector::Reward(name.to_string()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Selector::Reward(n) => n.clone(),
            Selector::Random => "random".into(),
            Selector::Ensemble => "ensemble".into(),
        }
    }
}

/// Build one preference pair per task from scored candidates. Fully tied
/// tasks are excluded and logged in the dataset.
pub fn build_pairs(
    candidates: &[Candidate],
    tasks: &[InpaintTask],
    selector: &Selector,
    seed: u64,
    n_candidates: usize,
    generator_tag: GeneratorTag,
    k: usize,
) -> Result<PreferenceDataset> {
    let mut by_task: BTreeMap<u32, Vec<&Candidate>> = BTreeMap::new();
    for c in candidates {
        by_task.entry(c.task_id).or_default().push(c);
    }
    let task_map: BTreeMap<u32, &InpaintTask> = tasks.iter().map(|t| (t.task_id, t)).collect();

    let (width, height) = tasks
        .first()
        .map(|t| (t.source.width, t.source.height))
        .ok_or_else(|| Error::InvalidParam {
            name: "tasks",
            reason: "empty task list".into(),
        })?;

    let mut records = Vec::new();
    let mut excluded = Vec::new();
    for (task_id, mut group) in by_task {
        group.sort_by_key(|c| c.candidate_idx);
        if group.len() < 2 {
            return Err(Error::InvalidParam {
                name: "candidates",
                reason: format!("task {task_id} has fewer than 2 candidates"),
            });
        }
        let task = *task_map.get(&task_id).ok_or_else(|| Error::InvalidParam {
            name: "tasks",
            reason: format!("candidates reference unknown task {task_id}"),
        })?;

        let choice = match selector {
            Selector::Reward(name) => {
                let scores: Vec<f64> = group
                    .iter()
                    .map(|c| {
                        c.scores.get(name).copied().ok_or_else(|| Error::MissingScores {
                            selector: name.clone(),
                            task_id,
                        })
                    })
                    .collect::<Result<_>>()?;
                let mut best = 0;
                let mut worst = 0;
                for i in 1..scores.len() {
                    if scores[i] > scores[best] {
                        best = i;
                    }
                    if scores[i] < scores[worst] {
                        worst = i;
                    }
                }
                if scores[best] == scores[worst] {
                    None
                } else {
                    Some((best, worst, scores[best] - scores[worst]))
                }
            }
            Selector::Random => {
                let mut rng = rng_from(stable_hash(&[seed, task_id as u64, 0x7A2D]));
                let picked = index_sample(&mut rng, group.len(), 2);
                let (i, j) = (picked.index(0), picked.index(1));
                let ri = random_reward(task_id, group[i].candidate_idx, seed);
                let rj = random_reward(task_id, group[j].candidate_idx, seed);
                // Preferred is the draw with the higher random score.
                if ri >= rj {
                    Some((i, j, ri - rj))
                } else {
                    Some((j, i, rj - ri))
                }
            }
            Selector::Ensemble => {
                let reward_names: Vec<String> =
                    group[0].scores.keys().cloned().collect();
                let matrix = ScoreMatrix {
                    task_id,
                    reward_names: reward_names.clone(),
                    scores: reward_names
                        .iter()
                        .map(|name| {
                            group
                                .iter()
                                .map(|c| {
                                    c.scores.get(name).copied().ok_or_else(|| {
                                        Error::MissingScores { selector: name.clone(), task_id }
                                    })
                                })
                                .collect::<Result<Vec<_>>>()
                        })
                        .collect::<Result<Vec<_>>>()?,
                };
                ensemble_rank(&matrix)?.map(|c| {
                    let gap = c.mean_ranks[c.dispreferred_idx] - c.mean_ranks[c.preferred_idx];
                    (c.preferred_idx, c.dispreferred_idx, gap)
                })
            }
        };

        match choice {
            None => excluded.push(task_id),
            Some((best, worst, margin)) => {
                debug_assert!(margin >= 0.0);
                records.push(PairRecord {
                    task: task.clone(),
                    pair: PreferencePair {
                        task_id,
                        reward_name: selector.name(),
                        preferred: group[best].image.clone(),
                        dispreferred: group[worst].image.clone(),
                        preferred_seed: group[best].seed,
                        dispreferred_seed: group[worst].seed,
                        margin,
                    },
                });
            }
        }
    }

    Ok(PreferenceDataset {
        header: DatasetHeader {
            width,
            height,
            k,
            n_candidates,
            generator_tag,
            selector_name: selector.name(),
        },
        records,
        excluded,
    })
}

// ---------------------------------------------------------------------------
// Binary containers
// ---------------------------------------------------------------------------

const PFD_MAGIC: &[u8; 4] = b"PFD1";
const PFT_MAGIC: &[u8; 4] = b"PFT1";
const VERSION: u16 = 1;

fn bad(format: &'static str, reason: impl Into<String>) -> Error {
    Error::Format { format, reason: reason.into() }
}

fn write_u16(w: &mut impl Write, v: u16) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}
fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}
fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}
fn write_f32(w: &mut impl Write, v: f32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], format: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|_| bad(format, "truncated file"))
}
fn read_u16(r: &mut impl Read, format: &'static str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, format)?;
    Ok(u16::from_le_bytes(b))
}
fn read_u32(r: &mut impl Read, format: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, format)?;
    Ok(u32::from_le_bytes(b))
}
fn read_u64(r: &mut impl Read, format: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, format)?;
    Ok(u64::from_le_bytes(b))
}
fn read_f32(r: &mut impl Read, format: &'static str) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, format)?;
    Ok(f32::from_le_bytes(b))
}

fn write_image(w: &mut impl Write, img: &Image) -> Result<()> {
    for p in &img.pixels {
        write_f32(w, *p as f32)?;
    }
    Ok(())
}

fn read_image(r: &mut impl Read, width: usize, height: usize, format: &'static str) -> Result<Image> {
    let n = width * height * 3;
    let mut pixels = Vec::with_capacity(n);
    for _ in 0..n {
        pixels.push(read_f32(r, format)? as f64);
    }
    Ok(Image { width, height, pixels })
}

fn write_mask(w: &mut impl Write, mask: &Mask) -> Result<()> {
    for v in &mask.values {
        w.write_all(&[*v as u8])?;
    }
    Ok(())
}

fn read_mask(r: &mut impl Read, width: usize, height: usize, format: &'static str) -> Result<Mask> {
    let mut bytes = vec![0u8; width * height];
    read_exact(r, &mut bytes, format)?;
    if bytes.iter().any(|b| *b > 1) {
        return Err(bad(format, "mask byte outside {0,1}"));
    }
    Ok(Mask {
        width,
        height,
        values: bytes.into_iter().map(|b| b as f64).collect(),
    })
}

pub fn save_dataset(ds: &PreferenceDataset, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(PFD_MAGIC)?;
    write_u16(&mut w, VERSION)?;
    write_u16(&mut w, ds.header.width as u16)?;
    write_u16(&mut w, ds.header.height as u16)?;
    write_u16(&mut w, ds.header.k as u16)?;
    write_u16(&mut w, ds.header.n_candidates as u16)?;
    w.write_all(&[ds.header.generator_tag.to_byte()])?;
    let name = ds.header.selector_name.as_bytes();
    write_u16(&mut w, name.len() as u16)?;
    w.write_all(name)?;
    write_u32(&mut w, ds.records.len() as u32)?;
    write_u32(&mut w, ds.excluded.len() as u32)?;
    for id in &ds.excluded {
        write_u32(&mut w, *id)?;
    }
    for rec in &ds.records {
        write_u32(&mut w, rec.pair.task_id)?;
        write_u16(&mut w, rec.task.label as u16)?;
        write_image(&mut w, &rec.task.source)?;
        write_mask(&mut w, &rec.task.mask)?;
        write_image(&mut w, &rec.pair.preferred)?;
        write_image(&mut w, &rec.pair.dispreferred)?;
        write_u64(&mut w, rec.pair.preferred_seed)?;
        write_u64(&mut w, rec.pair.dispreferred_seed)?;
        write_f32(&mut w, rec.pair.margin as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<PreferenceDataset> {
    const F: &str = "PFD1";
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, F)?;
    if &magic != PFD_MAGIC {
        return Err(bad(F, format!("bad magic {magic:?}")));
    }
    let version = read_u16(&mut r, F)?;
    if version != VERSION {
        return Err(bad(F, format!("unsupported version {version}")));
    }
    let width = read_u16(&mut r, F)? as usize;
    let height = read_u16(&mut r, F)? as usize;
    let k = read_u16(&mut r, F)? as usize;
    let n_candidates = read_u16(&mut r, F)? as usize;
    let mut tag = [0u8; 1];
    read_exact(&mut r, &mut tag, F)?;
    let generator_tag = GeneratorTag::from_byte(tag[0])?;
    let name_len = read_u16(&mut r, F)? as usize;
    let mut name = vec![0u8; name_len];
    read_exact(&mut r, &mut name, F)?;
    let selector_name =
        String::from_utf8(name).map_err(|_| bad(F, "selector name not utf-8"))?;
    let pair_count = read_u32(&mut r, F)? as usize;
    let excl_count = read_u32(&mut r, F)? as usize;
    let mut excluded = Vec::with_capacity(excl_count);
    for _ in 0..excl_count {
        excluded.push(read_u32(&mut r, F)?);
    }
    let mut records = Vec::with_capacity(pair_count);
    for _ in 0..pair_count {
        let task_id = read_u32(&mut r, F)?;
        let label = read_u16(&mut r, F)? as usize;
        if label >= k {
            return Err(bad(F, format!("label {label} out of range for k={k}")));
        }
        let source = read_image(&mut r, width, height, F)?;
        let mask = read_mask(&mut r, width, height, F)?;
        let preferred = read_image(&mut r, width, height, F)?;
        let dispreferred = read_image(&mut r, width, height, F)?;
        let preferred_seed = read_u64(&mut r, F)?;
        let dispreferred_seed = read_u64(&mut r, F)?;
        let margin = read_f32(&mut r, F)? as f64;
        records.push(PairRecord {
            task: InpaintTask { task_id, source, mask, label },
            pair: PreferencePair {
                task_id,
                reward_name: selector_name.clone(),
                preferred,
                dispreferred,
                preferred_seed,
                dispreferred_seed,
                margin,
            },
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad(F, "trailing bytes after last record"));
    }
    Ok(PreferenceDataset {
        header: DatasetHeader {
            width,
            height,
            k,
            n_candidates,
            generator_tag,
            selector_name,
        },
        records,
        excluded,
    })
}

/// Persist a task list in the PFT1 container.
pub fn save_tasks(tasks: &[InpaintTask], k: usize, path: &Path) -> Result<()> {
    let first = tasks.first().ok_or_else(|| Error::InvalidParam {
        name: "tasks",
        reason: "empty task list".into(),
    })?;
    let (width, height) = (first.source.width, first.source.height);
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(PFT_MAGIC)?;
    write_u16(&mut w, VERSION)?;
    write_u16(&mut w, width as u16)?;
    write_u16(&mut w, height as u16)?;
    write_u16(&mut w, k as u16)?;
    write_u32(&mut w, tasks.len() as u32)?;
    for t in tasks {
        write_u32(&mut w, t.task_id)?;
        write_u16(&mut w, t.label as u16)?;
        write_image(&mut w, &t.source)?;
        write_mask(&mut w, &t.mask)?;
    }
    w.flush()?;
    Ok(())
}

/// Load a PFT1 task list; returns `(tasks, k)`.
pub fn load_tasks(path: &Path) -> Result<(Vec<InpaintTask>, usize)> {
    const F: &str = "PFT1";
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, F)?;
    if &magic != PFT_MAGIC {
        return Err(bad(F, format!("bad magic {magic:?}")));
    }
    let version = read_u16(&mut r, F)?;
    if version != VERSION {
        return Err(bad(F, format!("unsupported version {version}")));
    }
    let width = read_u16(&mut r, F)? as usize;
    let height = read_u16(&mut r, F)? as usize;
    let k = read_u16(&mut r, F)? as usize;
    let count = read_u32(&mut r, F)? as usize;
    let mut tasks = Vec::with_capacity(count);
    for _ in 0..count {
        let task_id = read_u32(&mut r, F)?;
        let label = read_u16(&mut r, F)? as usize;
        let source = read_image(&mut r, width, height, F)?;
        let mask = read_mask(&mut r, width, height, F)?;
        tasks.push(InpaintTask { task_id, source, mask, label });
    }
    Ok((tasks, k))
}
