//! Reward scorers: bias statistics (brightness, vividness, complexity), an
//! oracle fidelity reward, parameterized biased profiles, a random reward,
//! fractional ranking, and the rank-average ensemble selector.

use crate::error::{Error, Result};
use crate::rng::{stable_hash, uniform_vec};
use crate::toyworld::{prototype_image, Image, InpaintTask};

/// Mean luminance: `0.299 R + 0.587 G + 0.114 B` averaged over pixels.
pub fn brightness(img: &Image) -> f64 {
    let n = (img.width * img.height) as f64;
    img.pixels
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .sum::<f64>()
        / n
}

/// Mean per-pixel channel spread: `max(R,G,B) - min(R,G,B)`.
pub fn vividness(img: &Image) -> f64 {
    let n = (img.width * img.height) as f64;
    img.pixels
        .chunks_exact(3)
        .map(|p| {
            let max = p[0].max(p[1]).max(p[2]);
            let min = p[0].min(p[1]).min(p[2]);
            max - min
        })
        .sum::<f64>()
        / n
}

/// Total variation: mean absolute difference over all horizontally and
/// vertically adjacent pixel pairs, all channels.
pub fn complexity(img: &Image) -> f64 {
    let (w, h) = (img.width, img.height);
    let mut total = 0.0;
    let mut pairs = 0usize;
    for y in 0..h {
        for x in 0..w {
            let p = img.pixel(x, y);
            if x + 1 < w {
                let q = img.pixel(x + 1, y);
                for c in 0..3 {
                    total += (p[c] - q[c]).abs();
                }
                pairs += 3;
            }
            if y + 1 < h {
                let q = img.pixel(x, y + 1);
                for c in 0..3 {
                    total += (p[c] - q[c]).abs();
                }
                pairs += 3;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Oracle semantic reward: negated MSE against the class prototype. Zero is a
/// perfect match.
pub fn fidelity(task: &InpaintTask, img: &Image, k: usize) -> f64 {
    let proto = prototype_image(task.label, k, img.width, img.height);
    let n = img.pixels.len() as f64;
    -img.pixels
        .iter()
        .zip(&proto.pixels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

/// A biased reward model: optional fidelity term plus weighted bias statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasProfile {
    pub name: String,
    pub w_brightness: f64,
    pub w_vividness: f64,
    pub w_complexity: f64,
    pub include_fidelity: bool,
}

impl BiasProfile {
    /// Favors bright, vivid, detail-rich images.
    pub fn hps_like() -> Self {
        BiasProfile {
            name: "hps_like".into(),
            w_brightness: 0.3,
            w_vividness: 0.3,
            w_complexity: 0.6,
            include_fidelity: true,
        }
    }

    /// Mirror image of `hps_like`: dim, muted, simple.
    pub fn pick_like() -> Self {
        BiasProfile {
            name: "pick_like".into(),
            w_brightness: -0.3,
            w_vividness: -0.3,
            w_complexity: -0.6,
            include_fidelity: true,
        }
    }

    /// Pure oracle reward with no bias terms.
    pub fn fidelity_only() -> Self {
        BiasProfile {
            name: "fidelity".into(),
            w_brightness: 0.0,
            w_vividness: 0.0,
            w_complexity: 0.0,
            include_fidelity: true,
        }
    }

    /// Bias-only darkness preference, no fidelity term.
    pub fn brightness_negated() -> Self {
        BiasProfile {
            name: "brightness_negated".into(),
            w_brightness: -1.0,
            w_vividness: 0.0,
            w_complexity: 0.0,
            include_fidelity: false,
        }
    }

    /// Look a named profile up. This is the scorer registry used by configs
    /// and result files.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "hps_like" => Some(Self::hps_like()),
            "pick_like" => Some(Self::pick_like()),
            "fidelity" => Some(Self::fidelity_only()),
            "brightness_negated" => Some(Self::brightness_negated()),
            _ => None,
        }
    }

    /// Default ensemble membership.
    pub fn default_ensemble() -> Vec<Self> {
        vec![
            Self::hps_like(),
            Self::pick_like(),
            Self::fidelity_only(),
            Self::brightness_negated(),
        ]
    }
}

/// Score an image under a bias profile.
pub fn reward_score(profile: &BiasProfile, task: &InpaintTask, img: &Image, k: usize) -> f64 {
    let mut score = 0.0;
    if profile.include_fidelity {
        score += fidelity(task, img, k);
    }
    score += profile.w_brightness * brightness(img)
        + profile.w_vividness * vividness(img)
        + profile.w_complexity * complexity(img);
    score
}

/// Uniform [0,1) reward, deterministic in (task_id, candidate_idx, seed).
pub fn random_reward(task_id: u32, candidate_idx: usize, seed: u64) -> f64 {
    uniform_vec(stable_hash(&[seed, task_id as u64, candidate_idx as u64, 0x5C0]), 1)[0]
}

/// Fractional ranks with rank 1 for the highest score; ties get the average
/// of the ranks they occupy.
pub fn fractional_rank(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidParam {
            name: "scores",
            reason: "empty score list".into(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite { context: "fractional_rank", step: None });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average rank of slots i+1..=j+1.
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    Ok(ranks)
}

/// Score matrix for one task: rows are rewards, columns are candidates.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    pub task_id: u32,
    pub reward_names: Vec<String>,
    /// scores[reward][candidate]
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleChoice {
    pub preferred_idx: usize,
    pub dispreferred_idx: usize,
    pub mean_ranks: Vec<f64>,
}

/// Rank-average ensemble selection: lowest mean fractional rank is preferred,
/// highest is dispreferred; ties break toward the lowest candidate index.
/// Returns `None` when every candidate is fully tied on every reward
/// (no-signal pair, excluded downstream).
pub fn ensemble_rank(matrix: &ScoreMatrix) -> Result<Option<EnsembleChoice>> {
    let n = matrix.scores.first().map(|r| r.len()).unwrap_or(0);
    if matrix.scores.is_empty() || n < 2 {
        return Err(Error::InvalidParam {
            name: "matrix",
            reason: format!("need >=1 reward and >=2 candidates, got {}x{n}", matrix.scores.len()),
        });
    }
    if matrix.scores.iter().any(|r| r.len() != n) {
        return Err(Error::ShapeMismatch {
            context: "ensemble_rank",
            expected: format!("{n} candidates per reward"),
            got: "ragged score matrix".into(),
        });
    }
    let mut mean_ranks = vec![0.0; n];
    for reward_scores in &matrix.scores {
        let ranks = fractional_rank(reward_scores)?;
        for (m, r) in mean_ranks.iter_mut().zip(&ranks) {
            *m += r / matrix.scores.len() as f64;
        }
    }
    let mut best = 0;
    let mut worst = 0;
    for i in 1..n {
        if mean_ranks[i] < mean_ranks[best] {
            best = i;
        }
        if mean_ranks[i] > mean_ranks[worst] {
            worst = i;
        }
    }
    if mean_ranks[best] == mean_ranks[worst] {
        return Ok(None);
    }
    Ok(Some(EnsembleChoice {
        preferred_idx: best,
        dispreferred_idx: worst,
        mean_ranks,
    }))
}
