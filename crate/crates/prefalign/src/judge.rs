//! External judge integration: the rubric system prompt, a chat-style HTTP
//! client that scores inpainting results 0-100, a deterministic mock judge,
//! and judge-vs-judge agreement measurement.

use base64::Engine;
use regex::Regex;
use serde_json::json;

use crate::error::{Error, Result};
use crate::rewards::{fidelity, vividness};
use crate::toyworld::{masked_view, prototype_image, Image, InpaintTask};

/// The evaluation rubric sent as the system prompt. Scoring is split into
/// aesthetic (0-40), structural (0-30), and semantic (0-30) criteria.
pub fn render_prompt() -> String {
    "You are a human expert in analysis of image inpainting.\n\
     Please evaluate the image inpainting result based on the following three criteria:\n\
     - Aesthetic Quality (0\u{2013}40 points):\n\
       - Visual appeal in color harmony, composition, style coherence\n\
       - Texture realism and naturalness\n\
     - Structural Coherence (0\u{2013}30 points)\n\
       - Preservation of geometric structures and content continuity\n\
       - Seamlessness at mask boundaries\n\
     - Semantic Alignment (0\u{2013}30 points)\n\
       - Faithfulness to the Text Prompt instructions\n\
       - Contextual consistency of added or restored content\n\
     \n\
     For each criterion, provide:\n\
     - A sub-score.\n\
     - A 1\u{2013}2-sentence justification.\n\
     Then compute the total score (0\u{2013}100).\n"
        .to_string()
}

#[derive(Debug, Clone)]
pub struct JudgeRequest {
    pub system_prompt: String,
    pub label_description: String,
    /// Base64 PNGs: source, masked view, mask, result.
    pub source_png: String,
    pub masked_png: String,
    pub mask_png: String,
    pub result_png: String,
    pub endpoint: String,
    pub model: String,
    pub auth_token: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Base backoff delay in milliseconds, doubled per retry.
    pub backoff_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeVerdict {
    pub aesthetic: f64,
    pub structural: f64,
    pub semantic: f64,
    pub total: f64,
    pub raw: String,
}

impl JudgeVerdict {
    /// Range and sum invariants, enforced on every accepted response.
    pub fn validate(&self) -> Result<()> {
        let in_range = (0.0..=40.0).contains(&self.aesthetic)
            && (0.0..=30.0).contains(&self.structural)
            && (0.0..=30.0).contains(&self.semantic)
            && (0.0..=100.0).contains(&self.total);
        if !in_range {
            return Err(Error::JudgeParse {
                reason: format!(
                    "sub-score out of range: aesthetic {}, structural {}, semantic {}",
                    self.aesthetic, self.structural, self.semantic
                ),
                raw: self.raw.clone(),
            });
        }
        let sum = self.aesthetic + self.structural + self.semantic;
        if (sum - self.total).abs() > 1e-9 {
            return Err(Error::JudgeParse {
                reason: format!("stated total {} != sum of sub-scores {}", self.total, sum),
                raw: self.raw.clone(),
            });
        }
        Ok(())
    }
}

/// Encode an image as base64 PNG (pixel values quantized to u8).
pub fn image_to_png_base64(img: &Image) -> String {
    let mut rgb = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let p = img.pixel(x, y);
            rgb.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    (p[0] * 255.0).round() as u8,
                    (p[1] * 255.0).round() as u8,
                    (p[2] * 255.0).round() as u8,
                ]),
            );
        }
    }
    let mut bytes = Vec::new();
    rgb.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("in-memory png encode");
    base64::engine::general_purpose::STANDARD.encode(&bytes)
}

/// Assemble a request for one inpainting result.
pub fn build_request(
    task: &InpaintTask,
    result: &Image,
    endpoint: &str,
    model: &str,
) -> JudgeRequest {
    let mask_img = Image {
        width: task.mask.width,
        height: task.mask.height,
        pixels: task
            .mask
            .values
            .iter()
            .flat_map(|v| [*v, *v, *v])
            .collect(),
    };
    JudgeRequest {
        system_prompt: render_prompt(),
        label_description: format!("class {}", task.label),
        source_png: image_to_png_base64(&task.source),
        masked_png: image_to_png_base64(&masked_view(task)),
        mask_png: image_to_png_base64(&mask_img),
        result_png: image_to_png_base64(result),
        endpoint: endpoint.to_string(),
        model: model.to_string(),
        auth_token: std::env::var("JUDGE_API_KEY").ok(),
        timeout_secs: 30,
        max_retries: 3,
        backoff_ms: 500,
    }
}

/// Extract sub-scores from free-text model output: the last occurrence of
/// each `criterion: number` pattern, strictly range-validated.
pub fn parse_verdict(text: &str) -> Result<JudgeVerdict> {
    let extract = |label: &str| -> Result<f64> {
        let re = Regex::new(&format!(r"(?i){label}[^:\n]*:\s*\**\s*(\d+(?:\.\d+)?)")).unwrap();
        re.captures_iter(text)
            .last()
            .and_then(|c| c.get(1))
            .and_then(|m| m.as_str().parse::<f64>().ok())
            .ok_or_else(|| Error::JudgeParse {
                reason: format!("no `{label}: <number>` pattern found"),
                raw: text.to_string(),
            })
    };
    let verdict = JudgeVerdict {
        aesthetic: extract("aesthetic")?,
        structural: extract("structural")?,
        semantic: extract("semantic")?,
        total: extract("total")?,
        raw: text.to_string(),
    };
    verdict.validate()?;
    Ok(verdict)
}

fn chat_body(req: &JudgeRequest) -> serde_json::Value {
    let img = |b64: &str| {
        json!({
            "type": "image_url",
            "image_url": { "url": format!("data:image/png;base64,{b64}") }
        })
    };
    json!({
        "model": req.model,
        "messages": [
            { "role": "system", "content": req.system_prompt },
            { "role": "user", "content": [
                { "type": "text", "text": format!(
                    "Inpainting prompt: {}. Images in order: input image, masked view, mask, inpainting result.",
                    req.label_description) },
                img(&req.source_png),
                img(&req.masked_png),
                img(&req.mask_png),
                img(&req.result_png),
            ]}
        ]
    })
}

/// One scoring request against a chat-completion-style endpoint, with
/// exponential-backoff retries. Never mutates experiment state on failure.
pub fn judge_remote(req: &JudgeRequest) -> Result<JudgeVerdict> {
    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(req.timeout_secs))
        .build()
        .map_err(|e| Error::JudgeTransport { attempts: 0, reason: e.to_string() })?;
    let body = chat_body(req);
    let mut last_err = String::new();
    for attempt in 0..=req.max_retries {
        if attempt > 0 {
            std::thread::sleep(std::time::Duration::from_millis(
                req.backoff_ms << (attempt - 1),
            ));
        }
        let mut call = client.post(&req.endpoint).json(&body);
        if let Some(token) = &req.auth_token {
            call = call.bearer_auth(token);
        }
        let response = match call.send().and_then(|r| r.error_for_status()) {
            Ok(r) => r,
            Err(e) => {
                last_err = e.to_string();
                continue;
            }
        };
        let parsed: serde_json::Value = match response.json() {
            Ok(v) => v,
            Err(e) => {
                last_err = e.to_string();
                continue;
            }
        };
        let content = parsed["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| Error::JudgeParse {
                reason: "response has no choices[0].message.content string".into(),
                raw: parsed.to_string(),
            })?;
        return parse_verdict(content);
    }
    Err(Error::JudgeTransport {
        attempts: req.max_retries + 1,
        reason: last_err,
    })
}

/// Deterministic offline judge: vividness match against the class prototype
/// (aesthetic), unmasked-region exactness (structural), and a clamped linear
/// map of fidelity (semantic).
pub fn judge_mock(task: &InpaintTask, img: &Image, k: usize) -> JudgeVerdict {
    let proto = prototype_image(task.label, k, img.width, img.height);
    let v_star = vividness(&proto);
    let aesthetic = 40.0 * (1.0 - 4.0 * (vividness(img) - v_star).abs()).clamp(0.0, 1.0);

    let mut unmasked = 0usize;
    let mut exact = 0usize;
    for y in 0..img.height {
        for x in 0..img.width {
            if task.mask.values[y * img.width + x] == 0.0 {
                unmasked += 1;
                if img.pixel(x, y) == task.source.pixel(x, y) {
                    exact += 1;
                }
            }
        }
    }
    let structural = if unmasked == 0 {
        30.0
    } else {
        30.0 * exact as f64 / unmasked as f64
    };

    let semantic = 30.0 * (1.0 + fidelity(task, img, k) / 0.05).clamp(0.0, 1.0);
    JudgeVerdict {
        aesthetic,
        structural,
        semantic,
        total: aesthetic + structural + semantic,
        raw: String::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    /// Fraction of counted pairs where both judges picked the same winner.
    pub percent: f64,
    pub counted: usize,
    pub skipped: usize,
}

type JudgeFn<'a> = &'a (dyn Fn(&InpaintTask, &Image) -> Result<f64> + Sync);

/// Fraction of pairs on which two judges agree about the winner. Ties count
/// as agreement only when both judges tie. Judge failures skip the pair.
pub fn judge_agreement(
    judge_a: JudgeFn,
    judge_b: JudgeFn,
    pairs: &[(&InpaintTask, &Image, &Image)],
) -> Result<Agreement> {
    if pairs.is_empty() {
        return Err(Error::InvalidParam {
            name: "pairs",
            reason: "need at least one comparison pair".into(),
        });
    }
    let mut agreed = 0usize;
    let mut counted = 0usize;
    let mut skipped = 0usize;
    for (task, x, y) in pairs {
        let verdicts = (|| -> Result<_> {
            Ok((
                judge_a(task, x)?,
                judge_a(task, y)?,
                judge_b(task, x)?,
                judge_b(task, y)?,
            ))
        })();
        let (ax, ay, bx, by) = match verdicts {
            Ok(v) => v,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        counted += 1;
        let pick_a = ax.partial_cmp(&ay);
        let pick_b = bx.partial_cmp(&by);
        if pick_a == pick_b && pick_a.is_some() {
            agreed += 1;
        }
    }
    if counted == 0 {
        return Err(Error::InvalidParam {
            name: "pairs",
            reason: "every pair was skipped".into(),
        });
    }
    Ok(Agreement {
        percent: agreed as f64 / counted as f64,
        counted,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::{blend, make_dataset};

    #[test]
    fn prompt_contains_required_strings_and_is_stable() {
        let p = render_prompt();
        assert!(p.contains("Aesthetic Quality (0\u{2013}40 points)"));
        assert!(p.contains("compute the total score (0\u{2013}100)"));
        assert!(p.contains("Structural Coherence (0\u{2013}30 points)"));
        assert!(p.contains("Semantic Alignment (0\u{2013}30 points)"));
        assert_eq!(p, render_prompt());
    }

    #[test]
    fn parse_well_formed_verdict() {
        let text = "Aesthetic Quality: 35\nNice colors.\nStructural Coherence: 28\n\
                    Seams fine.\nSemantic Alignment: 30\nOn prompt.\nTotal score: 93";
        let v = parse_verdict(text).unwrap();
        assert_eq!(v.aesthetic, 35.0);
        assert_eq!(v.structural, 28.0);
        assert_eq!(v.semantic, 30.0);
        assert_eq!(v.total, 93.0);
    }

    #[test]
    fn parse_uses_last_occurrence() {
        let text = "Aesthetic: 10 ... revised. Aesthetic: 20\nStructural: 15\n\
                    Semantic: 25\nTotal: 60";
        let v = parse_verdict(text).unwrap();
        assert_eq!(v.aesthetic, 20.0);
    }

    #[test]
    fn maxed_sub_scores_total_100() {
        let v = parse_verdict("Aesthetic: 40\nStructural: 30\nSemantic: 30\nTotal: 100").unwrap();
        assert_eq!(v.total, 100.0);
    }

    #[test]
    fn inconsistent_total_rejected_with_both_values() {
        let err =
            parse_verdict("Aesthetic: 40\nStructural: 30\nSemantic: 30\nTotal: 90").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("90") && msg.contains("100"), "{msg}");
    }

    #[test]
    fn out_of_range_sub_score_rejected() {
        assert!(parse_verdict("Aesthetic: 55\nStructural: 10\nSemantic: 10\nTotal: 75").is_err());
        assert!(parse_verdict("no scores here at all").is_err());
    }

    #[test]
    fn mock_judge_perfect_on_blended_prototype() {
        let tasks = make_dataset(1, 4, 4, 0.0, 8, 8).unwrap();
        let t = &tasks[0];
        let proto = prototype_image(t.label, 4, 8, 8);
        let result = blend(&proto, &t.source, &t.mask).unwrap();
        // Zero-noise dataset: source == prototype, so the blend is the prototype.
        let v = judge_mock(t, &result, 4);
        assert_eq!(v.total, 100.0);
        assert_eq!(v, judge_mock(t, &result, 4));
    }

    #[test]
    fn mock_judge_semantic_matches_closed_form_on_gray() {
        let tasks = make_dataset(2, 4, 4, 0.0, 8, 8).unwrap();
        let t = &tasks[0];
        let gray = Image::constant(8, 8, [0.5, 0.5, 0.5]);
        let v = judge_mock(t, &gray, 4);
        let expected = 30.0 * (1.0 + fidelity(t, &gray, 4) / 0.05).clamp(0.0, 1.0);
        assert!((v.semantic - expected).abs() < 1e-12);
    }

    #[test]
    fn agreement_extremes() {
        let tasks = make_dataset(3, 4, 10, 0.05, 8, 8).unwrap();
        let imgs: Vec<(Image, Image)> = tasks
            .iter()
            .map(|t| {
                let a = Image {
                    width: 8,
                    height: 8,
                    pixels: crate::rng::uniform_vec(t.task_id as u64, 192),
                };
                let b = Image {
                    width: 8,
                    height: 8,
                    pixels: crate::rng::uniform_vec(t.task_id as u64 + 1000, 192),
                };
                (a, b)
            })
            .collect();
        let pairs: Vec<(&InpaintTask, &Image, &Image)> = tasks
            .iter()
            .zip(&imgs)
            .map(|(t, (a, b))| (t, a, b))
            .collect();
        let fid = |task: &InpaintTask, img: &Image| -> Result<f64> { Ok(fidelity(task, img, 4)) };
        let neg = |task: &InpaintTask, img: &Image| -> Result<f64> { Ok(-fidelity(task, img, 4)) };
        assert_eq!(judge_agreement(&fid, &fid, &pairs).unwrap().percent, 1.0);
        // Strict orderings everywhere (continuous scores): negation agrees never.
        assert_eq!(judge_agreement(&fid, &neg, &pairs).unwrap().percent, 0.0);
        // Symmetry.
        let mock = |task: &InpaintTask, img: &Image| -> Result<f64> {
            Ok(judge_mock(task, img, 4).total)
        };
        let ab = judge_agreement(&mock, &fid, &pairs).unwrap();
        let ba = judge_agreement(&fid, &mock, &pairs).unwrap();
        assert_eq!(ab.percent, ba.percent);
        assert!(judge_agreement(&fid, &fid, &[]).is_err());
    }

    #[test]
    fn agreement_matches_brute_force_oracle() {
        let tasks = make_dataset(4, 4, 100, 0.05, 8, 8).unwrap();
        let imgs: Vec<(Image, Image)> = tasks
            .iter()
            .map(|t| {
                let mk = |salt: u64| Image {
                    width: 8,
                    height: 8,
                    pixels: crate::rng::uniform_vec(t.task_id as u64 ^ salt, 192),
                };
                (mk(0x111), mk(0x222))
            })
            .collect();
        let pairs: Vec<(&InpaintTask, &Image, &Image)> = tasks
            .iter()
            .zip(&imgs)
            .map(|(t, (a, b))| (t, a, b))
            .collect();
        let mock = |task: &InpaintTask, img: &Image| -> Result<f64> {
            Ok(judge_mock(task, img, 4).total)
        };
        let fid = |task: &InpaintTask, img: &Image| -> Result<f64> { Ok(fidelity(task, img, 4)) };
        let got = judge_agreement(&mock, &fid, &pairs).unwrap();
        let mut agreed = 0usize;
        for (t, a, b) in &pairs {
            let m = judge_mock(t, a, 4).total.partial_cmp(&judge_mock(t, b, 4).total);
            let f = fidelity(t, a, 4).partial_cmp(&fidelity(t, b, 4));
            if m == f {
                agreed += 1;
            }
        }
        assert_eq!(got.percent, agreed as f64 / pairs.len() as f64);
    }
}
