//! Procedural toy inpainting domain.
//!
//! Each class has a fixed prototype (background color plus a centered
//! foreground rectangle); tasks are noisy prototype renderings with a
//! rectangular mask to inpaint. The palette deliberately spans dark/bright
//! and muted/vivid so brightness- and vividness-biased scorers have room to
//! pull generations apart.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{rng_from, stable_hash};
use crate::tensor::Tensor;

pub const DEFAULT_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, values in [0,1].
    pub pixels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    /// Row-major, values in {0,1}; 1 marks the region to inpaint.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintTask {
    pub task_id: u32,
    pub source: Image,
    pub mask: Mask,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototype {
    pub background: [f64; 3],
    pub foreground: [f64; 3],
    /// Half-extents of the centered foreground rectangle, as fractions of
    /// width and height.
    pub half_extents: (f64, f64),
}

impl Image {
    pub fn constant(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Image { width, height, pixels }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

impl Mask {
    /// Axis-aligned rectangle mask; `x1`/`y1` exclusive.
    pub fn rect(width: usize, height: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let mut values = vec![0.0; width * height];
        for y in y0..y1 {
            for x in x0..x1 {
                values[y * width + x] = 1.0;
            }
        }
        Mask { width, height, values }
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0 || *v == 1.0)
    }

    pub fn covered_fraction(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// The default K=4 palette. Values stay inside [0.15, 0.85] so that  additive
/// Gaussian noise at sigma <= 0.2 rarely clamps and class means stay clean.
pub fn default_prototypes(k: usize) -> Vec<ClassPrototype> {
    let base = [
        // dark, muted
        ClassPrototype {
            background: [0.20, 0.20, 0.25],
            foreground: [0.35, 0.30, 0.30],
            half_extents: (0.30, 0.30),
        },
        // bright, vivid
        ClassPrototype {
            background: [0.85, 0.80, 0.25],
            foreground: [0.80, 0.20, 0.20],
            half_extents: (0.25, 0.35),
        },
        // mid, vivid
        ClassPrototype {
            background: [0.20, 0.55, 0.80],
            foreground: [0.80, 0.50, 0.20],
            half_extents: (0.35, 0.25),
        },
        // bright, muted
        ClassPrototype {
            background: [0.80, 0.80, 0.80],
            foreground: [0.55, 0.60, 0.55],
            half_extents: (0.30, 0.20),
        },
    ];
    (0..k).map(|i| base[i % base.len()].clone()).collect()
}

/// Render the clean prototype image for a class.
pub fn prototype_image(label: usize, k: usize, width: usize, height: usize) -> Image {
    let protos = default_prototypes(k);
    let proto = &protos[label % protos.len()];
    let mut img = Image::constant(width, height, proto.background);
    let (hx, hy) = proto.half_extents;
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    for y in 0..height {
        for x in 0..width {
            if (x as f64 - cx).abs() <= hx * width as f64
                && (y as f64 - cy).abs() <= hy * height as f64
            {
                img.set_pixel(x, y, proto.foreground);
            }
        }
    }
    img
}

/// Procedural dataset: noisy prototype renderings, rectangular masks covering
/// 25-75% of the area, labels cycling uniformly. Deterministic in `seed`.
pub fn make_dataset(
    seed: u64,
    k: usize,
    n_tasks: usize,
    noise_sigma: f64,
    width: usize,
    height: usize,
) -> Result<Vec<InpaintTask>> {
    if k < 2 {
        return Err(Error::InvalidParam {
            name: "k",
            reason: format!("need at least 2 classes, got {k}"),
        });
    }
    if n_tasks < 1 {
        return Err(Error::InvalidParam {
            name: "n_tasks",
            reason: "need at least 1 task".into(),
        });
    }
    if !(0.0..=0.2).contains(&noise_sigma) {
        return Err(Error::InvalidParam {
            name: "noise_sigma",
            reason: format!("must lie in [0, 0.2], got {noise_sigma}"),
        });
    }
    let mut tasks = Vec::with_capacity(n_tasks);
    for i in 0..n_tasks {
        let task_id = i as u32;
        let label = i % k;
        let mut rng = rng_from(stable_hash(&[seed, task_id as u64, 0xDA7A]));
        let mut source = prototype_image(label, k, width, height);
        for v in &mut source.pixels {
            let noise: f64 = rng.sample(StandardNormal);
            *v = (*v + noise_sigma * noise).clamp(0.0, 1.0);
        }
        // Rejection-sample rectangle extents until coverage lands in [0.25, 0.75].
        let mask = loop {
            let mw = rng.gen_range(1..=width);
            let mh = rng.gen_range(1..=height);
            let frac = (mw * mh) as f64 / (width * height) as f64;
            if !(0.25..=0.75).contains(&frac) {
                continue;
            }
            let x0 = rng.gen_range(0..=width - mw);
            let y0 = rng.gen_range(0..=height - mh);
            break Mask::rect(width, height, x0, y0, x0 + mw, y0 + mh);
        };
        tasks.push(InpaintTask { task_id, source, mask, label });
    }
    Ok(tasks)
}

/// Pixel space [0,1] to model space [-1,1].
pub fn to_model_space(img: &Image) -> Tensor {
    Tensor::vector(img.pixels.iter().map(|p| 2.0 * p - 1.0).collect())
}

/// Model space back to pixel space, clamped to [0,1].
pub fn from_model_space(t: &Tensor, width: usize, height: usize) -> Result<Image> {
    if t.len() != width * height * 3 {
        return Err(Error::ShapeMismatch {
            context: "from_model_space",
            expected: format!("{} values", width * height * 3),
            got: format!("{}", t.len()),
        });
    }
    Ok(Image {
        width,
        height,
        pixels: t.data.iter().map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)).collect(),
    })
}

/// `mask * generated + (1 - mask) * source`, per pixel. Unmasked pixels come
/// through bit-exactly.
pub fn blend(generated: &Image, source: &Image, mask: &Mask) -> Result<Image> {
    if generated.width != source.width
        || generated.height != source.height
        || mask.width != source.width
        || mask.height != source.height
    {
        return Err(Error::ShapeMismatch {
            context: "blend",
            expected: format!("{}x{}", source.width, source.height),
            got: format!(
                "generated {}x{}, mask {}x{}",
                generated.width, generated.height, mask.width, mask.height
            ),
        });
    }
    let mut out = source.clone();
    for y in 0..source.height {
        for x in 0..source.width {
            if mask.values[y * source.width + x] == 1.0 {
                out.set_pixel(x, y, generated.pixel(x, y));
            }
        }
    }
    Ok(out)
}

/// Source image with the masked region replaced by neutral gray 0.5.
pub fn masked_view(task: &InpaintTask) -> Image {
    let mut out = task.source.clone();
    for y in 0..out.height {
        for x in 0..out.width {
            if task.mask.values[y * out.width + x] == 1.0 {
                out.set_pixel(x, y, [0.5, 0.5, 0.5]);
            }
        }
    }
    out
}
