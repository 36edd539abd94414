//! Synthetic world: images made of labeled rectangles whose patch features
//! scatter around orthonormal per-concept means, captioned by templates
//! naming every region's concept.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    write_captions, CaptionRecord, ClassSet, FeatureRecord, FeatureStore, GrayImage,
};
use crate::error::{Error, Result};

/// Concept names available to the generator, all nouns of the builtin
/// lexicon. The first `K` are used.
pub const WORLD_CONCEPTS: [&str; 26] = [
    "cow", "tree", "dog", "car", "boat", "bird", "house", "sky", "horse", "sheep", "cat", "bus",
    "train", "truck", "plane", "chair", "table", "bottle", "cup", "book", "lamp", "flower", "rock",
    "road", "grass", "sign",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorldSpec {
    pub num_concepts: usize,
    /// Visual feature width `d_v`.
    pub dim: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Mask pixels per patch side.
    pub patch_px: usize,
    /// Regions per image are drawn uniformly from `1..=min(max_regions, K)`.
    pub max_regions: usize,
    pub sigma: f64,
    /// Caption templates; `{}` receives the joined concept mentions.
    pub templates: Vec<String>,
    pub train_images: usize,
    pub eval_images: usize,
    pub seed: u64,
    /// Probability that an image with two or more regions pairs its first
    /// concept with that concept's fixed partner `(k + K/2) mod K`.
    #[serde(default)]
    pub pair_prob: f64,
}

impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        Self {
            num_concepts: 8,
            dim: 16,
            grid_h: 16,
            grid_w: 16,
            patch_px: 4,
            max_regions: 3,
            sigma: 0.05,
            templates: vec!["there is {}.".into(), "we can see {}.".into()],
            train_images: 512,
            eval_images: 64,
            seed: 0,
            pair_prob: 0.0,
        }
    }
}

impl SyntheticWorldSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.num_concepts;
        if k == 0 || k > WORLD_CONCEPTS.len() {
            return Err(Error::Config(format!(
                "num_concepts must be in 1..={}, got {k}",
                WORLD_CONCEPTS.len()
            )));
        }
        if k > self.dim {
            return Err(Error::Config(format!(
                "{k} orthonormal means need d_v >= {k}, got {}",
                self.dim
            )));
        }
        if self.max_regions == 0 || self.max_regions > self.grid_h * self.grid_w {
            return Err(Error::Config(format!(
                "max_regions {} does not fit a {}x{} grid",
                self.max_regions, self.grid_h, self.grid_w
            )));
        }
        if self.patch_px == 0 || self.grid_h > u16::MAX as usize || self.grid_w > u16::MAX as usize {
            return Err(Error::Config("bad grid or patch size".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        super::check_templates(&self.templates)
    }

    /// Concept names in label (alphabetical) order.
    pub fn class_names(&self) -> Vec<String> {
        let mut names: Vec<String> = WORLD_CONCEPTS[..self.num_concepts.min(WORLD_CONCEPTS.len())]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.sort();
        names
    }

    /// Single-concept prompts phrased like the captions.
    pub fn class_templates(&self) -> Vec<String> {
        self.templates.iter().map(|t| t.replacen("{}", "a {}", 1)).collect()
    }
}

/// Ground-truth class means, one row per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototypes {
    pub classes: Vec<String>,
    pub means: Vec<Vec<f64>>,
}

impl Prototypes {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&text)?;
        if p.classes.len() != p.means.len() {
            return Err(Error::Input(format!(
                "{}: {} classes but {} means",
                path.display(),
                p.classes.len(),
                p.means.len()
            )));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitData {
    pub features: FeatureStore,
    pub captions: Vec<CaptionRecord>,
    /// One mask per record, in feature-store order.
    pub masks: Vec<GrayImage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorld {
    pub spec: SyntheticWorldSpec,
    pub prototypes: Prototypes,
    pub train: SplitData,
    pub eval: SplitData,
}

impl SyntheticWorld {
    pub fn class_set(&self) -> ClassSet {
        ClassSet::new(self.prototypes.classes.clone(), self.spec.class_templates())
    }

    /// Writes `classes.json`, `means.json`, `world.json` and per split
    /// `features.dvf`, `captions.jsonl` and `masks/<image_id>.pgm`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.class_set().save(&dir.join("classes.json"))?;
        self.prototypes.save(&dir.join("means.json"))?;
        let spec = serde_json::to_string_pretty(&self.spec)? + "\n";
        fs::write(dir.join("world.json"), spec).map_err(|e| Error::io(dir.join("world.json"), e))?;
        for (name, split) in [("train", &self.train), ("eval", &self.eval)] {
            let sd = dir.join(name);
            let md = sd.join("masks");
            fs::create_dir_all(&md).map_err(|e| Error::io(&md, e))?;
            split.features.write(&sd.join("features.dvf"))?;
            write_captions(&split.captions, &sd.join("captions.jsonl"))?;
            for (rec, mask) in split.features.records().iter().zip(&split.masks) {
                mask.write(&md.join(format!("{}.pgm", rec.image_id)))?;
            }
        }
        Ok(())
    }
}

/// Gram-Schmidt on `k` seeded Gaussian vectors of width `d`.
fn orthonormal_means(k: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for u in &out {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        // A draw (numerically) inside the span is redrawn.
        if norm > 1e-6 {
            out.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    out
}

fn f32_round(x: f64) -> f64 {
    x as f32 as f64
}

/// Axis-aligned `[y0, y1) × [x0, x1)` patch rectangle.
#[derive(Clone, Copy, Debug)]
struct Rect {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

impl Rect {
    fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }
}

/// Guillotine partition of the grid into `n` rectangles: repeatedly cut a
/// random splittable rectangle at a random position along a random
/// splittable axis.
fn partition(gh: usize, gw: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Rect> {
    let mut rects = vec![Rect {
        y0: 0,
        y1: gh,
        x0: 0,
        x1: gw,
    }];
    while rects.len() < n {
        let splittable: Vec<usize> = (0..rects.len()).filter(|&i| rects[i].area() > 1).collect();
        let i = splittable[rng.random_range(0..splittable.len())];
        let r = rects[i];
        let can_y = r.y1 - r.y0 > 1;
        let can_x = r.x1 - r.x0 > 1;
        let along_y = if can_y && can_x { rng.random_bool(0.5) } else { can_y };
        let (a, b) = if along_y {
            let cut = rng.random_range(r.y0 + 1..r.y1);
            (Rect { y1: cut, ..r }, Rect { y0: cut, ..r })
        } else {
            let cut = rng.random_range(r.x0 + 1..r.x1);
            (Rect { x1: cut, ..r }, Rect { x0: cut, ..r })
        };
        rects[i] = a;
        rects.push(b);
    }
    rects
}

fn draw_labels(spec: &SyntheticWorldSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = spec.num_concepts;
    if n < 2 || spec.pair_prob <= 0.0 || !rng.random_bool(spec.pair_prob.min(1.0)) {
        return sample(rng, k, n).into_vec();
    }
    let first = rng.random_range(0..k);
    let partner = (first + k / 2) % k;
    let mut labels = vec![first, partner];
    let rest: Vec<usize> = (0..k).filter(|c| !labels.contains(c)).collect();
    labels.extend(sample(rng, rest.len(), n - 2).into_iter().map(|i| rest[i]));
    labels
}

fn generate_split(
    spec: &SyntheticWorldSpec,
    prefix: &str,
    count: usize,
    means: &[Vec<f64>],
    names: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<SplitData> {
    let (gh, gw, d) = (spec.grid_h, spec.grid_w, spec.dim);
    let mut features = FeatureStore::new(d);
    let mut captions = Vec::with_capacity(count);
    let mut masks = Vec::with_capacity(count);
    for i in 0..count {
        let n = rng.random_range(1..=spec.max_regions.min(spec.num_concepts));
        let labels = draw_labels(spec, n, rng);
        let rects = partition(gh, gw, n, rng);

        let mut grid = vec![0usize; gh * gw];
        for (r, &label) in rects.iter().zip(&labels) {
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    grid[y * gw + x] = label;
                }
            }
        }
        let mut patches = Vec::with_capacity(gh * gw * d);
        for &label in &grid {
            for &m in &means[label] {
                let noise: f64 = rng.sample(StandardNormal);
                patches.push(f32_round(m + spec.sigma * noise));
            }
        }
        let mut cls = vec![0.0; d];
        for p in patches.chunks_exact(d) {
            cls.iter_mut().zip(p).for_each(|(c, v)| *c += v);
        }
        cls.iter_mut().for_each(|c| *c = f32_round(*c / (gh * gw) as f64));

        let template = &spec.templates[rng.random_range(0..spec.templates.len())];
        let mentions: Vec<String> = labels.iter().map(|&l| format!("a {}", names[l])).collect();
        let caption = template.replacen("{}", &mentions.join(" and "), 1);

        let (w, h) = (gw * spec.patch_px, gh * spec.patch_px);
        let mut pixels = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                pixels[y * w + x] = grid[(y / spec.patch_px) * gw + x / spec.patch_px] as u8;
            }
        }

        let image_id = format!("{prefix}-{i:05}");
        features.push(FeatureRecord {
            image_id: image_id.clone(),
            grid_h: gh,
            grid_w: gw,
            cls,
            patches,
        })?;
        captions.push(CaptionRecord {
            image_id,
            caption,
            prompt: String::new(),
            source: "synthetic-world".into(),
        });
        masks.push(GrayImage::new(w, h, pixels)?);
    }
    Ok(SplitData {
        features,
        captions,
        masks,
    })
}

/// Deterministic in `spec.seed`. Labels index the alphabetical class list;
/// train and eval share the means.
pub fn generate_synthetic_world(spec: &SyntheticWorldSpec) -> Result<SyntheticWorld> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names = spec.class_names();
    // Everything is rounded to the on-disk f32 precision so a written and
    // re-read world equals the generated one.
    let means: Vec<Vec<f64>> = orthonormal_means(spec.num_concepts, spec.dim, &mut rng)
        .into_iter()
        .map(|m| m.into_iter().map(f32_round).collect())
        .collect();
    let train = generate_split(spec, "train", spec.train_images, &means, &names, &mut rng)?;
    let eval = generate_split(spec, "eval", spec.eval_images, &means, &names, &mut rng)?;
    Ok(SyntheticWorld {
        spec: spec.clone(),
        prototypes: Prototypes {
            classes: names,
            means,
        },
        train,
        eval,
    })
}
