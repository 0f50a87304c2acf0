use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::manifest::{Eye, ImageRecord, Manifest, Provenance, Quality, Split};
use super::ppm::{save_ppm, RawImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub images_per_eye: usize,
    /// Fraction of eyes labelled positive; the count is rounded.
    pub positive_rate: f64,
    /// Probability that an image is rendered in the low-quality tier.
    pub quality_mix: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 || self.images_per_eye == 0 {
            return Err(Error::param("patients and images per eye must be positive"));
        }
        for (name, v) in [("positive rate", self.positive_rate), ("quality mix", self.quality_mix)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 50,
            images_per_eye: 3,
            positive_rate: 0.5,
            quality_mix: 0.25,
            seed: 0,
        }
    }
}

const TEX: usize = 256;
const TEX_EXTENT: f64 = 1.1;

type Rgb = [f64; 3];

/// Procedural eye rasterized over `[-TEX_EXTENT, TEX_EXTENT]^2`.
struct LatentEye {
    texels: Vec<Rgb>,
}

fn blend(dst: &mut Rgb, src: Rgb, alpha: f64) {
    for c in 0..3 {
        dst[c] += (src[c] - dst[c]) * alpha;
    }
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl LatentEye {
    fn draw(rng: &mut ChaCha8Rng, positive: bool) -> LatentEye {
        let fundus: Rgb = [
            rng.random_range(0.65..0.85),
            rng.random_range(0.28..0.42),
            rng.random_range(0.10..0.22),
        ];
        let disc_angle = rng.random_range(0.0..2.0 * PI);
        let disc_r = rng.random_range(0.28..0.40);
        let disc = (disc_r * disc_angle.cos(), disc_r * disc_angle.sin());
        let disc_size = rng.random_range(0.10..0.14);

        let step = 2.0 * TEX_EXTENT / TEX as f64;
        let coord = |i: usize| -TEX_EXTENT + (i as f64 + 0.5) * step;
        let mut texels = vec![[0.02, 0.01, 0.01]; TEX * TEX];
        for y in 0..TEX {
            for x in 0..TEX {
                let (u, v) = (coord(x), coord(y));
                let r2 = u * u + v * v;
                if r2 > 1.0 {
                    continue;
                }
                let shade = 1.0 - 0.35 * r2;
                let t = &mut texels[y * TEX + x];
                *t = [fundus[0] * shade, fundus[1] * shade, fundus[2] * shade];
                let d2 = (u - disc.0).powi(2) + (v - disc.1).powi(2);
                let a = (-d2 / (2.0 * (disc_size / 2.0f64).powi(2))).exp();
                blend(t, [0.98, 0.88, 0.62], a);
            }
        }

        let mut eye = LatentEye { texels };
        let vessel: Rgb = [0.42, 0.07, 0.05];
        let n_vessels = rng.random_range(8..13);
        for _ in 0..n_vessels {
            let (mut px, mut py) = disc;
            let mut dir = rng.random_range(0.0..2.0 * PI);
            let steps = rng.random_range(25..41);
            let turn = Normal::new(0.0, 0.25).expect("valid normal");
            for s in 0..steps {
                let width = 0.022 - 0.014 * s as f64 / steps as f64;
                let nx = px + 0.03 * dir.cos();
                let ny = py + 0.03 * dir.sin();
                eye.stamp_segment((px, py), (nx, ny), width, vessel, 0.8);
                px = nx;
                py = ny;
                dir += turn.sample(rng);
                if px * px + py * py > 1.0 {
                    break;
                }
            }
        }

        if positive {
            let r0 = rng.random_range(0.62..0.85);
            let start = rng.random_range(0.0..2.0 * PI);
            let span = rng.random_range(100f64..200.0).to_radians();
            let half_width = 0.03;
            for y in 0..TEX {
                for x in 0..TEX {
                    let (u, v) = (coord(x), coord(y));
                    let mut ang = v.atan2(u) - start;
                    ang = ang.rem_euclid(2.0 * PI);
                    if ang > span {
                        continue;
                    }
                    let d = ((u * u + v * v).sqrt() - r0).abs();
                    let a = 0.8 * (1.0 - smoothstep(half_width * 0.5, half_width, d));
                    if a > 0.0 {
                        blend(&mut eye.texels[y * TEX + x], [1.0, 0.96, 0.84], a);
                    }
                }
            }
        }
        eye
    }

    fn stamp_segment(&mut self, a: (f64, f64), b: (f64, f64), width: f64, color: Rgb, alpha: f64) {
        let step = 2.0 * TEX_EXTENT / TEX as f64;
        let to_tex = |p: f64| (p + TEX_EXTENT) / step - 0.5;
        let lo_x = (to_tex(a.0.min(b.0) - width).floor().max(0.0)) as usize;
        let hi_x = (to_tex(a.0.max(b.0) + width).ceil().min((TEX - 1) as f64)) as usize;
        let lo_y = (to_tex(a.1.min(b.1) - width).floor().max(0.0)) as usize;
        let hi_y = (to_tex(a.1.max(b.1) + width).ceil().min((TEX - 1) as f64)) as usize;
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        for y in lo_y..=hi_y {
            for x in lo_x..=hi_x {
                let u = -TEX_EXTENT + (x as f64 + 0.5) * step;
                let v = -TEX_EXTENT + (y as f64 + 0.5) * step;
                let t = (((u - a.0) * dx + (v - a.1) * dy) / len2).clamp(0.0, 1.0);
                let d = ((u - a.0 - t * dx).powi(2) + (v - a.1 - t * dy).powi(2)).sqrt();
                if d < width && u * u + v * v <= 1.0 {
                    blend(&mut self.texels[y * TEX + x], color, alpha);
                }
            }
        }
    }

    fn sample(&self, u: f64, v: f64) -> Rgb {
        let step = 2.0 * TEX_EXTENT / TEX as f64;
        let fx = ((u + TEX_EXTENT) / step - 0.5).clamp(0.0, (TEX - 1) as f64);
        let fy = ((v + TEX_EXTENT) / step - 0.5).clamp(0.0, (TEX - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(TEX - 1), (y0 + 1).min(TEX - 1));
        let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
        let t = |x: usize, y: usize| self.texels[y * TEX + x];
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = t(x0, y0)[c] + (t(x1, y0)[c] - t(x0, y0)[c]) * ax;
            let bot = t(x0, y1)[c] + (t(x1, y1)[c] - t(x0, y1)[c]) * ax;
            *o = top + (bot - top) * ay;
        }
        out
    }
}

/// Per-image camera pose and photometric jitter.
struct View {
    rotation: f64,
    offset: (f64, f64),
    gain: f64,
    noise_seed: u64,
}

const VIEW_SCALE: f64 = 0.85;

fn render(eye: &LatentEye, view: &View, quality: Quality) -> RawImage {
    let (h, w) = quality.dimensions();
    let radius = 0.46 * h.min(w) as f64;
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let (sin, cos) = view.rotation.sin_cos();
    let noise = Normal::new(0.0, 0.02).expect("valid normal");
    let mut pixels = vec![0u8; h * w * 3];
    pixels
        .par_chunks_mut(w * 3)
        .enumerate()
        .for_each(|(y, row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(view.noise_seed);
            rng.set_stream(y as u64);
            for x in 0..w {
                let u = (x as f64 + 0.5 - cx) / radius;
                let v = (y as f64 + 0.5 - cy) / radius;
                let r2 = u * u + v * v;
                let mut rgb = if r2 <= 1.0 {
                    let (su, sv) = (u * VIEW_SCALE, v * VIEW_SCALE);
                    let lu = view.offset.0 + cos * su - sin * sv;
                    let lv = view.offset.1 + sin * su + cos * sv;
                    let vignette = 1.0 - 0.25 * smoothstep(0.7, 1.0, r2.sqrt());
                    let c = eye.sample(lu, lv);
                    [
                        c[0] * view.gain * vignette,
                        c[1] * view.gain * vignette,
                        c[2] * view.gain * vignette,
                    ]
                } else {
                    [0.0; 3]
                };
                for c in &mut rgb {
                    *c += noise.sample(&mut rng);
                }
                for c in 0..3 {
                    let v = rgb[c].clamp(0.0, 1.0);
                    let v = match quality {
                        Quality::High => v,
                        Quality::Low => (v * 7.0).round() / 7.0,
                    };
                    row[x * 3 + c] = (v * 255.0).round() as u8;
                }
            }
        });
    RawImage::new(h, w, pixels).expect("render fills every pixel")
}

struct Job {
    record: ImageRecord,
    eye_index: usize,
    view: View,
}

/// Renders a synthetic two-eye-per-patient dataset into `out_dir` and
/// writes `out_dir/manifest.csv`. Each image is a rotated window onto one
/// latent eye; positive eyes carry a bright arc ridge.
pub fn synth_generate(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_eyes = cfg.n_patients * 2;
    let n_pos = (cfg.positive_rate * n_eyes as f64).round() as usize;
    let mut labels: Vec<i64> = (0..n_eyes).map(|i| (i < n_pos) as i64).collect();
    labels.shuffle(&mut rng);

    let mut eye_seeds = Vec::with_capacity(n_eyes);
    let mut jobs = Vec::new();
    for p in 0..cfg.n_patients {
        let patient_id = format!("P{p:04}");
        for (e, eye) in [Eye::Left, Eye::Right].into_iter().enumerate() {
            let eye_index = 2 * p + e;
            eye_seeds.push(rng.random::<u64>());
            let base = rng.random_range(0.0..2.0 * PI);
            for k in 0..cfg.images_per_eye {
                let quality = if rng.random_bool(cfg.quality_mix) {
                    Quality::Low
                } else {
                    Quality::High
                };
                let rotation =
                    base + 2.0 * PI * k as f64 / cfg.images_per_eye as f64 + rng.random_range(-0.3..0.3);
                let shift = rng.random_range(0.08..0.22);
                let dir = rng.random_range(0.0..2.0 * PI);
                let view = View {
                    rotation,
                    offset: (shift * dir.cos(), shift * dir.sin()),
                    gain: rng.random_range(0.85..1.15),
                    noise_seed: rng.random(),
                };
                let path = PathBuf::from("images").join(format!("{patient_id}_{eye}_{k}.ppm"));
                jobs.push(Job {
                    record: ImageRecord {
                        path,
                        patient_id: patient_id.clone(),
                        eye,
                        label: labels[eye_index],
                        quality,
                        split: Split::Unassigned,
                    },
                    eye_index,
                    view,
                });
            }
        }
    }

    let eyes: Vec<LatentEye> = eye_seeds
        .par_iter()
        .zip(&labels)
        .map(|(&s, &label)| LatentEye::draw(&mut ChaCha8Rng::seed_from_u64(s), label == 1))
        .collect();
    jobs.par_iter().try_for_each(|job| {
        let img = render(&eyes[job.eye_index], &job.view, job.record.quality);
        save_ppm(&img, out_dir.join(&job.record.path))
    })?;

    let mut manifest = Manifest::new(out_dir, Provenance::Synthetic);
    manifest.records = jobs.into_iter().map(|j| j.record).collect();
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
