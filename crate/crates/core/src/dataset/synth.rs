//! Synthetic labeled videos. Both classes render the same sprites on the
//! same background; only the motion differs. Calm sprites drift in straight
//! lines at constant slow velocity, agitated sprites jitter under
//! high-variance random accelerations and flash white where they touch, so a
//! model must read the temporal signal to tell them apart.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, DatasetManifest};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use crate::video::{ppm, VideoMeta};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionClass {
    Calm,
    Agitated,
}

impl MotionClass {
    pub fn label(self) -> &'static str {
        match self {
            MotionClass::Calm => "calm",
            MotionClass::Agitated => "agitated",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub class_kind: MotionClass,
    pub n_frames: usize,
    pub fps: f64,
    pub side: usize,
    pub seed: u64,
    pub sprite_count: usize,
}

const BACKGROUND: f32 = 0.08;
const CALM_SPEED: (f64, f64) = (0.3, 0.8);
const JITTER_ACCEL: f64 = 2.0;
const JITTER_MAX_SPEED: f64 = 6.0;

fn sprite_radius(side: usize) -> usize {
    (side / 12).clamp(1, 4)
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 || self.sprite_count == 0 || !(self.fps > 0.0) {
            return Err(Error::InvalidArgument(
                "synth: n_frames, sprite_count and fps must be positive".into(),
            ));
        }
        let r = sprite_radius(self.side);
        let footprint = (2 * r + 1) * (2 * r + 1);
        if self.side < 4 * (2 * r + 1) || self.side * self.side < 3 * footprint * self.sprite_count
        {
            return Err(Error::InvalidArgument(format!(
                "synth: side {} too small for {} sprites",
                self.side, self.sprite_count
            )));
        }
        Ok(())
    }
}

struct Sprite {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    color: [f32; 3],
}

/// Render the video in memory. Returns one `[3,S,S]` tensor per frame.
pub fn generate_frames(spec: &SynthSpec) -> Result<Vec<Tensor<f32>>> {
    Ok(generate_frames_traced(spec)?.0)
}

/// As [`generate_frames`], also returning per-frame sprite centers (used to
/// verify motion statistics without decoding pixels).
pub fn generate_frames_traced(spec: &SynthSpec) -> Result<(Vec<Tensor<f32>>, Vec<Vec<(f64, f64)>>)> {
    spec.validate()?;
    let mut r = rng::chacha(rng::mix_tag(spec.seed, "synth"));
    let s = spec.side as f64;
    let radius = sprite_radius(spec.side);

    let mut sprites: Vec<Sprite> = (0..spec.sprite_count)
        .map(|_| {
            let speed = r.gen_range(CALM_SPEED.0..CALM_SPEED.1);
            let angle = r.gen_range(0.0..std::f64::consts::TAU);
            Sprite {
                x: r.gen_range(0.0..s),
                y: r.gen_range(0.0..s),
                vx: speed * angle.cos(),
                vy: speed * angle.sin(),
                color: [
                    r.gen_range(0.4..1.0f64) as f32,
                    r.gen_range(0.4..1.0f64) as f32,
                    r.gen_range(0.4..1.0f64) as f32,
                ],
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut trace = Vec::with_capacity(spec.n_frames);
    for _ in 0..spec.n_frames {
        if spec.class_kind == MotionClass::Agitated {
            for sp in &mut sprites {
                sp.vx = (sp.vx + r.gen_range(-JITTER_ACCEL..JITTER_ACCEL))
                    .clamp(-JITTER_MAX_SPEED, JITTER_MAX_SPEED);
                sp.vy = (sp.vy + r.gen_range(-JITTER_ACCEL..JITTER_ACCEL))
                    .clamp(-JITTER_MAX_SPEED, JITTER_MAX_SPEED);
            }
        }
        for sp in &mut sprites {
            sp.x = (sp.x + sp.vx).rem_euclid(s);
            sp.y = (sp.y + sp.vy).rem_euclid(s);
        }

        let mut frame = Tensor::filled(&[3, spec.side, spec.side], BACKGROUND);
        for sp in &sprites {
            draw_square(&mut frame, sp.x, sp.y, radius, sp.color, spec.side);
        }
        if spec.class_kind == MotionClass::Agitated {
            // White burst wherever two sprites touch this frame.
            let contact = (2 * radius + 2) as f64;
            for i in 0..sprites.len() {
                for j in i + 1..sprites.len() {
                    let (a, b) = (&sprites[i], &sprites[j]);
                    let (dx, dy) = (a.x - b.x, a.y - b.y);
                    if (dx * dx + dy * dy).sqrt() < contact {
                        draw_square(
                            &mut frame,
                            (a.x + b.x) / 2.0,
                            (a.y + b.y) / 2.0,
                            radius + 1,
                            [1.0, 1.0, 1.0],
                            spec.side,
                        );
                    }
                }
            }
        }
        trace.push(sprites.iter().map(|sp| (sp.x, sp.y)).collect());
        frames.push(frame);
    }
    Ok((frames, trace))
}

/// Filled square with toroidal wrapping.
fn draw_square(frame: &mut Tensor<f32>, cx: f64, cy: f64, radius: usize, color: [f32; 3], side: usize) {
    let plane = side * side;
    let (cx, cy) = (cx.round() as i64, cy.round() as i64);
    let r = radius as i64;
    let data = frame.data_mut();
    for dy in -r..=r {
        let y = (cy + dy).rem_euclid(side as i64) as usize;
        for dx in -r..=r {
            let x = (cx + dx).rem_euclid(side as i64) as usize;
            for (c, v) in color.iter().enumerate() {
                data[c * plane + y * side + x] = *v;
            }
        }
    }
}

/// Render and persist one video directory (frames + meta.json).
pub fn generate_synthetic_video(spec: &SynthSpec, dir: &Path, id: &str) -> Result<VideoMeta> {
    let frames = generate_frames(spec)?;
    let meta = VideoMeta {
        id: id.to_string(),
        fps: spec.fps,
        n_frames: spec.n_frames,
        label: spec.class_kind.label().to_string(),
        source_path: dir.to_string_lossy().into_owned(),
    };
    ppm::write_video(dir, &frames, &meta)?;
    Ok(meta)
}

/// Generate `calm + agitated` videos under `root` and write
/// `root/manifest.jsonl`. Per-video seeds derive from `base.seed`.
pub fn generate_dataset(
    root: &Path,
    base: &SynthSpec,
    calm: usize,
    agitated: usize,
) -> Result<DatasetManifest> {
    if calm == 0 || agitated == 0 {
        return Err(Error::InvalidArgument("generate_dataset: both classes need videos".into()));
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut records = Vec::new();
    for (class, count) in [(MotionClass::Calm, calm), (MotionClass::Agitated, agitated)] {
        for i in 0..count {
            let id = format!("{}_{i:04}", class.label());
            let spec = SynthSpec {
                class_kind: class,
                seed: rng::mix(&[base.seed, rng::mix_tag(0, class.label()), i as u64]),
                ..base.clone()
            };
            records.push(generate_synthetic_video(&spec, &root.join(&id), &id)?);
        }
    }
    let manifest = DatasetManifest::from_records(records)?;
    write_manifest(&root.join("manifest.jsonl"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(class: MotionClass, seed: u64) -> SynthSpec {
        SynthSpec {
            class_kind: class,
            n_frames: 20,
            fps: 16.0,
            side: 24,
            seed,
            sprite_count: 3,
        }
    }

    #[test]
    fn regeneration_is_bitwise_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let s = spec(MotionClass::Agitated, 99);
        generate_synthetic_video(&s, &tmp.path().join("a"), "a").unwrap();
        generate_synthetic_video(&s, &tmp.path().join("b"), "b").unwrap();
        for i in 0..s.n_frames {
            let a = std::fs::read(ppm::frame_path(&tmp.path().join("a"), i)).unwrap();
            let b = std::fs::read(ppm::frame_path(&tmp.path().join("b"), i)).unwrap();
            assert_eq!(a, b, "frame {i}");
        }
    }

    #[test]
    fn calm_displacement_is_constant() {
        let (_, trace) = generate_frames_traced(&spec(MotionClass::Calm, 5)).unwrap();
        let s = 24.0f64;
        for sprite in 0..3 {
            let wrap = |d: f64| {
                // displacement on the torus
                let mut d = d.rem_euclid(s);
                if d > s / 2.0 {
                    d -= s;
                }
                d
            };
            let dx0 = wrap(trace[1][sprite].0 - trace[0][sprite].0);
            let dy0 = wrap(trace[1][sprite].1 - trace[0][sprite].1);
            for t in 1..trace.len() - 1 {
                let dx = wrap(trace[t + 1][sprite].0 - trace[t][sprite].0);
                let dy = wrap(trace[t + 1][sprite].1 - trace[t][sprite].1);
                assert!((dx - dx0).abs() < 1e-9 && (dy - dy0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn agitated_has_at_least_twice_the_motion_energy() {
        // Pixel-diff oracle: mean absolute inter-frame difference, averaged
        // over 100 seeded videos per class.
        let energy = |class: MotionClass, seed: u64| -> f64 {
            let frames = generate_frames(&spec(class, seed)).unwrap();
            let mut total = 0.0;
            let mut count = 0usize;
            for pair in frames.windows(2) {
                for (a, b) in pair[0].data().iter().zip(pair[1].data()) {
                    total += (a - b).abs() as f64;
                    count += 1;
                }
            }
            total / count as f64
        };
        let calm: f64 = (0..100).map(|i| energy(MotionClass::Calm, i)).sum::<f64>() / 100.0;
        let agitated: f64 =
            (0..100).map(|i| energy(MotionClass::Agitated, i)).sum::<f64>() / 100.0;
        assert!(
            agitated > 2.0 * calm,
            "agitated {agitated:.5} vs calm {calm:.5}"
        );
    }

    #[test]
    fn too_small_side_is_rejected() {
        let mut s = spec(MotionClass::Calm, 0);
        s.side = 8;
        s.sprite_count = 10;
        assert!(generate_frames(&s).is_err());
    }

    #[test]
    fn dataset_layout_and_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let base = spec(MotionClass::Calm, 42);
        let manifest = generate_dataset(tmp.path(), &base, 3, 2).unwrap();
        assert_eq!(manifest.records.len(), 5);
        assert_eq!(manifest.classes, vec!["agitated", "calm"]);
        let reread =
            super::super::manifest::ingest_manifest(&tmp.path().join("manifest.jsonl")).unwrap();
        assert_eq!(reread.records.len(), 5);
    }
}
