//! Procedural stand-in for the remote generator.
//!
//! Images are textured skin patches: the base tone follows the skin
//! descriptor (or the annotated skin type for fixture images) and the lesion
//! motif follows the condition. Only integer arithmetic is used so the bytes
//! are identical on every platform.

use std::io::Cursor;

use image::{ImageFormat, RgbImage};
use sha2::{Digest, Sha256};

use super::{BackendError, EditInput, GenerationBackend, Mask, PromptParts, SkinDescriptor};

pub const STUB_SIZE: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motif {
    Nodule,
    Pustules,
    Track,
    Plaque,
    ScatteredNodules,
    Scales,
    Ulcer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchStyle {
    pub base: [u8; 3],
    pub lesion: [u8; 3],
    pub motif: Motif,
}

/// Base tone for an annotated skin type.
pub fn fst_tone(fst: u8) -> [u8; 3] {
    match fst {
        1 => [245, 222, 205],
        2 => [230, 195, 170],
        3 => [205, 165, 130],
        4 => [170, 125, 90],
        5 => [125, 85, 60],
        _ => [85, 55, 40],
    }
}

pub fn descriptor_tone(descriptor: SkinDescriptor) -> [u8; 3] {
    match descriptor {
        SkinDescriptor::VeryLight => fst_tone(1),
        SkinDescriptor::Light => fst_tone(2),
        SkinDescriptor::Dark => fst_tone(5),
        SkinDescriptor::VeryDark => fst_tone(6),
    }
}

/// Lesion colour and motif for a condition label.
pub fn condition_motif(condition: &str) -> ([u8; 3], Motif) {
    match condition {
        "basal cell carcinoma" => ([232, 168, 172], Motif::Nodule),
        "folliculitis" => ([242, 228, 170], Motif::Pustules),
        "nematode infection" => ([160, 50, 60], Motif::Track),
        "neutrophilic dermatoses" => ([205, 35, 50], Motif::Plaque),
        "prurigo nodularis" => ([105, 55, 45], Motif::ScatteredNodules),
        "psoriasis" => ([200, 75, 70], Motif::Scales),
        "squamous cell carcinoma" => ([95, 40, 30], Motif::Ulcer),
        other => {
            let h = Sha256::digest(other.as_bytes());
            let motifs = [
                Motif::Nodule,
                Motif::Pustules,
                Motif::Track,
                Motif::Plaque,
                Motif::ScatteredNodules,
                Motif::Scales,
                Motif::Ulcer,
            ];
            ([h[0] | 0x80, h[1] >> 1, h[2] >> 1], motifs[h[3] as usize % motifs.len()])
        }
    }
}

pub fn key_from(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    u64::from_le_bytes(hasher.finalize()[..8].try_into().expect("8 bytes"))
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn noise(key: u64, x: u32, y: u32) -> u64 {
    mix(key ^ ((x as u64) << 32 | y as u64))
}

fn blend(a: [u8; 3], b: [u8; 3], weight_b: u32) -> [u8; 3] {
    let w = weight_b.min(256);
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = ((a[c] as u32 * (256 - w) + b[c] as u32 * w) >> 8) as u8;
    }
    out
}

fn jitter(px: [u8; 3], delta: i32) -> [u8; 3] {
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (px[c] as i32 + delta).clamp(0, 255) as u8;
    }
    out
}

/// Whether `(x, y)` lies on the motif, in lesion-centred coordinates.
fn on_motif(motif: Motif, dx: i64, dy: i64, r: i64, key: u64) -> Option<u32> {
    let d2 = dx * dx + dy * dy;
    let r2 = r * r;
    match motif {
        Motif::Nodule => (d2 <= r2 * 9 / 16).then(|| if d2 >= r2 * 6 / 16 { 150 } else { 220 }),
        Motif::Plaque => (d2 <= r2).then_some(200),
        Motif::Ulcer => {
            if d2 <= r2 / 4 {
                Some(240)
            } else if d2 <= r2 * 9 / 16 {
                Some(120)
            } else {
                None
            }
        }
        Motif::Scales => (d2 <= r2).then(|| if (dy + r).rem_euclid(10) < 4 { 90 } else { 210 }),
        Motif::Track => {
            // sinusoid approximated by a triangle wave
            if dx.abs() > r {
                return None;
            }
            let phase = (dx + r).rem_euclid(40);
            let wave = if phase < 20 { phase - 10 } else { 30 - phase };
            ((dy - wave * 2).abs() <= 4).then_some(230)
        }
        Motif::Pustules | Motif::ScatteredNodules => {
            if d2 > r2 * 2 {
                return None;
            }
            let cell = if motif == Motif::Pustules { 16 } else { 28 };
            let cx = (dx + 4 * r).div_euclid(cell);
            let cy = (dy + 4 * r).div_euclid(cell);
            let h = mix(key ^ ((cx as u64) << 20) ^ cy as u64);
            if h % 3 != 0 {
                return None;
            }
            let ox = (dx + 4 * r).rem_euclid(cell) - cell / 2;
            let oy = (dy + 4 * r).rem_euclid(cell) - cell / 2;
            let rad = if motif == Motif::Pustules { 4 } else { 8 };
            (ox * ox + oy * oy <= rad * rad).then_some(235)
        }
    }
}

/// Paint a `size`x`size` patch. The lesion is centred inside the mask's
/// editable region when a mask is given.
pub fn paint_patch(style: &PatchStyle, size: u32, mask: Option<&Mask>, key: u64) -> RgbImage {
    let (cx, cy) = match mask.and_then(|m| m.editable_centroid()) {
        Some((mx, my, mw, mh)) => (
            (mx as u64 * size as u64 / mw.max(1) as u64) as i64,
            (my as u64 * size as u64 / mh.max(1) as u64) as i64,
        ),
        None => {
            let spread = (size / 8).max(1) as u64;
            let h = mix(key);
            (
                (size / 2) as i64 + (h % spread) as i64 - spread as i64 / 2,
                (size / 2) as i64 + ((h >> 16) % spread) as i64 - spread as i64 / 2,
            )
        }
    };
    let radius = (size as i64 / 5) + (mix(key ^ 0xA5) % (size as u64 / 10).max(1)) as i64;

    RgbImage::from_fn(size, size, |x, y| {
        let coarse = (noise(key, x / 16, y / 16) % 17) as i32 - 8;
        let fine = (noise(key.rotate_left(17), x, y) % 11) as i32 - 5;
        let skin = jitter(style.base, coarse + fine);
        let (dx, dy) = (x as i64 - cx, y as i64 - cy);
        let px = match on_motif(style.motif, dx, dy, radius, key) {
            Some(weight) => jitter(blend(skin, style.lesion, weight), fine),
            None => skin,
        };
        image::Rgb(px)
    })
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("PNG encoding to memory");
    buf.into_inner()
}

/// Deterministic backend producing procedural PNG candidates.
#[derive(Debug, Clone)]
pub struct StubBackend {
    seed: u64,
    size: u32,
}

pub fn stub_backend(seed: u64) -> StubBackend {
    StubBackend {
        seed,
        size: STUB_SIZE,
    }
}

impl StubBackend {
    pub fn with_size(mut self, size: u32) -> Self {
        self.size = size;
        self
    }

    /// Candidate payload for `index`, a function of the backend seed, the
    /// seed image, the prompt, the attempt number and the index only.
    pub fn render_candidate(&self, seed_image_id: &str, prompt: &str, attempt: u32, mask: Option<&Mask>, index: u32) -> Result<Vec<u8>, BackendError> {
        let parts = PromptParts::parse(prompt).map_err(|e| BackendError::ContentRejected(e.to_string()))?;
        let (lesion, motif) = condition_motif(&parts.condition);
        let style = PatchStyle {
            base: descriptor_tone(parts.skin_descriptor),
            lesion,
            motif,
        };
        let key = key_from(&[
            &self.seed.to_le_bytes(),
            seed_image_id.as_bytes(),
            prompt.as_bytes(),
            &attempt.to_le_bytes(),
            &index.to_le_bytes(),
        ]);
        Ok(encode_png(&paint_patch(&style, self.size, mask, key)))
    }
}

impl GenerationBackend for StubBackend {
    fn name(&self) -> &str {
        "stub"
    }

    fn edit(&self, input: &EditInput<'_>) -> Result<Vec<Vec<u8>>, BackendError> {
        let req = input.request;
        (0..req.n_candidates)
            .map(|i| self.render_candidate(&req.seed_image_id, &req.prompt, req.attempt, Some(&req.mask), i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genclient::{Noun, Preposition};

    fn prompt(descriptor: SkinDescriptor) -> String {
        PromptParts::new("psoriasis", "arm", descriptor, Noun::Man, Preposition::OnThe)
            .render()
            .unwrap()
    }

    fn mean_luma(png: &[u8]) -> f64 {
        let img = image::load_from_memory(png).unwrap().to_rgb8();
        let sum: f64 = img
            .pixels()
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .sum();
        sum / (img.width() * img.height()) as f64
    }

    #[test]
    fn same_inputs_same_bytes() {
        let b = stub_backend(9);
        let p = prompt(SkinDescriptor::Dark);
        let a = b.render_candidate("seed1", &p, 0, None, 0).unwrap();
        let c = b.render_candidate("seed1", &p, 0, None, 0).unwrap();
        assert_eq!(a, c);
        let d = b.render_candidate("seed1", &p, 0, None, 1).unwrap();
        assert_ne!(a, d);
        let img = image::load_from_memory(&a).unwrap();
        assert_eq!((img.width(), img.height()), (256, 256));
        assert!(matches!(img, image::DynamicImage::ImageRgb8(_)));
    }

    #[test]
    fn descriptor_drives_luminance() {
        let b = stub_backend(1);
        let lumas: Vec<f64> = [
            SkinDescriptor::VeryLight,
            SkinDescriptor::Light,
            SkinDescriptor::Dark,
            SkinDescriptor::VeryDark,
        ]
        .into_iter()
        .map(|d| mean_luma(&b.render_candidate("s", &prompt(d), 0, None, 0).unwrap()))
        .collect();
        for w in lumas.windows(2) {
            assert!(w[0] - w[1] > 15.0, "luminance should drop with darker descriptors: {lumas:?}");
        }
    }

    #[test]
    fn every_known_condition_has_distinct_motif() {
        let motifs: std::collections::HashSet<_> = crate::DEFAULT_CONDITIONS
            .iter()
            .map(|c| format!("{:?}", condition_motif(c)))
            .collect();
        assert_eq!(motifs.len(), 7);
    }
}
