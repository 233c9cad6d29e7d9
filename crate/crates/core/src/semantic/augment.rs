//! Training-time augmentation: voxel dropout, caption edits over a fixed
//! synonym table, and random frame crops.

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::VideoClip;

const SYNONYM_TABLE: &str = include_str!("../../assets/synonyms.tsv");

#[derive(Debug, Clone)]
pub struct AugmentationPolicy {
    pub voxel_subset_fraction: f64,
    pub voxel_zero_fraction: f64,
    pub synonym_prob: f64,
    pub insert_prob: f64,
    pub swap_prob: f64,
    pub delete_prob: f64,
    /// Fraction of the frame side kept by the random crop.
    pub crop_fraction: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            voxel_subset_fraction: 0.20,
            voxel_zero_fraction: 0.50,
            synonym_prob: 0.5,
            insert_prob: 0.2,
            swap_prob: 0.2,
            delete_prob: 0.2,
            crop_fraction: 0.875,
        }
    }
}

struct Lexicon {
    /// synonym -> canonical
    canonical: HashMap<String, String>,
    /// canonical -> synonyms
    synonyms: HashMap<String, Vec<String>>,
}

fn lexicon() -> &'static Lexicon {
    static LEX: OnceLock<Lexicon> = OnceLock::new();
    LEX.get_or_init(|| {
        let mut canonical = HashMap::new();
        let mut synonyms = HashMap::new();
        for line in SYNONYM_TABLE.lines() {
            let mut parts = line.split('\t').map(str::trim).filter(|s| !s.is_empty());
            let canon = match parts.next() {
                Some(c) => c.to_string(),
                None => continue,
            };
            let syns: Vec<String> = parts.map(|s| s.to_string()).collect();
            for s in &syns {
                canonical.insert(s.clone(), canon.clone());
            }
            canonical.insert(canon.clone(), canon.clone());
            synonyms.insert(canon, syns);
        }
        Lexicon { canonical, synonyms }
    })
}

/// Map a token to its canonical form; unknown tokens pass through lowercased.
pub fn canonical_token(token: &str) -> String {
    let lower = token.to_lowercase();
    lexicon().canonical.get(&lower).cloned().unwrap_or(lower)
}

fn synonym_of(token: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    let lex = lexicon();
    let canon = lex.canonical.get(&token.to_lowercase())?;
    let syns = lex.synonyms.get(canon)?;
    if syns.is_empty() {
        return None;
    }
    Some(syns[rng.gen_range(0..syns.len())].clone())
}

/// Synonym replacement, random insertion, random swap and random deletion,
/// each gated by its policy probability.
pub fn augment_caption(caption: &str, policy: &AugmentationPolicy, rng: &mut ChaCha8Rng) -> String {
    let mut tokens: Vec<String> = caption.split_whitespace().map(|s| s.to_string()).collect();
    if tokens.is_empty() {
        return String::new();
    }
    if rng.gen::<f64>() < policy.synonym_prob {
        let idx = rng.gen_range(0..tokens.len());
        if let Some(s) = synonym_of(&tokens[idx], rng) {
            tokens[idx] = s;
        }
    }
    if rng.gen::<f64>() < policy.insert_prob {
        let src = rng.gen_range(0..tokens.len());
        if let Some(s) = synonym_of(&tokens[src], rng) {
            let at = rng.gen_range(0..=tokens.len());
            tokens.insert(at, s);
        }
    }
    if tokens.len() >= 2 && rng.gen::<f64>() < policy.swap_prob {
        let i = rng.gen_range(0..tokens.len());
        let j = rng.gen_range(0..tokens.len());
        tokens.swap(i, j);
    }
    if tokens.len() >= 2 && rng.gen::<f64>() < policy.delete_prob {
        let idx = rng.gen_range(0..tokens.len());
        tokens.remove(idx);
    }
    tokens.join(" ")
}

/// Zero out `voxel_zero_fraction` of a random `voxel_subset_fraction` of the
/// voxels, in place.
pub fn augment_voxels(voxels: &mut [f64], policy: &AugmentationPolicy, rng: &mut ChaCha8Rng) {
    let n = voxels.len();
    let subset = ((n as f64) * policy.voxel_subset_fraction).floor() as usize;
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    for &idx in indices.iter().take(subset) {
        if rng.gen::<f64>() < policy.voxel_zero_fraction {
            voxels[idx] = 0.0;
        }
    }
}

/// Random square crop of one random frame, returned as (pixels, h, w).
pub fn random_crop_frame(
    clip: &VideoClip,
    policy: &AugmentationPolicy,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, usize, usize) {
    let j = rng.gen_range(0..clip.n_frames);
    let side = ((clip.height.min(clip.width) as f64) * policy.crop_fraction).round() as usize;
    let side = side.max(8);
    let y0 = rng.gen_range(0..=clip.height - side);
    let x0 = rng.gen_range(0..=clip.width - side);
    let mut out = vec![0.0; 3 * side * side];
    for ch in 0..3 {
        for y in 0..side {
            for x in 0..side {
                out[(ch * side + y) * side + x] =
                    clip.pixels[clip.idx(j, ch, y0 + y, x0 + x)];
            }
        }
    }
    (out, side, side)
}
