//! Pluggable embedding and tokenization backends.
//!
//! The toy defaults are deterministic and self-consistent: captions and clips
//! of the same synthetic scene embed to (nearly) the same unit vector, the
//! frame tokenizer is an orthogonal projection whose decode exactly inverts
//! encode on block-constant content, and the text conditioner is a fixed
//! hash-derived tensor. Real CLIP/VAE adapters can be registered behind the
//! same traits; nothing in the pipeline or the test suite needs them.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::synthetic::{PALETTE, SHAPES};
use crate::dataio::VideoClip;
use crate::error::{CoreError, Result};
use crate::nn::subseed;
use crate::tensor::{cosine, normalize, Mat};

pub const EMBED_DIM: usize = 512;
pub const CONDITION_ROWS: usize = 20;
pub const CONDITION_COLS: usize = 768;

/// Text / image / video embedder into a shared unit-norm space.
pub trait EmbeddingBackend: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Vec<f64>;
    /// `frame` is 3 x h x w in [0,1].
    fn embed_frame(&self, frame: &[f64], h: usize, w: usize) -> Vec<f64>;

    /// Mean of per-frame embeddings, renormalized.
    fn embed_video(&self, clip: &VideoClip) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for j in 0..clip.n_frames {
            let e = self.embed_frame(clip.frame(j), clip.height, clip.width);
            for (a, b) in acc.iter_mut().zip(e.iter()) {
                *a += b;
            }
        }
        for a in acc.iter_mut() {
            *a /= clip.n_frames as f64;
        }
        normalize(&mut acc);
        acc
    }
}

/// Frame tokenizer: pixels -> per-frame latents -> flat tokens and back.
pub trait FrameTokenizer: Send + Sync {
    fn name(&self) -> &str;
    /// Spatial reduction factor (latent plane is h/factor x w/factor).
    fn factor(&self) -> usize;
    fn token_dim(&self) -> usize;

    /// 3 x h x w pixels -> 3 x (h/8) x (w/8) latent, flattened row-major.
    fn encode_frame(&self, frame: &[f64], h: usize, w: usize) -> Result<Vec<f64>>;
    /// Inverse of `encode_frame` on its range.
    fn decode_frame(&self, latent: &[f64], h: usize, w: usize) -> Result<Vec<f64>>;

    /// Latent -> P tokens of `token_dim` values.
    fn tokenize(&self, latent: &[f64]) -> Result<Vec<Vec<f64>>>;
    fn detokenize(&self, tokens: &[Vec<f64>]) -> Result<Vec<f64>>;

    fn latent_len(&self, h: usize, w: usize) -> usize {
        3 * (h / self.factor()) * (w / self.factor())
    }

    fn tokens_per_frame(&self, h: usize, w: usize) -> usize {
        self.latent_len(h, w) / self.token_dim()
    }

    fn encode_clip(&self, clip: &VideoClip) -> Result<Vec<Vec<f64>>> {
        (0..clip.n_frames)
            .map(|j| self.encode_frame(clip.frame(j), clip.height, clip.width))
            .collect()
    }
}

/// Generator text-conditioning block (fixed 20 x 768 tensor).
pub trait TextConditioner: Send + Sync {
    fn name(&self) -> &str;
    fn condition(&self, text: &str) -> Mat;
}

// ---------------------------------------------------------------------------
// Toy embedder
// ---------------------------------------------------------------------------

/// Hash-seeded random unit vector for a concept key. Identical keys map to
/// identical vectors in every process.
fn concept_vector(key: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(0x6d6b_636f_6e63, key));
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
    normalize(&mut v);
    v
}

/// Scene content recovered from pixels alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameDescriptor {
    pub color: &'static str,
    pub shape: &'static str,
}

/// Classify the dominant colored region of a frame. Returns None for frames
/// without any lit pixels.
pub fn describe_frame(frame: &[f64], h: usize, w: usize) -> Option<FrameDescriptor> {
    let mut max_lum: f64 = 0.0;
    for y in 0..h {
        for x in 0..w {
            let lum: f64 = (0..3).map(|ch| frame[(ch * h + y) * w + x]).sum();
            max_lum = max_lum.max(lum);
        }
    }
    if max_lum < 0.05 {
        return None;
    }
    // Solid interior: pixels close to full coverage.
    let thresh = max_lum * 0.6;
    let mut mean_rgb = [0.0; 3];
    let mut min_x = w;
    let mut max_x = 0;
    let mut min_y = h;
    let mut max_y = 0;
    let mut area = 0.0;
    let mut cy = 0.0;
    for y in 0..h {
        for x in 0..w {
            let lum: f64 = (0..3).map(|ch| frame[(ch * h + y) * w + x]).sum();
            if lum >= thresh {
                for (ch, m) in mean_rgb.iter_mut().enumerate() {
                    *m += frame[(ch * h + y) * w + x];
                }
                area += 1.0;
                cy += y as f64;
                min_x = min_x.min(x);
                max_x = max_x.max(x);
                min_y = min_y.min(y);
                max_y = max_y.max(y);
            }
        }
    }
    if area == 0.0 {
        return None;
    }
    for m in mean_rgb.iter_mut() {
        *m /= area;
    }
    // Coverage scaling cancels under direction matching, so compare color
    // directions rather than magnitudes.
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, (_, rgb)) in PALETTE.iter().enumerate() {
        let sim = cosine(&mean_rgb, rgb);
        if sim > best_sim {
            best_sim = sim;
            best = i;
        }
    }

    let bw = (max_x - min_x + 1) as f64;
    let bh = (max_y - min_y + 1) as f64;
    let fill = area / (bw * bh);
    let mid_y = (min_y as f64 + max_y as f64) / 2.0;
    let centroid_y = cy / area;
    let asym = (centroid_y - mid_y).abs() / bh;
    let shape = if fill > 0.9 {
        "square"
    } else if asym > 0.08 {
        "triangle"
    } else if fill > 0.66 {
        "circle"
    } else {
        "cross"
    };
    Some(FrameDescriptor { color: PALETTE[best].0, shape })
}

/// Deterministic CLIP stand-in. Frames embed as the hash vector of their
/// recovered (color, shape) class plus a small content-keyed jitter; captions
/// embed as the hash vector of the classes their concept words name. Matched
/// clip/caption pairs therefore land within cosine 0.99 by construction.
pub struct ToyEmbedder {
    dim: usize,
    jitter: f64,
}

impl ToyEmbedder {
    pub fn new() -> Self {
        ToyEmbedder { dim: EMBED_DIM, jitter: 0.1 }
    }

    fn class_vector(&self, color: &str, shape: &str) -> Vec<f64> {
        concept_vector(&format!("class:{color}:{shape}"), self.dim)
    }

    /// Content-keyed pseudo-noise: stable for identical pixels, effectively
    /// random across distinct frames.
    fn content_jitter(&self, frame: &[f64]) -> Vec<f64> {
        let mut h: u64 = 0xcbf29ce484222325;
        for &p in frame {
            let q = (p * 255.0).round() as u8;
            h ^= q as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
        normalize(&mut v);
        v
    }

    /// Canonicalize a token through the synonym table.
    fn canonical(token: &str) -> String {
        let t = token.trim_matches(|c: char| !c.is_alphanumeric() && c != '-');
        crate::semantic::augment::canonical_token(t)
    }
}

impl Default for ToyEmbedder {
    fn default() -> Self {
        Self::new()
    }
}

impl EmbeddingBackend for ToyEmbedder {
    fn name(&self) -> &str {
        "toy"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Vec<f64> {
        let tokens: Vec<String> = text
            .split_whitespace()
            .map(Self::canonical)
            .filter(|t| !t.is_empty())
            .collect();
        let colors: Vec<&str> = tokens
            .iter()
            .filter_map(|t| PALETTE.iter().find(|(c, _)| c == t).map(|(c, _)| *c))
            .collect();
        let shapes: Vec<&str> = tokens
            .iter()
            .filter_map(|t| SHAPES.iter().find(|s| *s == t).copied())
            .collect();
        let mut acc = vec![0.0; self.dim];
        let pairs = colors.len().min(shapes.len());
        if pairs > 0 {
            for i in 0..pairs {
                let cv = self.class_vector(colors[i], shapes[i]);
                for (a, b) in acc.iter_mut().zip(cv.iter()) {
                    *a += b;
                }
            }
        } else if !colors.is_empty() {
            // Shape word missing: marginal mixture over shapes.
            for color in &colors {
                for shape in SHAPES {
                    let cv = self.class_vector(color, shape);
                    for (a, b) in acc.iter_mut().zip(cv.iter()) {
                        *a += b;
                    }
                }
            }
        } else if !shapes.is_empty() {
            // Color word missing: marginal mixture over the palette.
            for shape in &shapes {
                for (color, _) in PALETTE {
                    let cv = self.class_vector(color, shape);
                    for (a, b) in acc.iter_mut().zip(cv.iter()) {
                        *a += b;
                    }
                }
            }
        } else {
            // Bag of tokens for captions outside the synthetic vocabulary.
            for t in &tokens {
                let cv = concept_vector(&format!("tok:{t}"), self.dim);
                for (a, b) in acc.iter_mut().zip(cv.iter()) {
                    *a += b;
                }
            }
        }
        if acc.iter().all(|&v| v == 0.0) {
            acc = concept_vector("tok:<empty>", self.dim);
        }
        normalize(&mut acc);
        acc
    }

    fn embed_frame(&self, frame: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut acc = match describe_frame(frame, h, w) {
            Some(d) => self.class_vector(d.color, d.shape),
            None => concept_vector("class:<blank>", self.dim),
        };
        let jit = self.content_jitter(frame);
        for (a, b) in acc.iter_mut().zip(jit.iter()) {
            *a += self.jitter * b;
        }
        normalize(&mut acc);
        acc
    }
}

// ---------------------------------------------------------------------------
// Toy tokenizer
// ---------------------------------------------------------------------------

/// Orthogonal block-DC tokenizer at spatial factor 8. Each latent value is
/// the normalized DC coefficient of one 8x8 block; decode spreads it back.
/// On block-constant frames decode inverts encode exactly.
pub struct ToyTokenizer {
    patch_size: usize,
}

impl ToyTokenizer {
    pub fn new() -> Self {
        ToyTokenizer { patch_size: 64 }
    }

    pub fn with_patch_size(patch_size: usize) -> Self {
        ToyTokenizer { patch_size }
    }

    fn check_dims(&self, h: usize, w: usize) -> Result<()> {
        if h % 8 != 0 || w % 8 != 0 {
            return Err(CoreError::invalid(format!(
                "frame {h}x{w} not divisible by the spatial factor 8"
            )));
        }
        let latent = 3 * (h / 8) * (w / 8);
        if latent % self.patch_size != 0 {
            return Err(CoreError::invalid(format!(
                "latent length {latent} not divisible by patch size {}",
                self.patch_size
            )));
        }
        Ok(())
    }
}

impl Default for ToyTokenizer {
    fn default() -> Self {
        Self::new()
    }
}

impl FrameTokenizer for ToyTokenizer {
    fn name(&self) -> &str {
        "toy"
    }

    fn factor(&self) -> usize {
        8
    }

    fn token_dim(&self) -> usize {
        self.patch_size
    }

    fn encode_frame(&self, frame: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
        self.check_dims(h, w)?;
        let (lh, lw) = (h / 8, w / 8);
        let mut latent = vec![0.0; 3 * lh * lw];
        for ch in 0..3 {
            for by in 0..lh {
                for bx in 0..lw {
                    let mut acc = 0.0;
                    for y in by * 8..(by + 1) * 8 {
                        for x in bx * 8..(bx + 1) * 8 {
                            acc += frame[(ch * h + y) * w + x];
                        }
                    }
                    // L2-normalized DC basis: coefficient = sum / 8.
                    latent[(ch * lh + by) * lw + bx] = acc / 8.0;
                }
            }
        }
        Ok(latent)
    }

    fn decode_frame(&self, latent: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
        self.check_dims(h, w)?;
        let (lh, lw) = (h / 8, w / 8);
        if latent.len() != 3 * lh * lw {
            return Err(CoreError::shape(
                "decode_frame latent",
                (3 * lh * lw).to_string(),
                latent.len().to_string(),
            ));
        }
        let mut frame = vec![0.0; 3 * h * w];
        for ch in 0..3 {
            for by in 0..lh {
                for bx in 0..lw {
                    let v = latent[(ch * lh + by) * lw + bx] / 8.0;
                    for y in by * 8..(by + 1) * 8 {
                        for x in bx * 8..(bx + 1) * 8 {
                            frame[(ch * h + y) * w + x] = v;
                        }
                    }
                }
            }
        }
        Ok(frame)
    }

    fn tokenize(&self, latent: &[f64]) -> Result<Vec<Vec<f64>>> {
        if latent.len() % self.patch_size != 0 {
            return Err(CoreError::invalid(format!(
                "latent length {} not divisible by patch size {}",
                latent.len(),
                self.patch_size
            )));
        }
        Ok(latent.chunks(self.patch_size).map(|c| c.to_vec()).collect())
    }

    fn detokenize(&self, tokens: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(tokens.len() * self.patch_size);
        for t in tokens {
            if t.len() != self.patch_size {
                return Err(CoreError::shape(
                    "detokenize token",
                    self.patch_size.to_string(),
                    t.len().to_string(),
                ));
            }
            out.extend_from_slice(t);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Toy conditioner
// ---------------------------------------------------------------------------

/// Fixed-shape deterministic text condition: row i is the hash vector of the
/// i-th token, zero rows past the caption length.
pub struct ToyConditioner;

impl TextConditioner for ToyConditioner {
    fn name(&self) -> &str {
        "toy"
    }

    fn condition(&self, text: &str) -> Mat {
        let mut out = Mat::zeros(CONDITION_ROWS, CONDITION_COLS);
        for (i, token) in text.split_whitespace().take(CONDITION_ROWS).enumerate() {
            let canon = crate::semantic::augment::canonical_token(
                token.trim_matches(|c: char| !c.is_alphanumeric() && c != '-'),
            );
            let v = concept_vector(&format!("cond:{canon}"), CONDITION_COLS);
            out.row_mut(i).copy_from_slice(&v);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

pub fn embedder(name: &str) -> Result<Arc<dyn EmbeddingBackend>> {
    match name {
        "toy" => Ok(Arc::new(ToyEmbedder::new())),
        _ => Err(CoreError::UnknownBackend {
            kind: "embedder".into(),
            name: name.into(),
            known: "toy".into(),
        }),
    }
}

pub fn tokenizer(name: &str) -> Result<Arc<dyn FrameTokenizer>> {
    match name {
        "toy" => Ok(Arc::new(ToyTokenizer::new())),
        _ => Err(CoreError::UnknownBackend {
            kind: "tokenizer".into(),
            name: name.into(),
            known: "toy".into(),
        }),
    }
}

pub fn conditioner(name: &str) -> Result<Arc<dyn TextConditioner>> {
    match name {
        "toy" => Ok(Arc::new(ToyConditioner)),
        _ => Err(CoreError::UnknownBackend {
            kind: "conditioner".into(),
            name: name.into(),
            known: "toy".into(),
        }),
    }
}
