//! Feature-to-video stage: turns motion tokens plus a text condition into
//! pixel frames through a pluggable frame generator. The toy backend is the
//! exact tokenizer inverse, so generation-stage error is zero on in-range
//! content and nothing here ever consults an external video prior. The
//! attention-inflation rule used by real diffusion adapters ships as a
//! standalone, testable utility.

use std::sync::Arc;

use crate::dataio::VideoClip;
use crate::encoders::FrameTokenizer;
use crate::error::{CoreError, Result};
use crate::tensor::{matmul, Mat};

/// Everything the generation stage needs for one clip.
pub struct GenerationRequest {
    /// 20 x 768 text condition from the semantic decoder.
    pub condition: Mat,
    /// Motion tokens for every frame, first frame included.
    pub motion_tokens: Vec<Vec<Vec<f64>>>,
    /// Diffusion smoothing schedule carried through for real adapters
    /// (ignored by the toy backend).
    pub smoothing_steps: usize,
    pub inversion_steps: usize,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn new(condition: Mat, motion_tokens: Vec<Vec<Vec<f64>>>, seed: u64) -> Self {
        GenerationRequest {
            condition,
            motion_tokens,
            smoothing_steps: 250,
            inversion_steps: 50,
            seed,
        }
    }
}

/// Per-frame latent-to-pixels backend.
pub trait FrameGeneratorBackend: Send + Sync {
    fn name(&self) -> &str;
    /// Generate one frame from its latent; must be deterministic per seed
    /// and emit pixels in [0,1].
    fn generate_frame(
        &self,
        latent: &[f64],
        condition: &Mat,
        frame_index: usize,
        seed: u64,
    ) -> Result<Vec<f64>>;
}

/// Exact inversion backend: detokenized latents go straight through the
/// tokenizer decoder. Stateless across frames.
pub struct ToyFrameGenerator {
    tokenizer: Arc<dyn FrameTokenizer>,
    height: usize,
    width: usize,
}

impl ToyFrameGenerator {
    pub fn new(tokenizer: Arc<dyn FrameTokenizer>, height: usize, width: usize) -> Self {
        ToyFrameGenerator { tokenizer, height, width }
    }
}

impl FrameGeneratorBackend for ToyFrameGenerator {
    fn name(&self) -> &str {
        "toy"
    }

    fn generate_frame(
        &self,
        latent: &[f64],
        _condition: &Mat,
        _frame_index: usize,
        _seed: u64,
    ) -> Result<Vec<f64>> {
        let mut frame = self.tokenizer.decode_frame(latent, self.height, self.width)?;
        for p in frame.iter_mut() {
            *p = p.clamp(0.0, 1.0);
        }
        Ok(frame)
    }
}

pub fn frame_generator(
    name: &str,
    tokenizer: Arc<dyn FrameTokenizer>,
    height: usize,
    width: usize,
) -> Result<Arc<dyn FrameGeneratorBackend>> {
    match name {
        "toy" => Ok(Arc::new(ToyFrameGenerator::new(tokenizer, height, width))),
        _ => Err(CoreError::UnknownBackend {
            kind: "generator".into(),
            name: name.into(),
            known: "toy".into(),
        }),
    }
}

/// Reconstruct a clip from motion tokens: detokenize each frame, then run
/// the per-frame backend over the flattened frame axis (the batch-by-frame
/// reshape; batch is 1 at inference). No frame sees any other frame.
pub fn reconstruct_video(
    request: &GenerationRequest,
    backend: &dyn FrameGeneratorBackend,
    tokenizer: &dyn FrameTokenizer,
    height: usize,
    width: usize,
    sample_id: usize,
) -> Result<VideoClip> {
    if request.motion_tokens.is_empty() {
        return Err(CoreError::invalid("reconstruct_video: no motion tokens"));
    }
    let n = request.motion_tokens.len();
    let mut clip = VideoClip::new(sample_id, n, height, width);
    for (j, frame_tokens) in request.motion_tokens.iter().enumerate() {
        let latent = tokenizer.detokenize(frame_tokens)?;
        let frame = backend
            .generate_frame(&latent, &request.condition, j, request.seed)
            .map_err(|e| CoreError::invalid(format!("frame {j}: {e}")))?;
        if frame.len() != 3 * height * width {
            return Err(CoreError::shape(
                format!("generated frame {j}"),
                (3 * height * width).to_string(),
                frame.len().to_string(),
            ));
        }
        clip.frame_mut(j).copy_from_slice(&frame);
    }
    Ok(clip)
}

/// Key/value context of the network-inflation rule: queries over frame i,
/// keys and values over the concatenation of the first frame and the
/// previous frame (the first frame doubles as its own predecessor).
pub fn inflate_attention_kv(z_frames: &[Mat], i: usize) -> Result<(Mat, Mat)> {
    if z_frames.is_empty() {
        return Err(CoreError::invalid("inflate_attention_kv: empty frame list"));
    }
    if i >= z_frames.len() {
        return Err(CoreError::invalid(format!(
            "inflate_attention_kv: frame {i} out of range 0..{}",
            z_frames.len()
        )));
    }
    let prev = if i == 0 { 0 } else { i - 1 };
    let q = z_frames[i].clone();
    let first = &z_frames[0];
    let previous = &z_frames[prev];
    let mut kv = Mat::zeros(first.rows + previous.rows, first.cols);
    kv.data[..first.len()].copy_from_slice(&first.data);
    kv.data[first.len()..].copy_from_slice(&previous.data);
    Ok((q, kv))
}

/// Single-head softmax(Q K^T / sqrt(d)) V, evaluated directly. Exercised by
/// the inflation tests and available to real diffusion adapters.
pub fn plain_attention(q: &Mat, k: &Mat, v: &Mat) -> Mat {
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut scores = matmul(q, false, k, true);
    for r in 0..scores.rows {
        let row = scores.row_mut(r);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for s in row.iter_mut() {
            *s = ((*s - mx) * scale).exp();
            denom += *s;
        }
        for s in row.iter_mut() {
            *s /= denom;
        }
    }
    matmul(&scores, false, v, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synthetic::{generate_in_memory, SyntheticConfig};
    use crate::encoders::{FrameTokenizer, ToyTokenizer, CONDITION_COLS, CONDITION_ROWS};

    fn block_cfg() -> SyntheticConfig {
        SyntheticConfig {
            n_train: 4,
            n_test: 2,
            n_voxels: 16,
            frame_size: 128,
            block_aligned: true,
            seed: 13,
            ..Default::default()
        }
    }

    fn clip_tokens(tok: &ToyTokenizer, clip: &crate::dataio::VideoClip) -> Vec<Vec<Vec<f64>>> {
        (0..clip.n_frames)
            .map(|j| {
                let latent = tok.encode_frame(clip.frame(j), clip.height, clip.width).unwrap();
                tok.tokenize(&latent).unwrap()
            })
            .collect()
    }

    #[test]
    fn ground_truth_tokens_reproduce_the_clip_exactly() {
        let tok = ToyTokenizer::new();
        let (_, split, _) = generate_in_memory(&block_cfg());
        let clip = &split.clips[0];
        let tokens = clip_tokens(&tok, clip);
        let backend =
            ToyFrameGenerator::new(Arc::new(ToyTokenizer::new()), clip.height, clip.width);
        let request =
            GenerationRequest::new(Mat::zeros(CONDITION_ROWS, CONDITION_COLS), tokens, 0);
        let recon =
            reconstruct_video(&request, &backend, &tok, clip.height, clip.width, 0).unwrap();
        assert_eq!(recon.n_frames, clip.n_frames, "frame count must be preserved");
        let max_err = recon
            .pixels
            .iter()
            .zip(clip.pixels.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-5, "noise-ceiling reconstruction off by {max_err}");
    }

    #[test]
    fn frame_outputs_are_order_independent() {
        let tok = ToyTokenizer::new();
        let (_, split, _) = generate_in_memory(&block_cfg());
        let clip = &split.clips[1];
        let tokens = clip_tokens(&tok, clip);
        let backend =
            ToyFrameGenerator::new(Arc::new(ToyTokenizer::new()), clip.height, clip.width);
        let cond = Mat::zeros(CONDITION_ROWS, CONDITION_COLS);
        let request = GenerationRequest::new(cond.clone(), tokens.clone(), 3);
        let ordered =
            reconstruct_video(&request, &backend, &tok, clip.height, clip.width, 0).unwrap();
        // Re-generate frames in shuffled order; each must match bit for bit.
        for &j in &[5usize, 0, 7, 2] {
            let latent = tok.detokenize(&tokens[j]).unwrap();
            let frame = backend.generate_frame(&latent, &cond, j, 3).unwrap();
            assert_eq!(frame, ordered.frame(j).to_vec(), "frame {j} depends on order");
        }
    }

    #[test]
    fn inflation_rule_contexts() {
        let z0 = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let z1 = Mat::from_vec(2, 3, vec![0.5, 0.4, 0.3, 0.2, 0.1, 0.0]);
        let z2 = Mat::from_vec(2, 3, vec![9.0, 8.0, 7.0, 6.0, 5.0, 4.0]);
        let frames = vec![z0.clone(), z1.clone(), z2];

        let (_, kv0) = inflate_attention_kv(&frames, 0).unwrap();
        assert_eq!(kv0.rows, 2 * z0.rows, "context is twice the per-frame token count");
        assert_eq!(&kv0.data[..6], &z0.data[..]);
        assert_eq!(&kv0.data[6..], &z0.data[..], "i=0 duplicates the first frame");

        let (q2, kv2) = inflate_attention_kv(&frames, 2).unwrap();
        assert_eq!(q2.data, frames[2].data);
        assert_eq!(&kv2.data[..6], &z0.data[..]);
        assert_eq!(&kv2.data[6..], &z1.data[..]);

        assert!(inflate_attention_kv(&[], 0).is_err());
    }

    #[test]
    fn identical_frames_reduce_inflated_attention_to_self_attention() {
        let z = Mat::from_vec(
            3,
            4,
            vec![0.1, -0.2, 0.3, 0.4, 0.9, 0.0, -0.5, 0.2, 0.3, 0.3, 0.1, -0.1],
        );
        let frames = vec![z.clone(), z.clone(), z.clone()];
        let (q, kv) = inflate_attention_kv(&frames, 1).unwrap();
        let inflated = plain_attention(&q, &kv, &kv);
        let plain = plain_attention(&z, &z, &z);
        for (a, b) in inflated.data.iter().zip(plain.data.iter()) {
            assert!((a - b).abs() < 1e-12, "duplicated keys changed the output");
        }
    }
}
