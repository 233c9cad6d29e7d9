//! CMG forward pass: token embedding with mask-token substitution and
//! positional encodings, then per layer a temporal slot, a spatial slot and
//! the FFN(LN(z) + z_prev) tail. The fMRI signal enters exactly one slot,
//! chosen by the variant.

use std::sync::Arc;

use crate::cmg::mask::{build_mask, MaskMode, SparseCausalMask};
use crate::cmg::{CmgState, CmgVariant, FrameTokens, LayerArch};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Mat;

/// Within-frame visibility: each token attends only to tokens of its own
/// frame. Used by the spatial slot when it runs self-attention.
fn within_frame_mask(n_frames: usize, t_pf: usize) -> Arc<Vec<bool>> {
    let p = n_frames * t_pf;
    let mut visible = vec![false; p * p];
    for q in 0..p {
        let frame = q / t_pf;
        for k in frame * t_pf..(frame + 1) * t_pf {
            visible[q * p + k] = true;
        }
    }
    Arc::new(visible)
}

/// Fixed sinusoidal encoding over the frame index.
pub(crate) fn sinusoidal_frames(n_frames: usize, d_model: usize) -> Mat {
    let mut pe = Mat::zeros(n_frames, d_model);
    for j in 0..n_frames {
        for i in 0..d_model {
            let exponent = (2 * (i / 2)) as f64 / d_model as f64;
            let rate = (j as f64) / 10000f64.powf(exponent);
            pe.data[j * d_model + i] = if i % 2 == 0 { rate.sin() } else { rate.cos() };
        }
    }
    pe
}

/// One packed training/inference batch. Token rows for frames past each
/// sample's visible prefix are ignored (the mask token replaces them).
pub struct PackedBatch {
    /// (b * n_in * t_pf) x d_token raw token values.
    pub tokens: Mat,
    /// Per position: does it hold a real token (true) or the mask token.
    pub real_rows: Vec<bool>,
    /// b x n_voxels.
    pub fmri: Mat,
    pub n_in: usize,
    pub b: usize,
}

impl CmgState {
    fn d_head(&self) -> usize {
        self.config.d_model / self.config.n_heads
    }

    /// Multi-head attention block composed from graph primitives.
    /// `kv` rows per sample are `kv_rows`; a mask of that width applies to
    /// every query row.
    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph,
        vars: &[Var],
        q_src: Var,
        kv_srcs: &[Var],
        q_proj: &crate::nn::Linear,
        k_proj: &crate::nn::Linear,
        v_proj: &crate::nn::Linear,
        o_proj: &crate::nn::Linear,
        q_rows: usize,
        mask: Option<&Arc<Vec<bool>>>,
        b: usize,
    ) -> Var {
        let dh = self.d_head();
        let heads = self.config.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q_all = q_proj.forward(g, vars, q_src);
        // kv_srcs is either one packed var (self-attention) or one per sample.
        let per_sample_kv = kv_srcs.len() == b;
        let k_all: Vec<Var> = kv_srcs.iter().map(|&s| k_proj.forward(g, vars, s)).collect();
        let v_all: Vec<Var> = kv_srcs.iter().map(|&s| v_proj.forward(g, vars, s)).collect();

        let mut sample_outs = Vec::with_capacity(b);
        for bi in 0..b {
            let qb = g.slice_rows(q_all, bi * q_rows, (bi + 1) * q_rows);
            let (kb, vb) = if per_sample_kv {
                (k_all[bi], v_all[bi])
            } else {
                let kv_rows = g.value(k_all[0]).rows / b;
                (
                    g.slice_rows(k_all[0], bi * kv_rows, (bi + 1) * kv_rows),
                    g.slice_rows(v_all[0], bi * kv_rows, (bi + 1) * kv_rows),
                )
            };
            let mut head_outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = g.slice_cols(qb, h * dh, (h + 1) * dh);
                let kh = g.slice_cols(kb, h * dh, (h + 1) * dh);
                let vh = g.slice_cols(vb, h * dh, (h + 1) * dh);
                let scores = g.matmul_t(qh, false, kh, true);
                let scores = g.scale(scores, scale);
                let attn = match mask {
                    Some(m) => g.softmax_rows_masked(scores, m.clone()),
                    None => g.softmax_rows(scores),
                };
                head_outs.push(g.matmul(attn, vh));
            }
            sample_outs.push(g.concat_cols(&head_outs));
        }
        let packed = g.concat_rows(&sample_outs);
        o_proj.forward(g, vars, packed)
    }

    /// adaLN(z, f) = scale(f) * LayerNorm(z) + shift(f), per sample.
    fn ada_ln(
        &self,
        g: &mut Graph,
        vars: &[Var],
        z: Var,
        mem_flat: Var,
        layer: &LayerArch,
        rows: usize,
        b: usize,
    ) -> Var {
        let scale_all = layer.ada_scale.forward(g, vars, mem_flat);
        let shift_all = layer.ada_shift.forward(g, vars, mem_flat);
        let mut outs = Vec::with_capacity(b);
        for bi in 0..b {
            let zb = g.slice_rows(z, bi * rows, (bi + 1) * rows);
            let ln = g.layer_norm_rows(zb, 1e-5);
            let srow = g.slice_rows(scale_all, bi, bi + 1);
            let hrow = g.slice_rows(shift_all, bi, bi + 1);
            let scaled = g.mul_row(ln, srow);
            outs.push(g.add_row(scaled, hrow));
        }
        g.concat_rows(&outs)
    }

    /// Build the full forward on a tape. Returns the packed head output,
    /// (b * n_in * t_pf) x d_token.
    pub fn build_forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        batch: &PackedBatch,
        mask: &SparseCausalMask,
    ) -> Var {
        let d = self.config.d_model;
        let t_pf = self.tokens_per_frame;
        let n_in = batch.n_in;
        let p = n_in * t_pf;
        let total_rows = batch.b * p;
        debug_assert_eq!(batch.tokens.rows, total_rows);
        debug_assert_eq!(mask.n_frames, n_in);
        debug_assert_eq!(mask.tokens_per_frame, t_pf);

        let arch = &self.arch;
        let x = g.leaf(batch.tokens.clone());
        let x = g.scale(x, self.config.token_scale);
        let embedded = arch.embed.forward(g, vars, x);

        // Swap masked rows for the learned mask token.
        let mut vis = Mat::zeros(total_rows, d);
        let mut inv = Mat::zeros(total_rows, d);
        for (r, &real) in batch.real_rows.iter().enumerate() {
            let fill = if real { (1.0, 0.0) } else { (0.0, 1.0) };
            vis.row_mut(r).fill(fill.0);
            inv.row_mut(r).fill(fill.1);
        }
        let vis = g.leaf(vis);
        let inv = g.leaf(inv);
        let zeros = g.leaf(Mat::zeros(total_rows, d));
        let mask_bc = g.add_row(zeros, vars[arch.mask_token]);
        let kept = g.mul(embedded, vis);
        let masked = g.mul(mask_bc, inv);
        let mut z = g.add(kept, masked);

        // Positional encodings: sinusoidal over frame index plus a learned
        // per-patch offset.
        let sin = sinusoidal_frames(n_in, d);
        let mut sin_rows = Mat::zeros(total_rows, d);
        for bi in 0..batch.b {
            for j in 0..n_in {
                for t in 0..t_pf {
                    let r = (bi * n_in + j) * t_pf + t;
                    sin_rows.row_mut(r).copy_from_slice(sin.row(j));
                }
            }
        }
        let sin_leaf = g.leaf(sin_rows);
        z = g.add(z, sin_leaf);
        let patch_tiled = g.concat_rows(&vec![vars[arch.patch_pos]; batch.b * n_in]);
        z = g.add(z, patch_tiled);

        // Shared fMRI embedding: b x (n_memory * d).
        let fmri_leaf = g.leaf(batch.fmri.clone());
        let mem_flat = arch.fmri_emb.forward(g, vars, fmri_leaf);
        let mem_tokens: Vec<Var> = (0..batch.b)
            .map(|bi| {
                let row = g.slice_rows(mem_flat, bi, bi + 1);
                g.reshape(row, self.config.n_memory, d)
            })
            .collect();

        // Spatial self-attention stays within each frame; only the temporal
        // slot mixes information across frames.
        let within = within_frame_mask(n_in, t_pf);

        for layer in &arch.layers {
            let layer_input = z;

            // Temporal slot (residual add).
            let temporal = match self.config.variant {
                CmgVariant::CrossAttention | CmgVariant::AdaLn => self.attention(
                    g,
                    vars,
                    z,
                    &[z],
                    &layer.t_q,
                    &layer.t_k,
                    &layer.t_v,
                    &layer.t_o,
                    p,
                    Some(&mask.visible),
                    batch.b,
                ),
                CmgVariant::TemporalCross => self.attention(
                    g,
                    vars,
                    z,
                    &mem_tokens,
                    &layer.t_q,
                    &layer.t_k,
                    &layer.t_v,
                    &layer.t_o,
                    p,
                    None,
                    batch.b,
                ),
                CmgVariant::TemporalAdaLn => {
                    self.ada_ln(g, vars, z, mem_flat, layer, p, batch.b)
                }
            };
            z = g.add(z, temporal);

            // Spatial slot (no residual; the Eq. 8 tail reconnects to the
            // layer input).
            let spatial = match self.config.variant {
                CmgVariant::CrossAttention => {
                    if self.config.fmri_guidance {
                        self.attention(
                            g,
                            vars,
                            z,
                            &mem_tokens,
                            &layer.s_q,
                            &layer.s_k,
                            &layer.s_v,
                            &layer.s_o,
                            p,
                            None,
                            batch.b,
                        )
                    } else {
                        self.attention(
                            g,
                            vars,
                            z,
                            &[z],
                            &layer.s_q,
                            &layer.s_k,
                            &layer.s_v,
                            &layer.s_o,
                            p,
                            Some(&within),
                            batch.b,
                        )
                    }
                }
                CmgVariant::AdaLn => self.ada_ln(g, vars, z, mem_flat, layer, p, batch.b),
                CmgVariant::TemporalCross | CmgVariant::TemporalAdaLn => self.attention(
                    g,
                    vars,
                    z,
                    &[z],
                    &layer.s_q,
                    &layer.s_k,
                    &layer.s_v,
                    &layer.s_o,
                    p,
                    Some(&within),
                    batch.b,
                ),
            };

            // z_l = FFN(LN(z_l) + z_{l-1})
            let ln = g.layer_norm_rows(spatial, 1e-5);
            let h = g.add(ln, layer_input);
            let f1 = layer.ffn1.forward(g, vars, h);
            let f1 = g.tanh(f1);
            z = layer.ffn2.forward(g, vars, f1);
        }

        arch.head.forward(g, vars, z)
    }

    /// Pack one sample for a `n_total`-frame forward with `m` visible frames.
    pub fn pack_single(
        &self,
        visible: &FrameTokens,
        fmri: &[f64],
        n_total: usize,
    ) -> Result<PackedBatch> {
        let m = visible.len();
        if m == 0 {
            return Err(CoreError::invalid("cmg_forward: need at least one visible frame"));
        }
        if m >= n_total {
            return Err(CoreError::invalid(format!(
                "cmg_forward: visible frames {m} must be fewer than total {n_total}"
            )));
        }
        if fmri.len() != self.n_voxels {
            return Err(CoreError::shape(
                "cmg_forward voxels",
                self.n_voxels.to_string(),
                fmri.len().to_string(),
            ));
        }
        let t_pf = self.tokens_per_frame;
        let mut tokens = Mat::zeros(n_total * t_pf, self.d_token);
        let mut real_rows = vec![false; n_total * t_pf];
        for (j, frame) in visible.iter().enumerate() {
            if frame.len() != t_pf {
                return Err(CoreError::shape(
                    "cmg_forward tokens per frame",
                    t_pf.to_string(),
                    frame.len().to_string(),
                ));
            }
            for (t, tok) in frame.iter().enumerate() {
                if tok.len() != self.d_token {
                    return Err(CoreError::shape(
                        "cmg_forward token dim",
                        self.d_token.to_string(),
                        tok.len().to_string(),
                    ));
                }
                tokens.row_mut(j * t_pf + t).copy_from_slice(tok);
                real_rows[j * t_pf + t] = true;
            }
        }
        Ok(PackedBatch {
            tokens,
            real_rows,
            fmri: Mat::from_vec(1, self.n_voxels, fmri.to_vec()),
            n_in: n_total,
            b: 1,
        })
    }

    /// Predict tokens for frames m+1..n_total from m visible frames.
    pub fn forward(
        &self,
        visible: &FrameTokens,
        fmri: &[f64],
        n_total: usize,
        mask: &SparseCausalMask,
    ) -> Result<FrameTokens> {
        if mask.n_frames != n_total || mask.tokens_per_frame != self.tokens_per_frame {
            return Err(CoreError::shape(
                "cmg_forward mask",
                format!("{n_total} frames x {}", self.tokens_per_frame),
                format!("{} frames x {}", mask.n_frames, mask.tokens_per_frame),
            ));
        }
        let m = visible.len();
        let batch = self.pack_single(visible, fmri, n_total)?;
        let mut g = Graph::new();
        let vars = self.params.leaf_all(&mut g);
        let out = self.build_forward(&mut g, &vars, &batch, mask);
        let out_mat = g.value(out);
        let t_pf = self.tokens_per_frame;
        let mut result = Vec::with_capacity(n_total - m);
        for j in m..n_total {
            let mut frame = Vec::with_capacity(t_pf);
            for t in 0..t_pf {
                frame.push(out_mat.row(j * t_pf + t).to_vec());
            }
            result.push(frame);
        }
        Ok(result)
    }

    /// Autoregressive rollout from the first frame's tokens under the
    /// inference mask: predict frame 2 from frame 1, frame 3 from frames
    /// 1..2, and so on. Returns all n_total frames, the first unchanged.
    pub fn generate_motion(
        &self,
        first_frame: &[Vec<f64>],
        fmri: &[f64],
        n_total: usize,
    ) -> Result<FrameTokens> {
        let mut frames: FrameTokens = vec![first_frame.to_vec()];
        if n_total <= 1 {
            return Ok(frames);
        }
        for next in 1..n_total {
            let mask = build_mask(
                next + 1,
                self.tokens_per_frame,
                0.0,
                MaskMode::Inference,
                0,
            )?;
            let pred = self.forward(&frames, fmri, next + 1, &mask)?;
            frames.push(pred[0].clone());
        }
        Ok(frames)
    }
}
