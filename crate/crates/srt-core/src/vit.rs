//! Minimal pre-norm Vision Transformer with taps at every block boundary.
//!
//! The forward pass can be split at any layer index and resumed from injected
//! tokens. Layer indices run 0..=depth: 0 is the post-embedding state (patch
//! embed plus positional table), k is the state after block k, and the final
//! LayerNorm is applied only at depth, counted as part of the last layer's
//! output. The split and unsplit passes share one code path so composition is
//! bit-exact.

use std::collections::BTreeMap;

use crate::error::{Result, SrtError};
use crate::image::Image;
use crate::tensor::Tensor;

/// LayerNorm epsilon used throughout the model.
pub const LN_EPS: f32 = 1e-6;

/// Architecture hyperparameters. Serialized verbatim into weight containers.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VitConfig {
    pub img_h: usize,
    pub img_w: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f32,
    pub use_cls: bool,
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        let c = |ok: bool, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(SrtError::Config(msg.to_string()))
            }
        };
        c(self.img_h > 0 && self.img_w > 0, "image dims must be positive")?;
        c(self.patch_h > 0 && self.patch_w > 0, "patch dims must be positive")?;
        c(self.img_h % self.patch_h == 0, "img_h must be divisible by patch_h")?;
        c(self.img_w % self.patch_w == 0, "img_w must be divisible by patch_w")?;
        c(self.dim > 0 && self.heads > 0, "dim and heads must be positive")?;
        c(self.dim % self.heads == 0, "dim must be divisible by heads")?;
        c(self.depth >= 1, "depth must be at least 1")?;
        c(self.mlp_ratio > 0.0, "mlp_ratio must be positive")?;
        c(self.hidden() >= 1, "mlp hidden dim must be at least 1")?;
        Ok(())
    }

    pub fn grid_h(&self) -> usize {
        self.img_h / self.patch_h
    }

    pub fn grid_w(&self) -> usize {
        self.img_w / self.patch_w
    }

    pub fn num_patches(&self) -> usize {
        self.grid_h() * self.grid_w()
    }

    /// Sequence length including the class token when configured.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + usize::from(self.use_cls)
    }

    pub fn hidden(&self) -> usize {
        (self.dim as f64 * self.mlp_ratio as f64).round() as usize
    }
}

/// Token-grid features tapped at a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub channels: usize,
    /// Tap index, 0..=depth.
    pub layer: usize,
    /// Shape [grid_h, grid_w, channels].
    pub data: Tensor,
    /// Class-token features, carried alongside the spatial grid.
    pub cls: Option<Vec<f32>>,
}

impl FeatureMap {
    pub fn new(
        grid_h: usize,
        grid_w: usize,
        channels: usize,
        layer: usize,
        data: Tensor,
        cls: Option<Vec<f32>>,
    ) -> Result<Self> {
        if data.shape() != [grid_h, grid_w, channels] {
            return Err(SrtError::Dimension(format!(
                "feature map shape {:?} does not match {grid_h}x{grid_w}x{channels}",
                data.shape()
            )));
        }
        if let Some(c) = &cls {
            if c.len() != channels {
                return Err(SrtError::Dimension(format!(
                    "cls length {} vs channels {channels}",
                    c.len()
                )));
            }
        }
        Ok(FeatureMap { grid_h, grid_w, channels, layer, data, cls })
    }

    /// Channel slice of token (i, j).
    #[inline]
    pub fn token(&self, i: usize, j: usize) -> &[f32] {
        let base = (i * self.grid_w + j) * self.channels;
        &self.data.data()[base..base + self.channels]
    }
}

/// One transformer block's weights.
#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub norm1_w: Tensor,
    pub norm1_b: Tensor,
    pub qkv_w: Tensor,
    pub qkv_b: Tensor,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    pub norm2_w: Tensor,
    pub norm2_b: Tensor,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
}

/// A loaded model: immutable weights plus the architecture config.
#[derive(Debug, Clone)]
pub struct VitModel {
    pub config: VitConfig,
    pub in_channels: usize,
    pub(crate) patch_embed_w: Tensor,
    pub(crate) patch_embed_b: Tensor,
    pub(crate) cls_token: Option<Tensor>,
    pub(crate) pos_embed: Tensor,
    pub(crate) blocks: Vec<Block>,
    pub(crate) norm_w: Tensor,
    pub(crate) norm_b: Tensor,
}

/// Canonical tensor schema for a config: (name, shape), in container order.
pub fn tensor_specs(config: &VitConfig, in_channels: usize) -> Vec<(String, Vec<usize>)> {
    let d = config.dim;
    let patch_len = config.patch_h * config.patch_w * in_channels;
    let hidden = config.hidden();
    let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
    specs.push(("patch_embed.weight".into(), vec![d, patch_len]));
    specs.push(("patch_embed.bias".into(), vec![d]));
    if config.use_cls {
        specs.push(("cls_token".into(), vec![d]));
    }
    specs.push(("pos_embed".into(), vec![config.seq_len(), d]));
    for b in 0..config.depth {
        let p = |s: &str| format!("blocks.{b}.{s}");
        specs.push((p("norm1.weight"), vec![d]));
        specs.push((p("norm1.bias"), vec![d]));
        specs.push((p("attn.qkv.weight"), vec![3 * d, d]));
        specs.push((p("attn.qkv.bias"), vec![3 * d]));
        specs.push((p("attn.proj.weight"), vec![d, d]));
        specs.push((p("attn.proj.bias"), vec![d]));
        specs.push((p("norm2.weight"), vec![d]));
        specs.push((p("norm2.bias"), vec![d]));
        specs.push((p("mlp.fc1.weight"), vec![hidden, d]));
        specs.push((p("mlp.fc1.bias"), vec![hidden]));
        specs.push((p("mlp.fc2.weight"), vec![d, hidden]));
        specs.push((p("mlp.fc2.bias"), vec![d]));
    }
    specs.push(("norm.weight".into(), vec![d]));
    specs.push(("norm.bias".into(), vec![d]));
    specs
}

/// Splits `image` into non-overlapping patches; row t is the row-major
/// flattening (rows, cols, channels) of patch t in raster order.
pub fn patchify(image: &Image, config: &VitConfig) -> Result<Tensor> {
    if image.height != config.img_h || image.width != config.img_w {
        return Err(SrtError::Dimension(format!(
            "image {}x{} does not match configured {}x{}",
            image.height, image.width, config.img_h, config.img_w
        )));
    }
    let (gh, gw) = (config.grid_h(), config.grid_w());
    let (ph, pw, k) = (config.patch_h, config.patch_w, image.channels);
    let row_len = ph * pw * k;
    let mut out = Vec::with_capacity(gh * gw * row_len);
    for i in 0..gh {
        for j in 0..gw {
            for pu in 0..ph {
                for pv in 0..pw {
                    let px = image.pixel(i * ph + pu, j * pw + pv);
                    out.extend_from_slice(px);
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, row_len], out)
}

impl VitModel {
    /// Assembles a model from a name -> tensor map, validating the schema
    /// exactly: every expected tensor present with the right shape, nothing
    /// extra. `in_channels` is inferred from `patch_embed.weight`.
    pub fn from_named_tensors(
        config: VitConfig,
        mut tensors: BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        config.validate().map_err(|e| SrtError::Container(e.to_string()))?;
        let patch_area = config.patch_h * config.patch_w;
        let pe = tensors
            .get("patch_embed.weight")
            .ok_or_else(|| SrtError::Container("missing tensor \"patch_embed.weight\"".into()))?;
        let in_channels = match pe.shape() {
            [d, flat] if *d == config.dim && flat % patch_area == 0 => flat / patch_area,
            other => {
                return Err(SrtError::Container(format!(
                    "patch_embed.weight shape {other:?} inconsistent with config"
                )))
            }
        };
        if in_channels != 1 && in_channels != 3 {
            return Err(SrtError::Container(format!(
                "inferred input channels {in_channels}, expected 1 or 3"
            )));
        }

        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| SrtError::Container(format!("missing tensor {name:?}")))?;
            if t.shape() != shape {
                return Err(SrtError::Container(format!(
                    "tensor {name:?} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };

        let mut model = VitModel {
            config,
            in_channels,
            patch_embed_w: take("patch_embed.weight", &[config.dim, patch_area * in_channels])?,
            patch_embed_b: take("patch_embed.bias", &[config.dim])?,
            cls_token: None,
            pos_embed: take("pos_embed", &[config.seq_len(), config.dim])?,
            blocks: Vec::with_capacity(config.depth),
            norm_w: take("norm.weight", &[config.dim])?,
            norm_b: take("norm.bias", &[config.dim])?,
        };
        if config.use_cls {
            model.cls_token = Some(take("cls_token", &[config.dim])?);
        }
        let d = config.dim;
        let hidden = config.hidden();
        for b in 0..config.depth {
            let p = |s: &str| format!("blocks.{b}.{s}");
            model.blocks.push(Block {
                norm1_w: take(&p("norm1.weight"), &[d])?,
                norm1_b: take(&p("norm1.bias"), &[d])?,
                qkv_w: take(&p("attn.qkv.weight"), &[3 * d, d])?,
                qkv_b: take(&p("attn.qkv.bias"), &[3 * d])?,
                proj_w: take(&p("attn.proj.weight"), &[d, d])?,
                proj_b: take(&p("attn.proj.bias"), &[d])?,
                norm2_w: take(&p("norm2.weight"), &[d])?,
                norm2_b: take(&p("norm2.bias"), &[d])?,
                fc1_w: take(&p("mlp.fc1.weight"), &[hidden, d])?,
                fc1_b: take(&p("mlp.fc1.bias"), &[hidden])?,
                fc2_w: take(&p("mlp.fc2.weight"), &[d, hidden])?,
                fc2_b: take(&p("mlp.fc2.bias"), &[d])?,
            });
        }
        if let Some(name) = tensors.keys().next() {
            return Err(SrtError::Container(format!("unexpected extra tensor {name:?}")));
        }
        Ok(model)
    }

    /// Canonical (name, tensor) view in container order, for serialization.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("patch_embed.weight".into(), &self.patch_embed_w));
        out.push(("patch_embed.bias".into(), &self.patch_embed_b));
        if let Some(cls) = &self.cls_token {
            out.push(("cls_token".into(), cls));
        }
        out.push(("pos_embed".into(), &self.pos_embed));
        for (b, blk) in self.blocks.iter().enumerate() {
            let p = |s: &str| format!("blocks.{b}.{s}");
            out.push((p("norm1.weight"), &blk.norm1_w));
            out.push((p("norm1.bias"), &blk.norm1_b));
            out.push((p("attn.qkv.weight"), &blk.qkv_w));
            out.push((p("attn.qkv.bias"), &blk.qkv_b));
            out.push((p("attn.proj.weight"), &blk.proj_w));
            out.push((p("attn.proj.bias"), &blk.proj_b));
            out.push((p("norm2.weight"), &blk.norm2_w));
            out.push((p("norm2.bias"), &blk.norm2_b));
            out.push((p("mlp.fc1.weight"), &blk.fc1_w));
            out.push((p("mlp.fc1.bias"), &blk.fc1_b));
            out.push((p("mlp.fc2.weight"), &blk.fc2_w));
            out.push((p("mlp.fc2.bias"), &blk.fc2_b));
        }
        out.push(("norm.weight".into(), &self.norm_w));
        out.push(("norm.bias".into(), &self.norm_b));
        out
    }

    /// Patch embedding, optional class token, positional table. Tap layer 0.
    fn embed(&self, image: &Image) -> Result<Tensor> {
        if image.channels != self.in_channels {
            return Err(SrtError::Dimension(format!(
                "image has {} channels, model expects {}",
                image.channels, self.in_channels
            )));
        }
        let patches = patchify(image, &self.config)?;
        let tokens = patches.linear(&self.patch_embed_w, Some(&self.patch_embed_b))?;
        let seq = self.config.seq_len();
        let d = self.config.dim;
        let mut data = Vec::with_capacity(seq * d);
        if let Some(cls) = &self.cls_token {
            data.extend_from_slice(cls.data());
        }
        data.extend_from_slice(tokens.data());
        let x = Tensor::new(vec![seq, d], data)?;
        x.add(&self.pos_embed)
    }

    /// One pre-norm block: x += attn(LN1(x)); x += mlp(LN2(x)).
    fn block_forward(&self, x: &Tensor, b: usize) -> Result<Tensor> {
        let blk = &self.blocks[b];
        let h = x.layer_norm(&blk.norm1_w, &blk.norm1_b, LN_EPS)?;
        let qkv = h.linear(&blk.qkv_w, Some(&blk.qkv_b))?;
        let attn = self.attention(&qkv)?;
        let x = x.add(&attn.linear(&blk.proj_w, Some(&blk.proj_b))?)?;
        let h = x.layer_norm(&blk.norm2_w, &blk.norm2_b, LN_EPS)?;
        let mlp = h.linear(&blk.fc1_w, Some(&blk.fc1_b))?.gelu()?.linear(&blk.fc2_w, Some(&blk.fc2_b))?;
        x.add(&mlp)
    }

    /// Multi-head scaled dot-product attention over a [seq, 3*dim] qkv
    /// matrix. Reductions run in f64 in a fixed order.
    fn attention(&self, qkv: &Tensor) -> Result<Tensor> {
        let seq = qkv.shape()[0];
        let d = self.config.dim;
        let heads = self.config.heads;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let q_off = 0;
        let k_off = d;
        let v_off = 2 * d;
        let qkv_d = qkv.data();
        let row = |t: usize| &qkv_d[t * 3 * d..(t + 1) * 3 * d];

        let mut out = vec![0.0f32; seq * d];
        let mut scores = vec![0.0f64; seq];
        for h in 0..heads {
            let co = h * hd;
            for i in 0..seq {
                let qi = &row(i)[q_off + co..q_off + co + hd];
                let mut max = f64::NEG_INFINITY;
                for (j, s) in scores.iter_mut().enumerate() {
                    let kj = &row(j)[k_off + co..k_off + co + hd];
                    let mut acc = 0.0f64;
                    for c in 0..hd {
                        acc += qi[c] as f64 * kj[c] as f64;
                    }
                    *s = acc * scale;
                    max = max.max(*s);
                }
                let mut denom = 0.0f64;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    denom += *s;
                }
                for c in 0..hd {
                    let mut acc = 0.0f64;
                    for (j, s) in scores.iter().enumerate() {
                        acc += s * row(j)[v_off + co + c] as f64;
                    }
                    out[i * d + co + c] = (acc / denom) as f32;
                }
            }
        }
        Tensor::new(vec![seq, d], out)
    }

    fn final_norm(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.norm_w, &self.norm_b, LN_EPS)
    }

    /// Splits a [seq, dim] token matrix into a FeatureMap at `layer`.
    fn to_feature_map(&self, x: &Tensor, layer: usize) -> Result<FeatureMap> {
        let (gh, gw, d) = (self.config.grid_h(), self.config.grid_w(), self.config.dim);
        let data = x.data();
        let (cls, spatial) = if self.config.use_cls {
            (Some(data[..d].to_vec()), &data[d..])
        } else {
            (None, data)
        };
        FeatureMap::new(gh, gw, d, layer, Tensor::new(vec![gh, gw, d], spatial.to_vec())?, cls)
    }

    /// Rebuilds the [seq, dim] token matrix from a FeatureMap.
    fn from_feature_map(&self, fmap: &FeatureMap) -> Result<Tensor> {
        let d = self.config.dim;
        let mut data = Vec::with_capacity(self.config.seq_len() * d);
        if self.config.use_cls {
            let cls = fmap.cls.as_ref().ok_or_else(|| {
                SrtError::Dimension("model uses a class token but the feature map has none".into())
            })?;
            data.extend_from_slice(cls);
        }
        data.extend_from_slice(fmap.data.data());
        Tensor::new(vec![self.config.seq_len(), d], data)
    }

    /// Runs the forward pass up to tap `layer` (0..=depth).
    pub fn forward_to_layer(&self, image: &Image, layer: usize) -> Result<FeatureMap> {
        if layer > self.config.depth {
            return Err(SrtError::Layer { layer, depth: self.config.depth });
        }
        let mut x = self.embed(image)?;
        for b in 0..layer {
            x = self.block_forward(&x, b)?;
        }
        if layer == self.config.depth {
            x = self.final_norm(&x)?;
        }
        self.to_feature_map(&x, layer)
    }

    /// Resumes the forward pass from features injected at tap `layer`,
    /// running blocks layer+1..depth plus the final norm. At layer == depth
    /// this is the identity.
    pub fn forward_from_layer(&self, fmap: &FeatureMap, layer: usize) -> Result<FeatureMap> {
        if layer > self.config.depth {
            return Err(SrtError::Layer { layer, depth: self.config.depth });
        }
        if fmap.layer != layer {
            return Err(SrtError::Dimension(format!(
                "feature map is tagged layer {}, resume requested at {layer}",
                fmap.layer
            )));
        }
        if (fmap.grid_h, fmap.grid_w, fmap.channels)
            != (self.config.grid_h(), self.config.grid_w(), self.config.dim)
        {
            return Err(SrtError::Dimension(format!(
                "feature map {}x{}x{} does not match model grid {}x{}x{}",
                fmap.grid_h,
                fmap.grid_w,
                fmap.channels,
                self.config.grid_h(),
                self.config.grid_w(),
                self.config.dim
            )));
        }
        if layer == self.config.depth {
            return Ok(fmap.clone());
        }
        let mut x = self.from_feature_map(fmap)?;
        for b in layer..self.config.depth {
            x = self.block_forward(&x, b)?;
        }
        x = self.final_norm(&x)?;
        self.to_feature_map(&x, self.config.depth)
    }

    /// Full forward pass: all blocks plus the final norm.
    pub fn forward(&self, image: &Image) -> Result<FeatureMap> {
        self.forward_to_layer(image, self.config.depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(depth: usize) -> VitConfig {
        VitConfig {
            img_h: 2,
            img_w: 2,
            patch_h: 1,
            patch_w: 1,
            dim: 2,
            depth,
            heads: 1,
            mlp_ratio: 2.0,
            use_cls: false,
        }
    }

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn zeros(shape: &[usize]) -> Tensor {
        Tensor::zeros(shape.to_vec())
    }

    /// Hand-set weights for the reference forward below. Block 1 carries the
    /// arithmetic; block 2 is all zeros, so taps 1 and 2 expose the
    /// pre-final-norm and post-final-norm states of the same computation.
    fn hand_model() -> VitModel {
        let cfg = tiny_config(2);
        let mut m = BTreeMap::new();
        m.insert("patch_embed.weight".into(), t(&[2, 1], &[1.0, -0.5]));
        m.insert("patch_embed.bias".into(), t(&[2], &[0.25, 0.5]));
        m.insert(
            "pos_embed".into(),
            t(&[4, 2], &[0.0, 0.1, 0.1, 0.0, -0.1, 0.2, 0.2, -0.1]),
        );
        m.insert("blocks.0.norm1.weight".into(), t(&[2], &[1.0, 1.0]));
        m.insert("blocks.0.norm1.bias".into(), zeros(&[2]));
        m.insert(
            "blocks.0.attn.qkv.weight".into(),
            t(&[6, 2], &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5, -0.5, 0.5, 1.0, -1.0, 1.0, 1.0]),
        );
        m.insert("blocks.0.attn.qkv.bias".into(), t(&[6], &[0.1, -0.1, 0.0, 0.0, 0.2, 0.0]));
        m.insert("blocks.0.attn.proj.weight".into(), t(&[2, 2], &[1.0, 0.5, -0.5, 1.0]));
        m.insert("blocks.0.attn.proj.bias".into(), t(&[2], &[0.05, -0.05]));
        m.insert("blocks.0.norm2.weight".into(), t(&[2], &[1.0, 1.0]));
        m.insert("blocks.0.norm2.bias".into(), zeros(&[2]));
        m.insert(
            "blocks.0.mlp.fc1.weight".into(),
            t(&[4, 2], &[1.0, 0.0, 0.0, 1.0, 0.5, -0.5, -1.0, 1.0]),
        );
        m.insert("blocks.0.mlp.fc1.bias".into(), t(&[4], &[0.0, 0.1, -0.1, 0.2]));
        m.insert(
            "blocks.0.mlp.fc2.weight".into(),
            t(&[2, 4], &[0.5, 0.0, -0.5, 1.0, 0.0, 0.5, 1.0, -0.5]),
        );
        m.insert("blocks.0.mlp.fc2.bias".into(), t(&[2], &[0.01, -0.02]));
        for name in [
            "norm1.weight",
            "norm1.bias",
            "attn.qkv.bias",
            "attn.proj.bias",
            "norm2.weight",
            "norm2.bias",
            "mlp.fc1.bias",
            "mlp.fc2.bias",
        ] {
            let shape = if name == "attn.qkv.bias" {
                vec![6]
            } else if name == "mlp.fc1.bias" {
                vec![4]
            } else {
                vec![2]
            };
            m.insert(format!("blocks.1.{name}"), Tensor::zeros(shape));
        }
        m.insert("blocks.1.attn.qkv.weight".into(), zeros(&[6, 2]));
        m.insert("blocks.1.attn.proj.weight".into(), zeros(&[2, 2]));
        m.insert("blocks.1.mlp.fc1.weight".into(), zeros(&[4, 2]));
        m.insert("blocks.1.mlp.fc2.weight".into(), zeros(&[2, 4]));
        m.insert("norm.weight".into(), t(&[2], &[1.0, 1.0]));
        m.insert("norm.bias".into(), zeros(&[2]));
        VitModel::from_named_tensors(cfg, m).unwrap()
    }

    fn hand_image() -> Image {
        Image::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap()
    }

    #[test]
    fn patchify_unit_patches() {
        let cfg = tiny_config(1);
        let img = hand_image();
        let p = patchify(&img, &cfg).unwrap();
        assert_eq!(p.shape(), &[4, 1]);
        assert_eq!(p.data(), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn patchify_constant_image_rows_identical() {
        let cfg = VitConfig { img_h: 4, img_w: 4, patch_h: 2, patch_w: 2, ..tiny_config(1) };
        let img = Image::constant(4, 4, 1, 0.5).unwrap();
        let p = patchify(&img, &cfg).unwrap();
        let first = &p.data()[..4];
        for row in p.data().chunks(4) {
            assert_eq!(row, first);
        }
    }

    #[test]
    fn patchify_ramp_matches_hand_enumeration() {
        // 4x4 single-channel ramp, pixel value = linear index / 16.
        let cfg = VitConfig { img_h: 4, img_w: 4, patch_h: 2, patch_w: 2, ..tiny_config(1) };
        let img = Image::new(4, 4, 1, (0..16).map(|i| i as f32 / 16.0).collect()).unwrap();
        let p = patchify(&img, &cfg).unwrap();
        // Patch (0,0) covers pixels 0,1,4,5; (0,1) covers 2,3,6,7; etc.
        let want: Vec<f32> = [0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15]
            .iter()
            .map(|&i| i as f32 / 16.0)
            .collect();
        assert_eq!(p.data(), &want[..]);
    }

    #[test]
    fn patchify_dimension_mismatch_errors() {
        let cfg = tiny_config(1);
        let img = Image::constant(3, 2, 1, 0.0).unwrap();
        assert!(patchify(&img, &cfg).is_err());
    }

    #[test]
    fn hand_forward_matches_reference() {
        // Expected values computed with an independent double-precision
        // implementation of the same architecture (frozen).
        let model = hand_model();
        let img = hand_image();

        let l0 = model.forward_to_layer(&img, 0).unwrap();
        let want0 = [0.35, 0.55, 0.55, 0.4, 0.45, 0.55, 0.85, 0.2];
        for (g, w) in l0.data.data().iter().zip(&want0) {
            assert!((*g as f64 - w).abs() < 1e-6, "{g} vs {w}");
        }

        let l1 = model.forward_to_layer(&img, 1).unwrap();
        let want1 = [
            1.65011562815,
            0.183736949901,
            2.10154619617,
            0.262495099721,
            1.75026031153,
            0.183664520038,
            2.40161471102,
            0.0624609484206,
        ];
        for (g, w) in l1.data.data().iter().zip(&want1) {
            assert!((*g as f64 - w).abs() < 1e-5, "{g} vs {w}");
        }

        let l2 = model.forward_to_layer(&img, 2).unwrap();
        let want2 = [
            0.999999069884,
            -0.999999069884,
            0.999999408654,
            -0.999999408654,
            0.999999185079,
            -0.999999185079,
            0.999999634479,
            -0.999999634479,
        ];
        for (g, w) in l2.data.data().iter().zip(&want2) {
            assert!((*g as f64 - w).abs() < 1e-5, "{g} vs {w}");
        }
    }

    #[test]
    fn zero_block_is_residual_identity() {
        // Block 2 of the hand model has all-zero weights and biases, so the
        // tap after it equals the tap before it.
        let model = hand_model();
        let img = hand_image();
        let l1 = model.forward_to_layer(&img, 1).unwrap();
        // Run block 2 manually via forward_from_layer at depth tap minus norm:
        // compare the raw token matrices instead.
        let x1 = model.from_feature_map(&l1).unwrap();
        let x2 = model.block_forward(&x1, 1).unwrap();
        assert_eq!(x1.data(), x2.data());
    }

    #[test]
    fn bias_only_propagation() {
        // All weights zero, selected biases nonzero: attention contributes
        // proj bias p, the MLP contributes fc2 bias q, so one block maps any
        // input to x + p + q, and the final norm of a constant row is its
        // beta (here zero is gamma-scaled to zero, beta stays).
        let cfg = tiny_config(1);
        let mut m = BTreeMap::new();
        m.insert("patch_embed.weight".into(), zeros(&[2, 1]));
        m.insert("patch_embed.bias".into(), zeros(&[2]));
        m.insert("pos_embed".into(), zeros(&[4, 2]));
        m.insert("blocks.0.norm1.weight".into(), zeros(&[2]));
        m.insert("blocks.0.norm1.bias".into(), zeros(&[2]));
        m.insert("blocks.0.attn.qkv.weight".into(), zeros(&[6, 2]));
        m.insert("blocks.0.attn.qkv.bias".into(), zeros(&[6]));
        m.insert("blocks.0.attn.proj.weight".into(), zeros(&[2, 2]));
        m.insert("blocks.0.attn.proj.bias".into(), t(&[2], &[0.3, -0.1]));
        m.insert("blocks.0.norm2.weight".into(), zeros(&[2]));
        m.insert("blocks.0.norm2.bias".into(), zeros(&[2]));
        m.insert("blocks.0.mlp.fc1.weight".into(), zeros(&[4, 2]));
        m.insert("blocks.0.mlp.fc1.bias".into(), zeros(&[4]));
        m.insert("blocks.0.mlp.fc2.weight".into(), zeros(&[2, 4]));
        m.insert("blocks.0.mlp.fc2.bias".into(), t(&[2], &[0.05, 0.2]));
        m.insert("norm.weight".into(), zeros(&[2]));
        m.insert("norm.bias".into(), t(&[2], &[0.7, -0.7]));
        let model = VitModel::from_named_tensors(cfg, m).unwrap();

        let zero_fmap = FeatureMap::new(2, 2, 2, 0, Tensor::zeros(vec![2, 2, 2]), None).unwrap();
        let out = model.forward_from_layer(&zero_fmap, 0).unwrap();
        // Hand computation: tokens (0,0) -> +(0.3,-0.1) -> +(0.05,0.2) =
        // (0.35, 0.1) per token; final norm with gamma 0 gives beta.
        for tok in out.data.data().chunks(2) {
            assert!((tok[0] - 0.7).abs() < 1e-6);
            assert!((tok[1] + 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn composition_is_bit_exact_at_every_layer() {
        let model = hand_model();
        let img = hand_image();
        let full = model.forward(&img).unwrap();
        for layer in 0..=model.config.depth {
            let tap = model.forward_to_layer(&img, layer).unwrap();
            let resumed = model.forward_from_layer(&tap, layer).unwrap();
            assert_eq!(resumed.data.data(), full.data.data(), "layer {layer}");
            assert_eq!(resumed.cls, full.cls);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let model = hand_model();
        let img = hand_image();
        let a = model.forward(&img).unwrap();
        let b = model.forward(&img).unwrap();
        assert_eq!(a.data.data(), b.data.data());
    }

    #[test]
    fn layer_out_of_range_errors() {
        let model = hand_model();
        let img = hand_image();
        assert!(matches!(
            model.forward_to_layer(&img, 3),
            Err(SrtError::Layer { layer: 3, depth: 2 })
        ));
    }

    #[test]
    fn permutation_of_patches_permutes_layer0_tokens() {
        // With a zero positional table, swapping two input patches swaps the
        // corresponding embedding rows and nothing else.
        let cfg = tiny_config(1);
        let mut m = BTreeMap::new();
        m.insert("patch_embed.weight".into(), t(&[2, 1], &[1.0, -2.0]));
        m.insert("patch_embed.bias".into(), t(&[2], &[0.1, 0.2]));
        m.insert("pos_embed".into(), zeros(&[4, 2]));
        m.insert("blocks.0.norm1.weight".into(), t(&[2], &[1.0, 1.0]));
        m.insert("blocks.0.norm1.bias".into(), zeros(&[2]));
        m.insert("blocks.0.attn.qkv.weight".into(), zeros(&[6, 2]));
        m.insert("blocks.0.attn.qkv.bias".into(), zeros(&[6]));
        m.insert("blocks.0.attn.proj.weight".into(), zeros(&[2, 2]));
        m.insert("blocks.0.attn.proj.bias".into(), zeros(&[2]));
        m.insert("blocks.0.norm2.weight".into(), t(&[2], &[1.0, 1.0]));
        m.insert("blocks.0.norm2.bias".into(), zeros(&[2]));
        m.insert("blocks.0.mlp.fc1.weight".into(), zeros(&[4, 2]));
        m.insert("blocks.0.mlp.fc1.bias".into(), zeros(&[4]));
        m.insert("blocks.0.mlp.fc2.weight".into(), zeros(&[2, 4]));
        m.insert("blocks.0.mlp.fc2.bias".into(), zeros(&[2]));
        m.insert("norm.weight".into(), t(&[2], &[1.0, 1.0]));
        m.insert("norm.bias".into(), zeros(&[2]));
        let model = VitModel::from_named_tensors(cfg, m).unwrap();

        let img = Image::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let swapped = Image::new(2, 2, 1, vec![0.2, 0.1, 0.3, 0.4]).unwrap();
        let a = model.forward_to_layer(&img, 0).unwrap();
        let b = model.forward_to_layer(&swapped, 0).unwrap();
        assert_eq!(a.token(0, 0), b.token(0, 1));
        assert_eq!(a.token(0, 1), b.token(0, 0));
        assert_eq!(a.token(1, 0), b.token(1, 0));
        assert_eq!(a.token(1, 1), b.token(1, 1));
    }

    #[test]
    fn missing_tensor_named_in_error() {
        let cfg = tiny_config(1);
        let m = BTreeMap::new();
        let err = VitModel::from_named_tensors(cfg, m).unwrap_err();
        assert!(err.to_string().contains("patch_embed.weight"), "{err}");
    }
}
