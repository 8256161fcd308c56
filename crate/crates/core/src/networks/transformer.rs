use dico_autograd::nn::join;
use dico_autograd::{Conv3d, ConvGeometry, ConvTranspose3d, LayerNorm, Linear, Module, Tensor};
use rand::Rng;

use super::{act, BackboneConfig};

/// Pre-norm self-attention block.
#[derive(Debug, Clone)]
struct AttentionBlock {
    heads: usize,
    norm1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    norm2: LayerNorm,
    mlp_in: Linear,
    mlp_out: Linear,
}

impl AttentionBlock {
    fn new(rng: &mut impl Rng, embed: usize, heads: usize) -> Self {
        AttentionBlock {
            heads,
            norm1: LayerNorm::new(embed),
            qkv: Linear::new(rng, embed, 3 * embed),
            proj: Linear::new(rng, embed, embed),
            norm2: LayerNorm::new(embed),
            mlp_in: Linear::new(rng, embed, 2 * embed),
            mlp_out: Linear::new(rng, 2 * embed, embed),
        }
    }

    /// `x`: `[N, T, E]`.
    fn forward(&self, x: &Tensor) -> Tensor {
        let (n, t, e) = (x.dim(0), x.dim(1), x.dim(2));
        let h = self.heads;
        let dh = e / h;
        let qkv = self
            .qkv
            .forward(&self.norm1.forward(x))
            .reshape(&[n, t, 3, h, dh])
            .permute(&[2, 0, 3, 1, 4]);
        let part = |i: usize| qkv.narrow(0, i, 1).reshape(&[n * h, t, dh]);
        let (q, k, v) = (part(0), part(1), part(2));
        let attn = q.bmm(&k, true).scale(1.0 / (dh as f32).sqrt()).softmax(2);
        let ctx = attn
            .bmm(&v, false)
            .reshape(&[n, h, t, dh])
            .permute(&[0, 2, 1, 3])
            .reshape(&[n, t, e]);
        let x = x.add(&self.proj.forward(&ctx));
        let m = self.mlp_out.forward(&self.mlp_in.forward(&self.norm2.forward(&x)).gelu());
        x.add(&m)
    }
}

impl Module for AttentionBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.qkv.visit(&join(prefix, "qkv"), f);
        self.proj.visit(&join(prefix, "proj"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.mlp_in.visit(&join(prefix, "mlp_in"), f);
        self.mlp_out.visit(&join(prefix, "mlp_out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.qkv.visit_mut(&join(prefix, "qkv"), f);
        self.proj.visit_mut(&join(prefix, "proj"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.mlp_in.visit_mut(&join(prefix, "mlp_in"), f);
        self.mlp_out.visit_mut(&join(prefix, "mlp_out"), f);
    }
}

/// Fixed 3D sine-cosine position code, `[T, E]` for a `g0 x g1 x g2` grid.
/// Channels beyond the largest multiple of 6 are zero.
fn position_code(grid: [usize; 3], embed: usize) -> Vec<f32> {
    let freqs = embed / 6;
    let mut out = Vec::with_capacity(grid.iter().product::<usize>() * embed);
    for a in 0..grid[0] {
        for b in 0..grid[1] {
            for c in 0..grid[2] {
                for pos in [a, b, c] {
                    for k in 0..freqs {
                        let w = 1.0 / 10000f32.powf(k as f32 / freqs as f32);
                        out.push((pos as f32 * w).sin());
                        out.push((pos as f32 * w).cos());
                    }
                }
                out.extend(std::iter::repeat(0.0).take(embed - 6 * freqs));
            }
        }
    }
    out
}

/// UNETR-style network: non-overlapping patch embedding, self-attention
/// stack, and a convolutional decoder that upsamples from patch resolution
/// with skips projected from intermediate blocks and a full-resolution stem.
#[derive(Debug, Clone)]
pub struct TransformerEncoderDecoder {
    patch: usize,
    embed: usize,
    patch_embed: Conv3d,
    blocks: Vec<AttentionBlock>,
    stem: Conv3d,
    bottleneck: Conv3d,
    up: Vec<ConvTranspose3d>,
    skip_proj: Vec<Conv3d>,
    merge: Vec<Conv3d>,
}

impl TransformerEncoderDecoder {
    pub fn new(cfg: &BackboneConfig, rng: &mut impl Rng) -> Self {
        let levels = cfg.patch_size.trailing_zeros() as usize;
        let width = |j: usize| cfg.base_channels << j.min(3);
        let e = cfg.embed_dim;
        let patch_embed = Conv3d::new(rng, cfg.in_channels, e, ConvGeometry::cube(cfg.patch_size, cfg.patch_size, 0), true);
        let blocks = (0..cfg.depth).map(|_| AttentionBlock::new(rng, e, cfg.heads)).collect();
        let stem = Conv3d::new(rng, cfg.in_channels, width(0), ConvGeometry::cube(3, 1, 1), true);
        let pw = ConvGeometry::cube(1, 1, 0);
        let bottleneck = Conv3d::new(rng, e, width(levels), pw, true);
        let up = (0..levels)
            .map(|j| ConvTranspose3d::new(rng, width(j + 1), width(j), ConvGeometry::cube(2, 2, 0)))
            .collect();
        let skip_proj = (1..levels).map(|j| Conv3d::new(rng, e, width(j), pw, true)).collect();
        let merge = (0..levels.max(1))
            .map(|j| Conv3d::new(rng, 2 * width(j), width(j), ConvGeometry::cube(3, 1, 1), true))
            .collect();
        TransformerEncoderDecoder {
            patch: cfg.patch_size,
            embed: e,
            patch_embed,
            blocks,
            stem,
            bottleneck,
            up,
            skip_proj,
            merge,
        }
    }

    /// Block whose output feeds the skip at decoder level `j` (1-based from
    /// the full-resolution end).
    fn skip_block(&self, j: usize) -> usize {
        let levels = self.up.len();
        (self.blocks.len() * j / levels).clamp(1, self.blocks.len()) - 1
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let n = x.dim(0);
        let grid = [x.dim(2) / self.patch, x.dim(3) / self.patch, x.dim(4) / self.patch];
        let t: usize = grid.iter().product();
        let e = self.embed;

        let to_tokens = |g: &Tensor| g.reshape(&[n, e, t]).permute(&[0, 2, 1]);
        let to_grid = |tok: &Tensor| tok.permute(&[0, 2, 1]).reshape(&[n, e, grid[0], grid[1], grid[2]]);

        let pos = Tensor::from_vec(&[1, t, e], position_code(grid, e));
        let pos = Tensor::concat(&vec![pos; n], 0);
        let mut tokens = to_tokens(&self.patch_embed.forward(x)).add(&pos);
        let mut hidden = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            tokens = b.forward(&tokens);
            hidden.push(tokens.clone());
        }

        let levels = self.up.len();
        let mut h = act(&self.bottleneck.forward(&to_grid(&tokens)));
        let stem = act(&self.stem.forward(x));
        let skip = |j: usize| -> Tensor {
            if j == 0 {
                return stem.clone();
            }
            let s = 1 << j;
            let target = [x.dim(2) / s, x.dim(3) / s, x.dim(4) / s];
            let g = to_grid(&hidden[self.skip_block(j)]);
            act(&self.skip_proj[j - 1].forward(&g)).resize_trilinear(target)
        };
        for j in (0..levels).rev() {
            let u = act(&self.up[j].forward(&h));
            h = act(&self.merge[j].forward(&Tensor::concat(&[u, skip(j)], 1)));
        }
        if levels == 0 {
            h = act(&self.merge[0].forward(&Tensor::concat(&[h, skip(0)], 1)));
        }
        h
    }
}

impl Module for TransformerEncoderDecoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.patch_embed.visit(&join(prefix, "patch_embed"), f);
        self.blocks.visit(&join(prefix, "blocks"), f);
        self.stem.visit(&join(prefix, "stem"), f);
        self.bottleneck.visit(&join(prefix, "bottleneck"), f);
        self.up.visit(&join(prefix, "up"), f);
        self.skip_proj.visit(&join(prefix, "skip_proj"), f);
        self.merge.visit(&join(prefix, "merge"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.patch_embed.visit_mut(&join(prefix, "patch_embed"), f);
        self.blocks.visit_mut(&join(prefix, "blocks"), f);
        self.stem.visit_mut(&join(prefix, "stem"), f);
        self.bottleneck.visit_mut(&join(prefix, "bottleneck"), f);
        self.up.visit_mut(&join(prefix, "up"), f);
        self.skip_proj.visit_mut(&join(prefix, "skip_proj"), f);
        self.merge.visit_mut(&join(prefix, "merge"), f);
    }
}
