//! Multi-view integration: one global view plus a grid of local crops,
//! all pushed through one shared backbone.

use dico::networks::{BackboneConfig, MultiViewWrapper, SegBackbone, SegmentationNet};
use dico::volume::{decompose_views, recompose_views};
use dico_autograd::{Module, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dico::error::Result<()> {
    let factors = [2, 2, 1];
    let x = Tensor::from_vec(&[2, 1, 16, 16, 8], (0..2 * 16 * 16 * 8).map(|v| (v % 97) as f32 / 97.0).collect());

    let views = decompose_views(&x, factors)?;
    println!("input {:?} -> views {:?}", x.shape(), views.tensor().shape());
    let (global, locals) = recompose_views(&views)?;
    println!("global {:?}, reassembled locals {:?}", global.shape(), locals.shape());
    println!("locals round-trip exactly: {}", locals.data() == x.data());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = BackboneConfig { base_channels: 4, depth: 2, ..BackboneConfig::conv() };
    let inner = SegBackbone::new(&cfg, &mut rng)?;
    let plain_params = inner.num_parameters();
    let net = MultiViewWrapper::new(inner, factors, &mut rng);
    let y = net.forward(&x)?;
    println!("logits {:?}", y.shape());
    println!("parameters: backbone {plain_params}, with view heads {}", net.num_parameters());
    Ok(())
}
