//! Times a forward+backward 3x3x3 convolution on a 2x8x32^3 batch.
use dico_autograd::{Conv3d, ConvGeometry, Tensor};
use rand::SeedableRng;

fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let conv = Conv3d::new(&mut rng, 8, 8, ConvGeometry::cube(3, 1, 1), true);
    let x = Tensor::param(&[2, 8, 32, 32, 32], vec![0.5; 2 * 8 * 32 * 32 * 32]);
    let reps = 5;
    let start = std::time::Instant::now();
    for _ in 0..reps {
        let g = conv.forward(&x).sum_all().backward();
        assert!(g.get(&conv.weight).is_some());
    }
    println!("conv3d 8->8 on 2x32^3 fwd+bwd: {:?}", start.elapsed() / reps);
    let xc = x.detach();
    let w = conv.weight.detach();
    let start = std::time::Instant::now();
    for _ in 0..reps {
        let _ = xc.conv3d(&w, None, conv.geometry);
    }
    println!("forward only: {:?}", start.elapsed() / reps);
    let a = Tensor::from_vec(&[1, 8, 216], vec![0.1; 8 * 216]);
    let b = Tensor::from_vec(&[1, 216, 32768], vec![0.1; 216 * 32768]);
    let start = std::time::Instant::now();
    for _ in 0..reps {
        let _ = a.bmm(&b, false);
    }
    println!("gemm 8x216x32768: {:?}", start.elapsed() / reps);
}
