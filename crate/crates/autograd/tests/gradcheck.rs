//! Central finite differences against the analytic backward pass of every op.

use dico_autograd::{ConvGeometry, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<f32> {
    let n: usize = shape.iter().product();
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Checks d f / d x for every input entry. `f` must return a scalar.
fn check(name: &str, shape: &[usize], seed: u64, f: impl Fn(&Tensor) -> Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = random(&mut rng, shape);
    // Random projection keeps every output entry in play.
    let x = Tensor::param(shape, base.clone());
    let analytic = f(&x).backward().get_or_zeros(&x);
    let h = 1e-2f32;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = f(&Tensor::from_vec(shape, plus)).item() as f64;
        let fm = f(&Tensor::from_vec(shape, minus)).item() as f64;
        let numeric = ((fp - fm) / (2.0 * h as f64)) as f32;
        let err = (numeric - analytic[i]).abs();
        let scale = numeric.abs().max(analytic[i].abs()).max(1e-1);
        assert!(err / scale < 2e-2, "{name}[{i}]: analytic {} vs numeric {numeric}", analytic[i]);
    }
}

fn weights(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(shape, random(&mut rng, shape))
}

fn project(y: &Tensor, seed: u64) -> Tensor {
    y.mul(&weights(seed, y.shape())).sum_all()
}

#[test]
fn elementwise_ops() {
    let other = weights(9, &[2, 3]).add_scalar(2.5);
    check("mul", &[2, 3], 1, |x| project(&x.mul(&other), 2));
    check("div", &[2, 3], 1, |x| project(&x.div(&other), 2));
    check("div_rhs", &[2, 3], 1, |x| project(&other.div(&x.add_scalar(3.0)), 2));
    check("sub", &[2, 3], 1, |x| project(&other.sub(&x), 2));
    check("sigmoid", &[2, 3], 3, |x| project(&x.sigmoid(), 4));
    check("gelu", &[2, 3], 3, |x| project(&x.gelu(), 4));
    check("exp", &[2, 3], 3, |x| project(&x.exp(), 4));
    check("leaky", &[2, 3], 5, |x| project(&x.leaky_relu(0.2), 4));
}

#[test]
fn broadcast_and_reductions() {
    let v = weights(11, &[3]);
    check("add_along", &[2, 3, 2], 1, |x| project(&x.add_along(&v, 1), 2));
    check("mul_along", &[2, 3, 2], 1, |x| project(&x.mul_along(&v, 1), 2));
    let big = weights(12, &[2, 3, 2]);
    check("mul_along_vec", &[3], 1, |x| project(&big.mul_along(x, 1), 2));
    check("sum_axis", &[2, 3, 4], 1, |x| project(&x.sum_axis(1), 2));
    check("mean_axis", &[2, 3, 4], 1, |x| project(&x.mean_axis(2), 2));
    check("max_axis", &[2, 3, 4], 1, |x| project(&x.max_axis(2), 2));
}

#[test]
fn layout_ops() {
    check("permute", &[2, 3, 4], 1, |x| project(&x.permute(&[2, 0, 1]), 2));
    check("narrow", &[2, 5, 2], 1, |x| project(&x.narrow(1, 1, 3), 2));
    let fixed = weights(3, &[2, 1, 2]);
    check("concat", &[2, 3, 2], 1, |x| project(&Tensor::concat(&[fixed.clone(), x.clone()], 1), 2));
    check("resize", &[1, 2, 3, 2, 4], 1, |x| project(&x.resize_trilinear([5, 1, 3]), 2));
}

#[test]
fn normalisation_and_losses() {
    check("softmax", &[2, 3, 4], 1, |x| project(&x.softmax(1), 2));
    check("log_softmax", &[2, 3, 4], 1, |x| project(&x.log_softmax(1), 2));
    check("normalize_last", &[3, 5], 1, |x| project(&x.normalize_last(1e-5), 2));
    check("bce1", &[4, 1], 1, |x| x.scale(3.0).bce_with_logits(1.0));
    check("bce0", &[4, 1], 1, |x| x.scale(3.0).bce_with_logits(0.0));
}

#[test]
fn matrix_products() {
    let b = weights(5, &[2, 3, 4]);
    check("bmm_lhs", &[2, 2, 3], 1, |x| project(&x.bmm(&b, false), 2));
    let a = weights(6, &[2, 2, 3]);
    check("bmm_rhs", &[2, 3, 4], 1, |x| project(&a.bmm(x, false), 2));
    check("bmm_rhs_t", &[2, 4, 3], 1, |x| project(&a.bmm(x, true), 2));
    let bt = weights(7, &[2, 4, 3]);
    check("bmm_lhs_t", &[2, 2, 3], 1, |x| project(&x.bmm(&bt, true), 2));
}

#[test]
fn convolutions() {
    let geo = ConvGeometry::new([3, 3, 2], [1, 2, 1], [1, 1, 0]);
    let w = weights(3, &[2, 3, 3, 3, 2]);
    check("conv_input", &[2, 3, 4, 3, 3], 1, |x| project(&x.conv3d(&w, None, geo), 2));
    let input = weights(4, &[2, 3, 4, 3, 3]);
    check("conv_weight", &[2, 3, 3, 3, 2], 1, |x| project(&input.conv3d(x, None, geo), 2));

    let up = ConvGeometry::cube(2, 2, 0);
    let wt = weights(5, &[3, 2, 2, 2, 2]);
    check("convT_input", &[1, 3, 2, 2, 3], 1, |x| project(&x.conv_transpose3d(&wt, None, up), 2));
    let small = weights(6, &[1, 3, 2, 2, 3]);
    check("convT_weight", &[3, 2, 2, 2, 2], 1, |x| project(&small.conv_transpose3d(x, None, up), 2));

    let pw = ConvGeometry::cube(1, 1, 0);
    let w1 = weights(8, &[4, 3, 1, 1, 1]);
    check("pointwise", &[2, 3, 2, 2, 2], 1, |x| project(&x.conv3d(&w1, None, pw), 2));
}
