use dico::error::Result;
use dico::inference::{
    average_probs, blend_weights, final_prediction, sliding_window_predict, window_starts, Blending, SlidingWindowConfig,
};
use dico::networks::SegmentationNet;
use dico::volume::{ProbMap, Volume};
use dico_autograd::{Module, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Foreground logit equal to the input voxel, background logit 0.
struct Pointwise;

/// Foreground logit equal to the window's mean intensity everywhere.
struct WindowMean;

/// Same logits regardless of input.
struct Constant(f32);

macro_rules! parameterless {
    ($($t:ty),*) => {$(
        impl Module for $t {
            fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor)) {}
            fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor)) {}
        }
    )*};
}
parameterless!(Pointwise, WindowMean, Constant);

fn two_channel(x: &Tensor, fg: impl Fn(usize, f32) -> f32) -> Tensor {
    let s = x.shape().to_vec();
    let n: usize = s[2..].iter().product();
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        out[n + i] = fg(i, x.data()[i]);
    }
    Tensor::from_vec(&[1, 2, s[2], s[3], s[4]], out)
}

impl SegmentationNet for Pointwise {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(two_channel(x, |_, v| v))
    }
    fn num_classes(&self) -> usize {
        2
    }
}

impl SegmentationNet for WindowMean {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let m = x.data().iter().sum::<f32>() / x.numel() as f32;
        Ok(two_channel(x, |_, _| m))
    }
    fn num_classes(&self) -> usize {
        2
    }
}

impl SegmentationNet for Constant {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(two_channel(x, |_, _| self.0))
    }
    fn num_classes(&self) -> usize {
        2
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn random_volume(shape: [usize; 5], seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume::from_data(shape, (0..shape.iter().product()).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

fn cfg(window: [usize; 3], overlap: f64, blending: Blending) -> SlidingWindowConfig {
    SlidingWindowConfig { window, overlap, blending, ..SlidingWindowConfig::default() }
}

#[test]
fn single_window_equals_single_forward() {
    let vol = random_volume([1, 1, 4, 4, 4], 0);
    let p = sliding_window_predict(&WindowMean, &vol, &cfg([4, 4, 4], 0.5, Blending::Uniform)).unwrap();
    let direct = WindowMean.forward(vol.tensor()).unwrap().softmax(1);
    for (a, b) in p.tensor().data().iter().zip(direct.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn constant_net_gives_constant_map_for_any_overlap() {
    let vol = random_volume([1, 1, 7, 5, 6], 1);
    for overlap in [0.0, 0.25, 0.5, 0.9] {
        for blending in [Blending::Uniform, Blending::Gaussian] {
            let p = sliding_window_predict(&Constant(0.7), &vol, &cfg([4, 2, 3], overlap, blending)).unwrap();
            let n = 7 * 5 * 6;
            let fg = &p.tensor().data()[n..];
            assert!(fg.iter().all(|&v| (v - sigmoid(0.7)).abs() < 1e-6), "{overlap} {blending:?}");
        }
    }
}

#[test]
fn two_overlapping_windows_average_by_hand() {
    // Depth 6, window 4, overlap 0.5: windows at 0 and 2 share depths 2..4.
    let vol = random_volume([1, 1, 1, 1, 6], 2);
    let x = vol.data();
    let m0 = x[0..4].iter().sum::<f32>() / 4.0;
    let m1 = x[2..6].iter().sum::<f32>() / 4.0;
    let (p0, p1) = (sigmoid(m0), sigmoid(m1));
    let expected = [p0, p0, (p0 + p1) / 2.0, (p0 + p1) / 2.0, p1, p1];
    let p = sliding_window_predict(&WindowMean, &vol, &cfg([1, 1, 4], 0.5, Blending::Uniform)).unwrap();
    for (a, b) in p.tensor().data()[6..].iter().zip(expected) {
        assert!((a - b).abs() < 1e-6);
    }
    // Gaussian blending weighs each window by its profile at that depth.
    let g = blend_weights([1, 1, 4], Blending::Gaussian);
    let p = sliding_window_predict(&WindowMean, &vol, &cfg([1, 1, 4], 0.5, Blending::Gaussian)).unwrap();
    let mix = |a: f64, b: f64| ((a * p0 as f64 + b * p1 as f64) / (a + b)) as f32;
    let expected = [p0, p0, mix(g[2], g[0]), mix(g[3], g[1]), p1, p1];
    for (a, b) in p.tensor().data()[6..].iter().zip(expected) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn small_volumes_are_padded_or_rejected() {
    let vol = random_volume([1, 1, 3, 3, 3], 3);
    let p = sliding_window_predict(&Pointwise, &vol, &cfg([4, 4, 4], 0.5, Blending::Gaussian)).unwrap();
    assert_eq!(p.shape(), [1, 2, 3, 3, 3]);
    let strict = SlidingWindowConfig { pad_to_window: false, ..cfg([4, 4, 4], 0.5, Blending::Gaussian) };
    assert!(sliding_window_predict(&Pointwise, &vol, &strict).is_err());
    assert!(sliding_window_predict(&Pointwise, &vol, &cfg([2, 2, 2], 1.0, Blending::Uniform)).is_err());
}

#[test]
fn final_prediction_rules() {
    let probs = |fg: f32| ProbMap::new(Tensor::from_vec(&[1, 2, 1, 1, 2], vec![1.0 - fg, 1.0 - fg, fg, fg])).unwrap();
    assert_eq!(final_prediction(&probs(0.6)).data(), &[1, 1]);
    assert_eq!(final_prediction(&probs(0.5)).data(), &[0, 0]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let fg: Vec<f32> = (0..60).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut data: Vec<f32> = fg.iter().map(|p| 1.0 - p).collect();
    data.extend(&fg);
    let mask = final_prediction(&ProbMap::new(Tensor::from_vec(&[1, 2, 3, 4, 5], data.clone())).unwrap());
    for i in 0..60 {
        assert_eq!(mask.data()[i], (data[60 + i] > data[i]) as u8);
    }
}

#[test]
fn averaging_two_maps() {
    let a = ProbMap::new(Tensor::from_vec(&[1, 2, 1, 1, 1], vec![0.2, 0.8])).unwrap();
    let b = ProbMap::new(Tensor::from_vec(&[1, 2, 1, 1, 1], vec![0.6, 0.4])).unwrap();
    let m = average_probs(&a, &b).unwrap();
    assert!((m.tensor().data()[0] - 0.4).abs() < 1e-7);
    let c = ProbMap::new(Tensor::from_vec(&[1, 2, 1, 1, 2], vec![0.5; 4])).unwrap();
    assert!(average_probs(&a, &c).is_err());
}

fn config_strategy() -> impl Strategy<Value = ([usize; 3], [usize; 3], f64, Blending)> {
    (
        [1usize..=9, 1usize..=9, 1usize..=9],
        [1usize..=5, 1usize..=5, 1usize..=5],
        prop_oneof![Just(0.0), Just(0.25), Just(0.5), Just(0.75)],
        prop_oneof![Just(Blending::Uniform), Just(Blending::Gaussian)],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn windows_cover_every_voxel_with_positive_weight((ext, win, overlap, blending) in config_strategy()) {
        let mut norm = vec![0f64; ext.iter().product()];
        let weights = blend_weights(win, blending);
        prop_assert!(weights.iter().all(|&w| w > 0.0));
        let starts: Vec<Vec<usize>> = (0..3).map(|a| window_starts(ext[a].max(win[a]), win[a], overlap)).collect();
        for a in 0..3 {
            let s = &starts[a];
            prop_assert_eq!(s[0], 0);
            prop_assert_eq!(*s.last().unwrap() + win[a], ext[a].max(win[a]));
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        }
        for &x0 in &starts[0] {
            for &y0 in &starts[1] {
                for &z0 in &starts[2] {
                    for i in 0..win[0] {
                        for j in 0..win[1] {
                            for k in 0..win[2] {
                                let (x, y, z) = (x0 + i, y0 + j, z0 + k);
                                if x < ext[0] && y < ext[1] && z < ext[2] {
                                    norm[(x * ext[1] + y) * ext[2] + z] += weights[(i * win[1] + j) * win[2] + k];
                                }
                            }
                        }
                    }
                }
            }
        }
        prop_assert!(norm.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn pointwise_net_is_reproduced_exactly((ext, win, overlap, blending) in config_strategy(), seed in 0u64..100) {
        let vol = random_volume([1, 1, ext[0], ext[1], ext[2]], seed);
        let p = sliding_window_predict(&Pointwise, &vol, &cfg(win, overlap, blending)).unwrap();
        let n: usize = ext.iter().product();
        for (i, &x) in vol.data().iter().enumerate() {
            prop_assert!((p.tensor().data()[n + i] - sigmoid(x)).abs() < 1e-5);
        }
    }
}
