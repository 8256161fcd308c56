//! Whole-volume prediction with overlapping windows, comparing uniform and
//! Gaussian blending on a briefly trained network.

use dico::data::{Dataset, PhantomSpec};
use dico::inference::{final_prediction, sliding_window_predict, window_starts, Blending, SlidingWindowConfig};
use dico::losses::LossWeights;
use dico::metrics::dsc;
use dico::networks::BackboneConfig;
use dico::trainer::{ModelConfig, TrainConfig, Trainer, Variant};
use dico::data::CropMode;

fn main() -> dico::error::Result<()> {
    let data = Dataset::phantoms(&PhantomSpec { grid: [32, 32, 32], ..PhantomSpec::default() }, 2, 0, 1)?;
    let model = ModelConfig { conv: BackboneConfig { depth: 3, ..BackboneConfig::conv() }, ..ModelConfig::default() };
    let train = TrainConfig {
        variant: Variant::Supervised,
        total_iterations: 80,
        crop: [16, 16, 16],
        crop_mode: CropMode::Random,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&model, &train, &LossWeights::default())?;
    while !trainer.is_finished() {
        trainer.step(&data)?;
    }

    let case = &data.val[0];
    let gt = case.label.as_ref().expect("validation cases are labeled");
    println!("window starts along 32 with window 16: {:?}", window_starts(32, 16, 0.5));
    for blending in [Blending::Uniform, Blending::Gaussian] {
        for overlap in [0.0, 0.5] {
            let cfg = SlidingWindowConfig { window: [16, 16, 16], overlap, blending, ..SlidingWindowConfig::default() };
            let prob = sliding_window_predict(&trainer.model.m1, &case.image, &cfg)?;
            let score = dsc(&final_prediction(&prob), gt)?;
            println!("{blending:?} overlap {overlap}: dsc {score:.4}");
        }
    }
    Ok(())
}
