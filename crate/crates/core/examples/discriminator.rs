//! The shape prior: a 2D discriminator learns to tell labeled projections
//! (image MIP fused with the mask MIP) from the same images paired with a
//! blurry, uncertain mask.

use dico::data::{generate_phantom, PhantomSpec};
use dico::losses::discriminator_loss;
use dico::networks::{fuse_for_discriminator, Discriminator2D, DiscriminatorConfig};
use dico::volume::mip_project;
use dico_autograd::{AdamW, AdamWConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dico::error::Result<()> {
    let mut real = Vec::new();
    let mut fake = Vec::new();
    for seed in 0..4 {
        let p = generate_phantom(&PhantomSpec { grid: [32, 32, 16], seed, ..PhantomSpec::default() })?;
        let image = mip_project(p.image.tensor())?;
        let mask = p.mask.to_tensor();
        real.push(fuse_for_discriminator(&image, &mip_project(&mask)?)?);
        // A soft, washed-out prediction of the same vessels.
        let soft = mask.scale(0.4).add_scalar(0.3);
        fake.push(fuse_for_discriminator(&image, &mip_project(&soft)?)?);
    }
    let real = Tensor::concat(&real, 0);
    let fake = Tensor::concat(&fake, 0);
    let (f1, f2) = (fake.narrow(0, 0, 2), fake.narrow(0, 2, 2));

    let mut d = Discriminator2D::new(&DiscriminatorConfig::default(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut opt = AdamW::new(AdamWConfig::default());
    for step in 0..=60 {
        let l = discriminator_loss(&d.forward(&real)?, &d.forward(&f1)?, &d.forward(&f2)?);
        if step % 10 == 0 {
            let r = d.forward(&real)?;
            let f = d.forward(&fake)?;
            let acc = r.data().iter().filter(|&&v| v > 0.0).count() + f.data().iter().filter(|&&v| v < 0.0).count();
            println!("step {step:>2}: l_d {:.4}, accuracy {acc}/8", l.item());
        }
        let g = l.backward();
        opt.step(&mut [&mut d], &g, 1e-3);
    }
    Ok(())
}
