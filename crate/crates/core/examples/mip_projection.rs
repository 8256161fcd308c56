//! Projects a synthetic vessel phantom along its depth axis and prints the
//! mask projection as text.

use dico::data::{generate_phantom, PhantomSpec};
use dico::volume::mip_project;

fn main() -> dico::error::Result<()> {
    let spec = PhantomSpec { grid: [24, 48, 24], tubes: 3, seed: 7, ..PhantomSpec::default() };
    let phantom = generate_phantom(&spec)?;

    let image = mip_project(phantom.image.tensor())?;
    let mask = mip_project(&phantom.mask.to_tensor())?;
    let [_, _, h, w] = mask.shape();
    println!("volume {:?} -> projection {:?}", phantom.image.shape(), mask.shape());

    for x in 0..h {
        let row: String = (0..w).map(|y| if mask.data()[x * w + y] > 0.0 { '#' } else { '.' }).collect();
        println!("{row}");
    }
    let lit = mask.data().iter().filter(|&&v| v > 0.0).count();
    let brightest = image.data().iter().cloned().fold(f32::MIN, f32::max);
    println!("{lit} of {} pixels lit, brightest image pixel {brightest:.2}", h * w);
    Ok(())
}
