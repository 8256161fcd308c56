//! Overlap and surface metrics between a phantom mask and degraded copies.

use dico::data::{generate_phantom, PhantomSpec};
use dico::metrics::{evaluate_case, MetricConfig, MetricReport};
use dico::volume::LabelMask;

/// Moves the mask by `shift` voxels along the first axis.
fn shifted(mask: &LabelMask, shift: usize) -> LabelMask {
    let [_, _, h, w, d] = mask.shape();
    let mut out = vec![0u8; h * w * d];
    for x in shift..h {
        let (src, dst) = ((x - shift) * w * d, x * w * d);
        out[dst..dst + w * d].copy_from_slice(&mask.data()[src..src + w * d]);
    }
    LabelMask::new(mask.shape(), out).unwrap()
}

fn main() -> dico::error::Result<()> {
    let p = generate_phantom(&PhantomSpec { grid: [24, 24, 24], seed: 1, ..PhantomSpec::default() })?;
    let gt = &p.mask;
    let cfg = MetricConfig::default();
    let mut report = MetricReport::default();
    for shift in 0..4 {
        report.push(format!("shift{shift}"), evaluate_case(&shifted(gt, shift), gt, [1.0; 3], &cfg)?);
    }
    let empty = LabelMask::zeros(gt.shape());
    report.push("empty", evaluate_case(&empty, gt, [1.0; 3], &cfg)?);
    print!("{}", report.to_csv());
    Ok(())
}
