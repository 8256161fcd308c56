//! Ingestion, splitting, cropping and synthetic phantoms.

mod manifest;
mod nifti_io;
mod phantom;

use std::path::Path;

use nifti::NiftiHeader;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DicoError, Result};
use crate::volume::{center_offset, crop_mask_at, crop_volume_at, LabelMask, Volume};

pub use manifest::{format_manifest, parse_manifest, read_manifest, CaseRecord, SplitTag};
pub use nifti_io::{default_header, read_nifti, write_nifti, NiftiImage};
pub use phantom::{generate_phantom, render_tube, Phantom, PhantomSpec, TubePath};

/// Clip bound, in standard deviations, of z-score normalisation.
pub const ZSCORE_CLIP: f32 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Per-volume zero mean and unit variance, clipped to ±5σ.
    #[default]
    ZScore,
    /// Clip to `[low, high]` and rescale to `[0, 1]` (CT windowing).
    Window { low: f32, high: f32 },
}

pub fn normalize(data: &mut [f32], mode: Normalization) {
    match mode {
        Normalization::ZScore => {
            let n = data.len() as f64;
            let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd == 0.0 || !sd.is_finite() {
                data.fill(0.0);
                return;
            }
            for v in data.iter_mut() {
                *v = (((*v as f64 - mean) / sd) as f32).clamp(-ZSCORE_CLIP, ZSCORE_CLIP);
            }
        }
        Normalization::Window { low, high } => {
            let span = high - low;
            for v in data.iter_mut() {
                *v = if span > 0.0 { ((*v - low) / span).clamp(0.0, 1.0) } else { 0.0 };
            }
        }
    }
}

/// One loaded case.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: String,
    pub image: Volume,
    pub label: Option<LabelMask>,
    /// Source header and axis order, for writing outputs aligned with the
    /// input file.
    pub template: Option<(NiftiHeader, [usize; 3])>,
}

impl Case {
    pub fn write_aligned(&self, path: &Path, data: &[f32]) -> Result<()> {
        let (header, axes) = match &self.template {
            Some((h, a)) => (h.clone(), *a),
            None => (default_header(self.image.spacing()), [0, 1, 2]),
        };
        write_nifti(path, data, self.image.spatial(), &header, axes)
    }
}

/// Reads and normalises an unlabeled image.
pub fn load_image(id: impl Into<String>, path: &Path, norm: Normalization) -> Result<Case> {
    let img = read_nifti(path)?;
    let [h, w, d] = img.extents;
    let mut data = img.data;
    normalize(&mut data, norm);
    Ok(Case {
        id: id.into(),
        image: Volume::from_data([1, 1, h, w, d], data)?.with_spacing(img.spacing),
        label: None,
        template: Some((img.header, img.axes)),
    })
}

/// Reads, validates and normalises one case.
pub fn load_case(rec: &CaseRecord, norm: Normalization) -> Result<Case> {
    let case = load_image(rec.id.clone(), &rec.image, norm)?;
    let [h, w, d] = case.image.spatial();
    let label = match &rec.label {
        None => None,
        Some(path) => {
            let lab = read_nifti(path)?;
            if lab.extents != [h, w, d] {
                return Err(DicoError::ingestion(
                    path,
                    format!("label grid {:?} does not match image grid {:?}", lab.extents, [h, w, d]),
                ));
            }
            let mut bits = Vec::with_capacity(lab.data.len());
            for &v in &lab.data {
                match v {
                    x if x == 0.0 => bits.push(0u8),
                    x if x == 1.0 => bits.push(1u8),
                    other => {
                        return Err(DicoError::ingestion(
                            path,
                            format!("label value {other} is not binary (expected 0 or 1)"),
                        ))
                    }
                }
            }
            Some(LabelMask::new([1, 1, h, w, d], bits)?)
        }
    };
    Ok(Case { label, ..case })
}

/// Retags the training records (`labeled-train` / `unlabeled-train`) so
/// that `round(n * fraction)` of them, chosen by `seed` among those with a
/// label, are labeled. Other records pass through unchanged.
pub fn make_split(cases: &[CaseRecord], labeled_fraction: f64, seed: u64) -> Result<Vec<CaseRecord>> {
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(DicoError::Config(vec![format!(
            "labeled fraction must be in (0, 1] (got {labeled_fraction})"
        )]));
    }
    let train: Vec<usize> = (0..cases.len())
        .filter(|&i| matches!(cases[i].split, SplitTag::LabeledTrain | SplitTag::UnlabeledTrain))
        .collect();
    let n_labeled = (train.len() as f64 * labeled_fraction).round() as usize;
    if n_labeled == 0 {
        return Err(DicoError::Data(format!(
            "{} training cases at fraction {labeled_fraction} leave no labeled case",
            train.len()
        )));
    }
    let mut capable: Vec<usize> = train.iter().copied().filter(|&i| cases[i].label.is_some()).collect();
    if capable.len() < n_labeled {
        return Err(DicoError::Data(format!(
            "{n_labeled} labeled cases requested but only {} training cases have labels",
            capable.len()
        )));
    }
    capable.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    capable.truncate(n_labeled);
    let mut out = cases.to_vec();
    for &i in &train {
        out[i].split = if capable.contains(&i) {
            SplitTag::LabeledTrain
        } else {
            SplitTag::UnlabeledTrain
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropMode {
    #[default]
    Center,
    Random,
}

/// Crops an image (and its mask) to `size`. Random mode draws a uniform
/// in-bounds offset per axis; axes smaller than `size` are centre-padded.
pub fn sample_crop(
    image: &Volume,
    mask: Option<&LabelMask>,
    size: [usize; 3],
    mode: CropMode,
    rng: &mut impl Rng,
) -> (Volume, Option<LabelMask>) {
    let ext = image.spatial();
    let centre = center_offset(ext, size);
    let offset = match mode {
        CropMode::Center => centre,
        CropMode::Random => [0, 1, 2].map(|a| {
            if size[a] < ext[a] {
                rng.gen_range(0..=ext[a] - size[a]) as isize
            } else {
                centre[a]
            }
        }),
    };
    (
        crop_volume_at(image, offset, size),
        mask.map(|m| crop_mask_at(m, offset, size)),
    )
}

/// Cases grouped by role.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub labeled: Vec<Case>,
    pub unlabeled: Vec<Case>,
    pub val: Vec<Case>,
    pub test: Vec<Case>,
}

impl Dataset {
    pub fn from_records(records: &[CaseRecord], norm: Normalization) -> Result<Self> {
        let mut ds = Dataset::default();
        for rec in records {
            let case = load_case(rec, norm)?;
            match rec.split {
                SplitTag::LabeledTrain => ds.labeled.push(case),
                SplitTag::UnlabeledTrain => ds.unlabeled.push(Case { label: None, ..case }),
                SplitTag::Val => ds.val.push(case),
                SplitTag::Test => ds.test.push(case),
            }
        }
        Ok(ds)
    }

    /// Normalised phantoms: `labeled`, `unlabeled` and `val` cases with
    /// seeds `base.seed + i`.
    pub fn phantoms(base: &PhantomSpec, labeled: usize, unlabeled: usize, val: usize) -> Result<Self> {
        let mut ds = Dataset::default();
        for i in 0..labeled + unlabeled + val {
            let spec = PhantomSpec {
                seed: base.seed.wrapping_add(i as u64),
                ..base.clone()
            };
            let p = generate_phantom(&spec)?;
            let mut data = p.image.data().to_vec();
            normalize(&mut data, Normalization::ZScore);
            let case = Case {
                id: format!("phantom{:03}", i),
                image: Volume::from_data(p.image.shape(), data)?,
                label: Some(p.mask),
                template: None,
            };
            if i < labeled {
                ds.labeled.push(case);
            } else if i < labeled + unlabeled {
                ds.unlabeled.push(Case { label: None, ..case });
            } else {
                ds.val.push(case);
            }
        }
        Ok(ds)
    }

    pub fn split(&self, tag: SplitTag) -> &[Case] {
        match tag {
            SplitTag::LabeledTrain => &self.labeled,
            SplitTag::UnlabeledTrain => &self.unlabeled,
            SplitTag::Val => &self.val,
            SplitTag::Test => &self.test,
        }
    }
}
