//! NIfTI reading and writing with axis-order normalisation.

use std::path::Path;

use ndarray::{Array3, ArrayD, Axis, IxDyn};
use nifti::{IntoNdArray, NiftiHeader, NiftiObject, ReaderOptions};
use nifti::writer::WriterOptions;

use crate::error::{DicoError, Result};

/// A 3D scalar image in row-major `(H, W, D)` order, with the last axis
/// normalised to the scanner z direction.
#[derive(Debug, Clone)]
pub struct NiftiImage {
    pub data: Vec<f32>,
    pub extents: [usize; 3],
    pub spacing: [f32; 3],
    /// Header of the source file, used as the template when writing
    /// derived images (keeps the affine).
    pub header: NiftiHeader,
    /// `axes[i]` is the stored file axis that became axis `i`.
    pub axes: [usize; 3],
}

/// Stored axis most aligned with scanner z, taken from the sform when set
/// and otherwise assumed to be the third axis.
fn z_axis(h: &NiftiHeader) -> usize {
    if h.sform_code <= 0 {
        return 2;
    }
    let row = h.srow_z;
    let mut best = 2;
    for a in 0..3 {
        if row[a].abs() > row[best].abs() {
            best = a;
        }
    }
    best
}

pub fn read_nifti(path: &Path) -> Result<NiftiImage> {
    if !path.exists() {
        return Err(DicoError::ingestion(path, "file does not exist"));
    }
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| DicoError::ingestion(path, format!("cannot read NIfTI: {e}")))?;
    let header = obj.header().clone();
    let arr: ArrayD<f32> = obj
        .into_volume()
        .into_ndarray::<f32>()
        .map_err(|e| DicoError::ingestion(path, format!("cannot decode voxels: {e}")))?;
    let arr = match arr.ndim() {
        3 => arr,
        4 if arr.shape()[3] == 1 => arr.index_axis_move(Axis(3), 0),
        n => {
            return Err(DicoError::ingestion(
                path,
                format!("expected a 3D volume, found {n} dimensions {:?}", arr.shape()),
            ))
        }
    };
    let z = z_axis(&header);
    let axes = match z {
        0 => [1, 2, 0],
        1 => [0, 2, 1],
        _ => [0, 1, 2],
    };
    let arr = arr.permuted_axes(IxDyn(&axes));
    let s = arr.shape();
    let extents = [s[0], s[1], s[2]];
    let spacing = axes.map(|a| {
        let p = header.pixdim[a + 1].abs();
        if p > 0.0 && p.is_finite() {
            p
        } else {
            1.0
        }
    });
    let data: Vec<f32> = arr.iter().copied().collect();
    if let Some(v) = data.iter().find(|v| !v.is_finite()) {
        return Err(DicoError::ingestion(path, format!("non-finite voxel value {v}")));
    }
    Ok(NiftiImage {
        data,
        extents,
        spacing,
        header,
        axes,
    })
}

/// Header for images without a source file: unit orientation with the
/// given spacing.
pub fn default_header(spacing: [f32; 3]) -> NiftiHeader {
    let mut h = NiftiHeader::default();
    h.pixdim = [1.0, spacing[0], spacing[1], spacing[2], 1.0, 1.0, 1.0, 1.0];
    h.sform_code = 1;
    h.srow_x = [spacing[0], 0.0, 0.0, 0.0];
    h.srow_y = [0.0, spacing[1], 0.0, 0.0];
    h.srow_z = [0.0, 0.0, spacing[2], 0.0];
    h
}

/// Writes `data` (row-major, normalised axis order) using `template` for
/// the header and `axes` to restore the stored axis order.
pub fn write_nifti(path: &Path, data: &[f32], extents: [usize; 3], template: &NiftiHeader, axes: [usize; 3]) -> Result<()> {
    let arr = Array3::from_shape_vec(extents, data.to_vec())
        .map_err(|e| DicoError::Shape(format!("cannot shape voxels as {extents:?}: {e}")))?;
    let mut inverse = [0usize; 3];
    for (i, &a) in axes.iter().enumerate() {
        inverse[a] = i;
    }
    let stored = arr.permuted_axes(inverse).as_standard_layout().to_owned();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| DicoError::io(dir, e))?;
        }
    }
    WriterOptions::new(path)
        .reference_header(template)
        .write_nifti(&stored)
        .map_err(|e| DicoError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })
}

impl NiftiImage {
    pub fn write_like(&self, path: &Path, data: &[f32]) -> Result<()> {
        write_nifti(path, data, self.extents, &self.header, self.axes)
    }
}
