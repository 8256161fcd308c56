//! Shape-checked volume containers, maximum-intensity projection and the
//! multi-view decompose/recompose geometry.
//!
//! Tensors follow the `(B, C, H, W, D)` layout; the last axis is the depth
//! axis that projections collapse.

use dico_autograd::Tensor;

use crate::error::{DicoError, Result};

const AXIS_NAMES: [&str; 3] = ["height", "width", "depth"];

fn shape5(t: &Tensor, what: &str) -> Result<[usize; 5]> {
    match *t.shape() {
        [b, c, h, w, d] => Ok([b, c, h, w, d]),
        _ => Err(DicoError::Shape(format!("{what} must be rank 5 (B, C, H, W, D), got {:?}", t.shape()))),
    }
}

/// Intensity volume with physical voxel spacing in millimetres.
#[derive(Debug, Clone)]
pub struct Volume {
    tensor: Tensor,
    spacing: [f32; 3],
}

impl Volume {
    pub fn new(tensor: Tensor) -> Result<Self> {
        let shape = shape5(&tensor, "volume")?;
        if shape.contains(&0) {
            return Err(DicoError::Shape(format!("volume has a zero extent: {shape:?}")));
        }
        if let Some(i) = tensor.data().iter().position(|v| !v.is_finite()) {
            return Err(DicoError::Data(format!("volume intensity at flat index {i} is not finite")));
        }
        Ok(Volume {
            tensor,
            spacing: [1.0; 3],
        })
    }

    pub fn from_data(shape: [usize; 5], data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(DicoError::Shape(format!("{} values do not fill shape {shape:?}", data.len())));
        }
        Self::new(Tensor::from_vec(&shape, data))
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn shape(&self) -> [usize; 5] {
        let s = self.tensor.shape();
        [s[0], s[1], s[2], s[3], s[4]]
    }

    pub fn spatial(&self) -> [usize; 3] {
        let s = self.shape();
        [s[2], s[3], s[4]]
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        self.tensor.data()
    }
}

/// Binary ground-truth mask `(B, 1, H, W, D)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    shape: [usize; 5],
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(shape: [usize; 5], data: Vec<u8>) -> Result<Self> {
        if shape[1] != 1 {
            return Err(DicoError::Shape(format!("label mask must have one channel, got shape {shape:?}")));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(DicoError::Shape(format!("{} labels do not fill shape {shape:?}", data.len())));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(DicoError::Data(format!("label value {v} is not binary")));
        }
        Ok(LabelMask { shape, data })
    }

    pub fn zeros(shape: [usize; 5]) -> Self {
        LabelMask {
            shape,
            data: vec![0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&self.shape, self.data.iter().map(|&v| v as f32).collect())
    }

    /// `(B, K, H, W, D)` one-hot encoding.
    pub fn one_hot(&self, classes: usize) -> Tensor {
        let [b, _, h, w, d] = self.shape;
        let vol = h * w * d;
        let mut out = vec![0f32; b * classes * vol];
        for s in 0..b {
            for (i, &v) in self.data[s * vol..(s + 1) * vol].iter().enumerate() {
                out[(s * classes + v as usize) * vol + i] = 1.0;
            }
        }
        Tensor::from_vec(&[b, classes, h, w, d], out)
    }

    /// Single sample `b` as its own `(1, 1, H, W, D)` mask.
    pub fn sample(&self, b: usize) -> LabelMask {
        let vol: usize = self.spatial().iter().product();
        LabelMask {
            shape: [1, 1, self.shape[2], self.shape[3], self.shape[4]],
            data: self.data[b * vol..(b + 1) * vol].to_vec(),
        }
    }

    /// Stacks masks with equal spatial extents along the batch axis.
    pub fn stack(parts: &[LabelMask]) -> Result<LabelMask> {
        let first = parts.first().ok_or_else(|| DicoError::Shape("cannot stack zero masks".into()))?;
        let mut data = Vec::new();
        let mut batch = 0;
        for p in parts {
            if p.spatial() != first.spatial() {
                return Err(DicoError::Shape(format!(
                    "cannot stack masks with extents {:?} and {:?}",
                    first.spatial(),
                    p.spatial()
                )));
            }
            batch += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let [_, _, h, w, d] = first.shape;
        LabelMask::new([batch, 1, h, w, d], data)
    }
}

/// Per-voxel class probabilities `(B, K, H, W, D)`.
#[derive(Debug, Clone)]
pub struct ProbMap {
    tensor: Tensor,
}

impl ProbMap {
    /// Wraps an existing probability tensor after checking that each voxel's
    /// class vector lies in `[0, 1]` and sums to 1 within `1e-5`.
    pub fn new(tensor: Tensor) -> Result<Self> {
        let [b, k, h, w, d] = shape5(&tensor, "probability map")?;
        let vol = h * w * d;
        let p = tensor.data();
        for s in 0..b {
            for i in 0..vol {
                let mut sum = 0f64;
                for c in 0..k {
                    let v = p[(s * k + c) * vol + i];
                    if !(0.0..=1.0).contains(&v) {
                        return Err(DicoError::Data(format!("probability {v} outside [0, 1]")));
                    }
                    sum += v as f64;
                }
                if (sum - 1.0).abs() > 1e-5 {
                    return Err(DicoError::Data(format!("class probabilities sum to {sum} at voxel {i}")));
                }
            }
        }
        Ok(ProbMap { tensor })
    }

    /// Wraps a tensor already known to hold per-voxel distributions.
    pub(crate) fn from_probabilities(tensor: Tensor) -> Self {
        ProbMap { tensor }
    }

    /// Channel softmax of logits; keeps the autograd graph.
    pub fn from_logits(logits: &Tensor) -> Result<Self> {
        shape5(logits, "logits")?;
        Ok(ProbMap {
            tensor: logits.softmax(1),
        })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn shape(&self) -> [usize; 5] {
        let s = self.tensor.shape();
        [s[0], s[1], s[2], s[3], s[4]]
    }

    pub fn classes(&self) -> usize {
        self.tensor.dim(1)
    }

    /// Foreground channel `(B, 1, H, W, D)` (class 1).
    pub fn foreground(&self) -> Tensor {
        self.tensor.narrow(1, 1, 1)
    }
}

/// Depth-collapsed image `(B, C, H, W)`.
#[derive(Debug, Clone)]
pub struct Projection2D {
    tensor: Tensor,
}

impl Projection2D {
    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn shape(&self) -> [usize; 4] {
        let s = self.tensor.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn data(&self) -> &[f32] {
        self.tensor.data()
    }
}

/// Maximum-intensity projection along the depth (last) axis.
///
/// Differentiable: the gradient of each output pixel flows to the first
/// voxel along the ray that attains the maximum.
pub fn mip_project(t: &Tensor) -> Result<Projection2D> {
    let [_, _, _, _, d] = shape5(t, "projection input")?;
    if d == 0 {
        return Err(DicoError::Shape("cannot project along a zero-extent depth axis".into()));
    }
    Ok(Projection2D { tensor: t.max_axis(4) })
}

/// Split factors per spatial axis plus the extents of the volume they split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewGeometry {
    pub factors: [usize; 3],
    pub extents: [usize; 3],
}

impl ViewGeometry {
    pub fn new(factors: [usize; 3], extents: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if factors[a] == 0 {
                return Err(DicoError::Shape(format!("{} view factor must be positive", AXIS_NAMES[a])));
            }
            if extents[a] % factors[a] != 0 {
                return Err(DicoError::Shape(format!(
                    "{} extent {} is not divisible by view factor {}",
                    AXIS_NAMES[a], extents[a], factors[a]
                )));
            }
        }
        Ok(ViewGeometry { factors, extents })
    }

    pub fn local_views(&self) -> usize {
        self.factors.iter().product()
    }

    /// Global view plus the local views.
    pub fn views(&self) -> usize {
        self.local_views() + 1
    }

    pub fn view_extents(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.extents[a] / self.factors[a])
    }

    /// Block indices of local view `v` in row-major (h, w, d) order.
    pub fn block(&self, v: usize) -> [usize; 3] {
        let [_, n2, n3] = self.factors;
        [v / (n2 * n3), (v / n3) % n2, v % n3]
    }
}

/// Global view followed by the local views, stacked along the batch axis.
/// View `v` (0 = global, `1 + i` = local block `i`) occupies batch rows
/// `[v * B, (v + 1) * B)`.
#[derive(Debug, Clone)]
pub struct ViewBatch {
    data: Tensor,
    geometry: ViewGeometry,
    batch: usize,
}

impl ViewBatch {
    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn geometry(&self) -> ViewGeometry {
        self.geometry
    }

    /// Batch size of the original volume.
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Same layout and geometry with different per-view content (for example
    /// network features computed from this batch).
    pub fn with_data(&self, data: Tensor) -> Result<ViewBatch> {
        let shape = shape5(&data, "view features")?;
        let expected = self.geometry.views() * self.batch;
        if shape[0] != expected {
            return Err(DicoError::Shape(format!(
                "view batch leading extent {} does not match geometry ({} views x batch {})",
                shape[0],
                self.geometry.views(),
                self.batch
            )));
        }
        if [shape[2], shape[3], shape[4]] != self.geometry.view_extents() {
            return Err(DicoError::Shape(format!(
                "view spatial extents {:?} do not match geometry {:?}",
                &shape[2..],
                self.geometry.view_extents()
            )));
        }
        Ok(ViewBatch {
            data,
            geometry: self.geometry,
            batch: self.batch,
        })
    }
}

/// Splits `x` into one resized global view and `n1*n2*n3` exact local crops.
pub fn decompose_views(x: &Tensor, factors: [usize; 3]) -> Result<ViewBatch> {
    let [b, _, h, w, d] = shape5(x, "multi-view input")?;
    let geometry = ViewGeometry::new(factors, [h, w, d])?;
    let ext = geometry.view_extents();
    let mut parts = Vec::with_capacity(geometry.views());
    parts.push(x.resize_trilinear(ext));
    for v in 0..geometry.local_views() {
        let blk = geometry.block(v);
        parts.push(
            x.narrow(2, blk[0] * ext[0], ext[0])
                .narrow(3, blk[1] * ext[1], ext[1])
                .narrow(4, blk[2] * ext[2], ext[2]),
        );
    }
    Ok(ViewBatch {
        data: Tensor::concat(&parts, 0),
        geometry,
        batch: b,
    })
}

/// Inverse of [`decompose_views`] for per-view feature maps.
///
/// Returns `(global, locals)`: the global component upsampled to the original
/// extents and the local components pasted back at their original offsets.
pub fn recompose_views(views: &ViewBatch) -> Result<(Tensor, Tensor)> {
    let geometry = views.geometry;
    let b = views.batch;
    let t = &views.data;
    let shape = shape5(t, "view batch")?;
    if shape[0] != geometry.views() * b {
        return Err(DicoError::Shape(format!(
            "view batch leading extent {} is not {} views x batch {}",
            shape[0],
            geometry.views(),
            b
        )));
    }
    let global = t.narrow(0, 0, b).resize_trilinear(geometry.extents);
    let [n1, n2, n3] = geometry.factors;
    let local = |v: usize| t.narrow(0, (1 + v) * b, b);
    let mut rows = Vec::with_capacity(n1);
    for i in 0..n1 {
        let mut cols = Vec::with_capacity(n2);
        for j in 0..n2 {
            let depth: Vec<Tensor> = (0..n3).map(|k| local((i * n2 + j) * n3 + k)).collect();
            cols.push(Tensor::concat(&depth, 4));
        }
        rows.push(Tensor::concat(&cols, 3));
    }
    Ok((global, Tensor::concat(&rows, 2)))
}

/// Start offset per axis of a centred crop; negative when the crop is larger
/// than the volume (the low side receives the smaller half of the padding).
pub fn center_offset(extents: [usize; 3], size: [usize; 3]) -> [isize; 3] {
    [0, 1, 2].map(|a| {
        if size[a] <= extents[a] {
            ((extents[a] - size[a]) / 2) as isize
        } else {
            -(((size[a] - extents[a]) / 2) as isize)
        }
    })
}

/// Extracts a `size` window at `offset` from a `(B, C, H, W, D)` buffer,
/// filling out-of-volume positions with `T::default()`.
pub fn crop_buffer<T: Copy + Default>(data: &[T], shape: [usize; 5], offset: [isize; 3], size: [usize; 3]) -> Vec<T> {
    let [b, c, h, w, d] = shape;
    let mut out = vec![T::default(); b * c * size.iter().product::<usize>()];
    let src_at = |axis: usize, i: usize| -> Option<usize> {
        let extent = [h, w, d][axis];
        let s = offset[axis] + i as isize;
        (s >= 0 && (s as usize) < extent).then_some(s as usize)
    };
    for bc in 0..b * c {
        for x in 0..size[0] {
            let Some(sx) = src_at(0, x) else { continue };
            for y in 0..size[1] {
                let Some(sy) = src_at(1, y) else { continue };
                let dst = ((bc * size[0] + x) * size[1] + y) * size[2];
                let src = ((bc * h + sx) * w + sy) * d;
                for z in 0..size[2] {
                    if let Some(sz) = src_at(2, z) {
                        out[dst + z] = data[src + sz];
                    }
                }
            }
        }
    }
    out
}

/// Centred crop, zero-padded symmetrically where the volume is smaller.
pub fn center_crop(vol: &Volume, size: [usize; 3]) -> Volume {
    let offset = center_offset(vol.spatial(), size);
    crop_volume_at(vol, offset, size)
}

pub fn crop_volume_at(vol: &Volume, offset: [isize; 3], size: [usize; 3]) -> Volume {
    let shape = vol.shape();
    let data = crop_buffer(vol.data(), shape, offset, size);
    Volume::from_data([shape[0], shape[1], size[0], size[1], size[2]], data)
        .expect("crop of a valid volume is valid")
        .with_spacing(vol.spacing)
}

pub fn crop_mask_at(mask: &LabelMask, offset: [isize; 3], size: [usize; 3]) -> LabelMask {
    let shape = mask.shape();
    let data = crop_buffer(mask.data(), shape, offset, size);
    LabelMask::new([shape[0], 1, size[0], size[1], size[2]], data).expect("crop of a valid mask is valid")
}
