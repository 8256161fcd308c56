//! Overlap and surface metrics on binary masks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{DicoError, Result};
use crate::volume::LabelMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connectivity {
    /// Face neighbours only.
    #[default]
    Six,
    /// Face, edge and corner neighbours.
    TwentySix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// NSD tolerance, in voxels (or physical units when `use_spacing`).
    pub tau: f64,
    pub connectivity: Connectivity,
    /// Measure distances with the voxel spacing instead of unit voxels.
    pub use_spacing: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            tau: 1.0,
            connectivity: Connectivity::Six,
            use_spacing: false,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Vec<String> {
        if self.tau > 0.0 && self.tau.is_finite() {
            Vec::new()
        } else {
            vec![format!("metrics.tau must be positive (got {})", self.tau)]
        }
    }
}

/// A single-case binary grid.
#[derive(Debug, Clone, Copy)]
pub struct Grid<'a> {
    pub data: &'a [u8],
    pub extents: [usize; 3],
}

impl<'a> Grid<'a> {
    pub fn new(data: &'a [u8], extents: [usize; 3]) -> Self {
        assert_eq!(data.len(), extents.iter().product::<usize>(), "grid size mismatch");
        Grid { data, extents }
    }

    fn from_mask(mask: &'a LabelMask) -> Result<Self> {
        let s = mask.shape();
        if s[0] != 1 {
            return Err(DicoError::Shape(format!("metrics expect a single case, got batch {}", s[0])));
        }
        Ok(Grid::new(mask.data(), mask.spatial()))
    }

    fn index(&self, p: [usize; 3]) -> usize {
        (p[0] * self.extents[1] + p[1]) * self.extents[2] + p[2]
    }

    fn is_fg(&self, p: [isize; 3]) -> bool {
        if (0..3).any(|a| p[a] < 0 || p[a] >= self.extents[a] as isize) {
            return false;
        }
        self.data[self.index([p[0] as usize, p[1] as usize, p[2] as usize])] != 0
    }
}

fn pair<'a>(pred: &'a LabelMask, gt: &'a LabelMask) -> Result<(Grid<'a>, Grid<'a>)> {
    if pred.shape() != gt.shape() {
        return Err(DicoError::Shape(format!(
            "prediction {:?} and ground truth {:?} grids differ",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok((Grid::from_mask(pred)?, Grid::from_mask(gt)?))
}

/// `2|P∩G| / (|P|+|G|)`, 1 when both are empty.
pub fn dsc(pred: &LabelMask, gt: &LabelMask) -> Result<f64> {
    let (p, g) = pair(pred, gt)?;
    Ok(dsc_grid(p, g))
}

pub fn dsc_grid(p: Grid, g: Grid) -> f64 {
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (&a, &b) in p.data.iter().zip(g.data) {
        let (a, b) = (a != 0, b != 0);
        inter += (a && b) as usize;
        np += a as usize;
        ng += b as usize;
    }
    if np + ng == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (np + ng) as f64
    }
}

fn neighbour_offsets(conn: Connectivity) -> Vec<[isize; 3]> {
    let mut out = Vec::new();
    for a in -1isize..=1 {
        for b in -1isize..=1 {
            for c in -1isize..=1 {
                let n = a.abs() + b.abs() + c.abs();
                let keep = match conn {
                    Connectivity::Six => n == 1,
                    Connectivity::TwentySix => n > 0,
                };
                if keep {
                    out.push([a, b, c]);
                }
            }
        }
    }
    out
}

/// Foreground voxels with at least one background or out-of-bounds
/// neighbour, in row-major order.
pub fn surface_voxels(mask: &LabelMask, conn: Connectivity) -> Result<Vec<[usize; 3]>> {
    Ok(surface_grid(Grid::from_mask(mask)?, conn))
}

pub fn surface_grid(g: Grid, conn: Connectivity) -> Vec<[usize; 3]> {
    let offs = neighbour_offsets(conn);
    let [h, w, d] = g.extents;
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            for k in 0..d {
                let p = [i as isize, j as isize, k as isize];
                if g.is_fg(p) && offs.iter().any(|o| !g.is_fg([p[0] + o[0], p[1] + o[1], p[2] + o[2]])) {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

/// Exact 1D squared distance transform (lower envelope of parabolas) with
/// sample spacing `w`, in place.
fn edt_1d(f: &mut [f64], w: f64, v: &mut [usize], z: &mut [f64], out: &mut [f64]) {
    let n = f.len();
    let w2 = w * w;
    let mut k = 0usize;
    let mut first = None;
    for q in 0..n {
        if f[q].is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(q0) = first else { return };
    v[0] = q0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let key = |q: usize| f[q] + w2 * (q * q) as f64;
    for q in q0 + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let s = (key(q) - key(v[k])) / (2.0 * w2 * (q - v[k]) as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere.
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
            }
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = (q as f64 - v[k] as f64) * w;
        *o = d * d + f[v[k]];
    }
    f.copy_from_slice(out);
}

/// Squared Euclidean distance from every voxel to the nearest seed voxel.
fn squared_distance_map(seeds: &[[usize; 3]], extents: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let [h, w, d] = extents;
    let mut f = vec![f64::INFINITY; h * w * d];
    for p in seeds {
        f[(p[0] * w + p[1]) * d + p[2]] = 0.0;
    }
    let n = h.max(w).max(d);
    let mut line = vec![0f64; n];
    let mut out = vec![0f64; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let strides = [w * d, d, 1];
    for axis in 0..3 {
        let len = extents[axis];
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for a in 0..extents[others[0]] {
            for b in 0..extents[others[1]] {
                let base = a * strides[others[0]] + b * strides[others[1]];
                for q in 0..len {
                    line[q] = f[base + q * strides[axis]];
                }
                edt_1d(&mut line[..len], spacing[axis], &mut v, &mut z, &mut out[..len]);
                for q in 0..len {
                    f[base + q * strides[axis]] = line[q];
                }
            }
        }
    }
    f
}

/// Distances from each voxel of `from` to the nearest voxel of `to`.
fn nearest_distances(from: &[[usize; 3]], to: &[[usize; 3]], extents: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let map = squared_distance_map(to, extents, spacing);
    from.iter()
        .map(|p| map[(p[0] * extents[1] + p[1]) * extents[2] + p[2]].sqrt())
        .collect()
}

/// Both directional nearest-surface distance lists, or `None` when either
/// mask is empty.
pub fn surface_distances(p: Grid, g: Grid, conn: Connectivity, spacing: [f64; 3]) -> Option<(Vec<f64>, Vec<f64>)> {
    assert_eq!(p.extents, g.extents, "grid mismatch");
    let sp = surface_grid(p, conn);
    let sg = surface_grid(g, conn);
    if sp.is_empty() || sg.is_empty() {
        return None;
    }
    Some((
        nearest_distances(&sp, &sg, p.extents, spacing),
        nearest_distances(&sg, &sp, p.extents, spacing),
    ))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn asd_from_distances(d_pg: &[f64], d_gp: &[f64]) -> f64 {
    0.5 * (mean(d_pg) + mean(d_gp))
}

pub fn nsd_from_distances(d_pg: &[f64], d_gp: &[f64], tau: f64) -> f64 {
    let hit = d_pg.iter().chain(d_gp).filter(|&&d| d <= tau).count();
    hit as f64 / (d_pg.len() + d_gp.len()) as f64
}

/// Symmetric average surface distance in voxels; `None` if either mask is
/// empty.
pub fn asd(pred: &LabelMask, gt: &LabelMask, conn: Connectivity) -> Result<Option<f64>> {
    let (p, g) = pair(pred, gt)?;
    Ok(surface_distances(p, g, conn, [1.0; 3]).map(|(a, b)| asd_from_distances(&a, &b)))
}

/// Fraction of pooled surface voxels within `tau` of the opposing surface;
/// `None` if either mask is empty.
pub fn nsd(pred: &LabelMask, gt: &LabelMask, tau: f64, conn: Connectivity) -> Result<Option<f64>> {
    if !(tau > 0.0) {
        return Err(DicoError::Config(vec![format!("nsd tolerance must be positive (got {tau})")]));
    }
    let (p, g) = pair(pred, gt)?;
    Ok(surface_distances(p, g, conn, [1.0; 3]).map(|(a, b)| nsd_from_distances(&a, &b, tau)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseMetrics {
    pub dsc: f64,
    pub nsd: Option<f64>,
    pub asd: Option<f64>,
}

/// All three metrics for one case. `spacing` is used only when the config
/// asks for physical distances.
pub fn evaluate_case(pred: &LabelMask, gt: &LabelMask, spacing: [f32; 3], cfg: &MetricConfig) -> Result<CaseMetrics> {
    let (p, g) = pair(pred, gt)?;
    let spacing = if cfg.use_spacing { spacing.map(f64::from) } else { [1.0; 3] };
    let surf = surface_distances(p, g, cfg.connectivity, spacing);
    Ok(CaseMetrics {
        dsc: dsc_grid(p, g),
        nsd: surf.as_ref().map(|(a, b)| nsd_from_distances(a, b, cfg.tau)),
        asd: surf.as_ref().map(|(a, b)| asd_from_distances(a, b)),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub cases: Vec<(String, CaseMetrics)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub dsc: f64,
    pub nsd: Option<f64>,
    pub asd: Option<f64>,
    /// Cases without a defined surface metric (an empty mask on either side).
    pub missing: usize,
}

impl MetricReport {
    pub fn push(&mut self, id: impl Into<String>, m: CaseMetrics) {
        self.cases.push((id.into(), m));
    }

    pub fn summary(&self) -> Option<MetricSummary> {
        if self.cases.is_empty() {
            return None;
        }
        let avg = |vals: Vec<f64>| (!vals.is_empty()).then(|| mean(&vals));
        let nsd: Vec<f64> = self.cases.iter().filter_map(|(_, m)| m.nsd).collect();
        let asd: Vec<f64> = self.cases.iter().filter_map(|(_, m)| m.asd).collect();
        Some(MetricSummary {
            dsc: mean(&self.cases.iter().map(|(_, m)| m.dsc).collect::<Vec<_>>()),
            missing: self.cases.len() - asd.len(),
            nsd: avg(nsd),
            asd: avg(asd),
        })
    }

    /// `case_id,dsc,nsd,asd` rows, then a `mean` row and a `missing` row.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        let mut out = String::from("case_id,dsc,nsd,asd\n");
        for (id, m) in &self.cases {
            let _ = writeln!(out, "{id},{:.6},{},{}", m.dsc, fmt(m.nsd), fmt(m.asd));
        }
        if let Some(s) = self.summary() {
            let _ = writeln!(out, "mean,{:.6},{},{}", s.dsc, fmt(s.nsd), fmt(s.asd));
            let _ = writeln!(out, "missing,0,{},{}", s.missing, s.missing);
        }
        out
    }
}
