//! Matrix products and convolutions on top of `matrixmultiply::sgemm`.

use crate::tensor::Tensor;

/// Strided view of a row-major matrix for [`gemm`].
#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f32],
    rows: usize,
    cols: usize,
    transposed: bool,
}

impl<'a> Mat<'a> {
    fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Mat { data, rows, cols, transposed: false }
    }

    fn t(self) -> Self {
        Mat { transposed: !self.transposed, ..self }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a * b` (overwrite) or `out += a * b` (accumulate).
fn gemm(a: Mat, b: Mat, out: &mut [f32], accumulate: bool) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "gemm inner dimension mismatch");
    assert!(out.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths were checked against the logical shapes above and
    // the strides describe exactly those row-major / transposed layouts.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Batched matrix product of `[B, M, K]` with `[B, K, N]`, or with
    /// `[B, N, K]` when `transpose_rhs` is set.
    pub fn bmm(&self, rhs: &Tensor, transpose_rhs: bool) -> Tensor {
        assert_eq!(self.rank(), 3, "bmm lhs must be rank 3, got {:?}", self.shape());
        assert_eq!(rhs.rank(), 3, "bmm rhs must be rank 3, got {:?}", rhs.shape());
        let (batch, m, k) = (self.dim(0), self.dim(1), self.dim(2));
        assert_eq!(rhs.dim(0), batch, "bmm batch mismatch");
        let (rk, n) = if transpose_rhs {
            (rhs.dim(2), rhs.dim(1))
        } else {
            (rhs.dim(1), rhs.dim(2))
        };
        assert_eq!(k, rk, "bmm inner mismatch {:?} x {:?}", self.shape(), rhs.shape());

        fn rhs_mat(data: &[f32], i: usize, k: usize, n: usize, transposed: bool) -> Mat<'_> {
            let d = &data[i * k * n..(i + 1) * k * n];
            if transposed {
                Mat::new(d, n, k).t()
            } else {
                Mat::new(d, k, n)
            }
        }

        let mut out = vec![0f32; batch * m * n];
        for i in 0..batch {
            let a = Mat::new(&self.data()[i * m * k..(i + 1) * m * k], m, k);
            gemm(a, rhs_mat(rhs.data(), i, k, n, transpose_rhs), &mut out[i * m * n..(i + 1) * m * n], false);
        }
        let (a, b) = (self.clone(), rhs.clone());
        Tensor::from_op(vec![batch, m, n], out, vec![self.clone(), rhs.clone()], move |g, needs| {
            let ga = needs[0].then(|| {
                // dA = dC * B^T
                let mut ga = vec![0f32; batch * m * k];
                for i in 0..batch {
                    let gc = Mat::new(&g[i * m * n..(i + 1) * m * n], m, n);
                    gemm(gc, rhs_mat(b.data(), i, k, n, transpose_rhs).t(), &mut ga[i * m * k..(i + 1) * m * k], false);
                }
                ga
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![0f32; batch * k * n];
                for i in 0..batch {
                    let gc = Mat::new(&g[i * m * n..(i + 1) * m * n], m, n);
                    let am = Mat::new(&a.data()[i * m * k..(i + 1) * m * k], m, k);
                    let dst = &mut gb[i * k * n..(i + 1) * k * n];
                    if transpose_rhs {
                        // B is [N, K]: dB = dC^T * A
                        gemm(gc.t(), am, dst, false);
                    } else {
                        // dB = A^T * dC
                        gemm(am.t(), gc, dst, false);
                    }
                }
                gb
            });
            vec![ga, gb]
        })
    }

    /// `[M, K] x [K, N]`.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.rank(), 2);
        assert_eq!(rhs.rank(), 2);
        let (m, n) = (self.dim(0), rhs.dim(1));
        self.reshape(&[1, m, self.dim(1)])
            .bmm(&rhs.reshape(&[1, rhs.dim(0), n]), false)
            .reshape(&[m, n])
    }
}

/// Geometry of a 3D sliding-kernel operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub fn new(kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        assert!(kernel.iter().chain(&stride).all(|&v| v > 0), "kernel and stride must be positive");
        ConvGeometry { kernel, stride, padding }
    }

    pub fn cube(kernel: usize, stride: usize, padding: usize) -> Self {
        Self::new([kernel; 3], [stride; 3], [padding; 3])
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Output extents of a forward convolution, or `None` if the kernel does
    /// not fit.
    pub fn conv_output(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return None;
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Some(out)
    }

    /// Output extents of a transposed convolution.
    pub fn transpose_output(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let full = (input[a] - 1) * self.stride[a] + self.kernel[a];
            if full <= 2 * self.padding[a] {
                return None;
            }
            out[a] = full - 2 * self.padding[a];
        }
        Some(out)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.padding == [0; 3]
    }
}

fn spatial(shape: &[usize]) -> [usize; 3] {
    [shape[2], shape[3], shape[4]]
}

/// Valid range of output positions `o` for which `o*stride + k - pad` lands
/// inside `[0, extent)`.
fn valid_range(extent: usize, out: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // i = o*s + k - p >= 0  =>  o >= ceil((p - k) / s)
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    // i < extent  =>  o*s < extent + p - k
    let limit = extent + pad;
    let hi = if limit > k { ((limit - k - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds `src` (`[channels, in_dims]`) into `[channels * kvol, out_dims]`.
fn im2col(src: &[f32], channels: usize, in_dims: [usize; 3], out_dims: [usize; 3], geo: &ConvGeometry, cols: &mut [f32]) {
    let [d0, d1, d2] = in_dims;
    let [o0, o1, o2] = out_dims;
    let [k0, k1, k2] = geo.kernel;
    let [s0, s1, s2] = geo.stride;
    let [p0, p1, p2] = geo.padding;
    let ovol = o0 * o1 * o2;
    let r1 = (0..k1).map(|b| valid_range(d1, o1, b, s1, p1)).collect::<Vec<_>>();
    let r2 = (0..k2).map(|e| valid_range(d2, o2, e, s2, p2)).collect::<Vec<_>>();
    for c in 0..channels {
        let plane = &src[c * d0 * d1 * d2..(c + 1) * d0 * d1 * d2];
        for a in 0..k0 {
            let (lo0, hi0) = valid_range(d0, o0, a, s0, p0);
            for b in 0..k1 {
                let (lo1, hi1) = r1[b];
                for e in 0..k2 {
                    let (lo2, hi2) = r2[e];
                    let row = ((c * k0 + a) * k1 + b) * k2 + e;
                    let dst = &mut cols[row * ovol..(row + 1) * ovol];
                    dst.iter_mut().for_each(|v| *v = 0.0);
                    for x0 in lo0..hi0 {
                        let i0 = x0 * s0 + a - p0;
                        for x1 in lo1..hi1 {
                            let i1 = x1 * s1 + b - p1;
                            let src_row = &plane[(i0 * d1 + i1) * d2..(i0 * d1 + i1 + 1) * d2];
                            let dst_row = &mut dst[(x0 * o1 + x1) * o2..(x0 * o1 + x1 + 1) * o2];
                            if s2 == 1 {
                                let start = lo2 + e - p2;
                                dst_row[lo2..hi2].copy_from_slice(&src_row[start..start + (hi2 - lo2)]);
                            } else {
                                for x2 in lo2..hi2 {
                                    dst_row[x2] = src_row[x2 * s2 + e - p2];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `dst`.
fn col2im(cols: &[f32], channels: usize, in_dims: [usize; 3], out_dims: [usize; 3], geo: &ConvGeometry, dst: &mut [f32]) {
    let [d0, d1, d2] = in_dims;
    let [o0, o1, o2] = out_dims;
    let [k0, k1, k2] = geo.kernel;
    let [s0, s1, s2] = geo.stride;
    let [p0, p1, p2] = geo.padding;
    let ovol = o0 * o1 * o2;
    for c in 0..channels {
        let plane = &mut dst[c * d0 * d1 * d2..(c + 1) * d0 * d1 * d2];
        for a in 0..k0 {
            let (lo0, hi0) = valid_range(d0, o0, a, s0, p0);
            for b in 0..k1 {
                let (lo1, hi1) = valid_range(d1, o1, b, s1, p1);
                for e in 0..k2 {
                    let (lo2, hi2) = valid_range(d2, o2, e, s2, p2);
                    let row = ((c * k0 + a) * k1 + b) * k2 + e;
                    let src = &cols[row * ovol..(row + 1) * ovol];
                    for x0 in lo0..hi0 {
                        let i0 = x0 * s0 + a - p0;
                        for x1 in lo1..hi1 {
                            let i1 = x1 * s1 + b - p1;
                            let base = (i0 * d1 + i1) * d2;
                            let src_row = &src[(x0 * o1 + x1) * o2..(x0 * o1 + x1 + 1) * o2];
                            for x2 in lo2..hi2 {
                                plane[base + x2 * s2 + e - p2] += src_row[x2];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// 3D convolution. `self` is `[N, Cin, D0, D1, D2]`, `weight` is
    /// `[Cout, Cin, K0, K1, K2]`, `bias` is `[Cout]`.
    pub fn conv3d(&self, weight: &Tensor, bias: Option<&Tensor>, geo: ConvGeometry) -> Tensor {
        assert_eq!(self.rank(), 5, "conv3d input must be rank 5, got {:?}", self.shape());
        assert_eq!(weight.rank(), 5, "conv3d weight must be rank 5");
        let (n, cin) = (self.dim(0), self.dim(1));
        let cout = weight.dim(0);
        assert_eq!(weight.dim(1), cin, "conv3d channel mismatch: input {:?}, weight {:?}", self.shape(), weight.shape());
        assert_eq!(&weight.shape()[2..], &geo.kernel, "conv3d weight kernel does not match geometry");
        let in_dims = spatial(self.shape());
        let out_dims = geo
            .conv_output(in_dims)
            .unwrap_or_else(|| panic!("conv3d kernel {:?} does not fit input {:?}", geo.kernel, in_dims));
        let ivol: usize = in_dims.iter().product();
        let ovol: usize = out_dims.iter().product();
        let kdim = cin * geo.kernel_volume();
        let pointwise = geo.is_pointwise();

        let mut out = vec![0f32; n * cout * ovol];
        let mut cols = if pointwise { Vec::new() } else { vec![0f32; kdim * ovol] };
        for s in 0..n {
            let x = &self.data()[s * cin * ivol..(s + 1) * cin * ivol];
            let colm = if pointwise {
                Mat::new(x, kdim, ovol)
            } else {
                im2col(x, cin, in_dims, out_dims, &geo, &mut cols);
                Mat::new(&cols, kdim, ovol)
            };
            gemm(Mat::new(weight.data(), cout, kdim), colm, &mut out[s * cout * ovol..(s + 1) * cout * ovol], false);
        }
        let conv = {
            let (x, w) = (self.clone(), weight.clone());
            let shape = vec![n, cout, out_dims[0], out_dims[1], out_dims[2]];
            Tensor::from_op(shape, out, vec![self.clone(), weight.clone()], move |g, needs| {
                let mut gx = needs[0].then(|| vec![0f32; n * cin * ivol]);
                let mut gw = needs[1].then(|| vec![0f32; cout * kdim]);
                let mut cols = vec![0f32; kdim * ovol];
                for s in 0..n {
                    let gs = Mat::new(&g[s * cout * ovol..(s + 1) * cout * ovol], cout, ovol);
                    if let Some(gw) = gw.as_mut() {
                        let xs = &x.data()[s * cin * ivol..(s + 1) * cin * ivol];
                        let colm = if pointwise {
                            Mat::new(xs, kdim, ovol)
                        } else {
                            im2col(xs, cin, in_dims, out_dims, &geo, &mut cols);
                            Mat::new(&cols, kdim, ovol)
                        };
                        gemm(gs, colm.t(), gw, true);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let wt = Mat::new(w.data(), cout, kdim).t();
                        let dst = &mut gx[s * cin * ivol..(s + 1) * cin * ivol];
                        if pointwise {
                            gemm(wt, gs, dst, false);
                        } else {
                            gemm(wt, gs, &mut cols, false);
                            col2im(&cols, cin, in_dims, out_dims, &geo, dst);
                        }
                    }
                }
                vec![gx, gw]
            })
        };
        match bias {
            Some(b) => conv.add_along(b, 1),
            None => conv,
        }
    }

    /// 3D transposed convolution. `self` is `[N, Cin, I0, I1, I2]`, `weight`
    /// is `[Cin, Cout, K0, K1, K2]`, `bias` is `[Cout]`.
    pub fn conv_transpose3d(&self, weight: &Tensor, bias: Option<&Tensor>, geo: ConvGeometry) -> Tensor {
        assert_eq!(self.rank(), 5, "conv_transpose3d input must be rank 5, got {:?}", self.shape());
        let (n, cin) = (self.dim(0), self.dim(1));
        assert_eq!(weight.dim(0), cin, "conv_transpose3d channel mismatch");
        let cout = weight.dim(1);
        assert_eq!(&weight.shape()[2..], &geo.kernel, "conv_transpose3d weight kernel does not match geometry");
        let in_dims = spatial(self.shape());
        let out_dims = geo
            .transpose_output(in_dims)
            .unwrap_or_else(|| panic!("conv_transpose3d padding too large for input {:?}", in_dims));
        // The roles of im2col's "input" and "output" grids swap here.
        debug_assert_eq!(geo.conv_output(out_dims), Some(in_dims));
        let ivol: usize = in_dims.iter().product();
        let ovol: usize = out_dims.iter().product();
        let kdim = cout * geo.kernel_volume();

        let mut out = vec![0f32; n * cout * ovol];
        let mut cols = vec![0f32; kdim * ivol];
        for s in 0..n {
            let xs = Mat::new(&self.data()[s * cin * ivol..(s + 1) * cin * ivol], cin, ivol);
            gemm(Mat::new(weight.data(), cin, kdim).t(), xs, &mut cols, false);
            col2im(&cols, cout, out_dims, in_dims, &geo, &mut out[s * cout * ovol..(s + 1) * cout * ovol]);
        }
        let convt = {
            let (x, w) = (self.clone(), weight.clone());
            let shape = vec![n, cout, out_dims[0], out_dims[1], out_dims[2]];
            Tensor::from_op(shape, out, vec![self.clone(), weight.clone()], move |g, needs| {
                let mut gx = needs[0].then(|| vec![0f32; n * cin * ivol]);
                let mut gw = needs[1].then(|| vec![0f32; cin * kdim]);
                let mut cols = vec![0f32; kdim * ivol];
                for s in 0..n {
                    im2col(&g[s * cout * ovol..(s + 1) * cout * ovol], cout, out_dims, in_dims, &geo, &mut cols);
                    let colm = Mat::new(&cols, kdim, ivol);
                    if let Some(gx) = gx.as_mut() {
                        gemm(Mat::new(w.data(), cin, kdim), colm, &mut gx[s * cin * ivol..(s + 1) * cin * ivol], false);
                    }
                    if let Some(gw) = gw.as_mut() {
                        let xs = Mat::new(&x.data()[s * cin * ivol..(s + 1) * cin * ivol], cin, ivol);
                        gemm(xs, colm.t(), gw, true);
                    }
                }
                vec![gx, gw]
            })
        };
        match bias {
            Some(b) => convt.add_along(b, 1),
            None => convt,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 7-deep loop convolution.
    fn naive_conv(x: &Tensor, w: &Tensor, geo: ConvGeometry) -> Vec<f32> {
        let (n, cin) = (x.dim(0), x.dim(1));
        let cout = w.dim(0);
        let d = spatial(x.shape());
        let o = geo.conv_output(d).unwrap();
        let k = geo.kernel;
        let mut out = vec![0f32; n * cout * o.iter().product::<usize>()];
        let xi = |s: usize, c: usize, i: [isize; 3]| -> f32 {
            if (0..3).any(|a| i[a] < 0 || i[a] >= d[a] as isize) {
                return 0.0;
            }
            x.data()[(((s * cin + c) * d[0] + i[0] as usize) * d[1] + i[1] as usize) * d[2] + i[2] as usize]
        };
        for s in 0..n {
            for co in 0..cout {
                for a in 0..o[0] {
                    for b in 0..o[1] {
                        for e in 0..o[2] {
                            let mut acc = 0f32;
                            for ci in 0..cin {
                                for p in 0..k[0] {
                                    for q in 0..k[1] {
                                        for r in 0..k[2] {
                                            let idx = [
                                                (a * geo.stride[0] + p) as isize - geo.padding[0] as isize,
                                                (b * geo.stride[1] + q) as isize - geo.padding[1] as isize,
                                                (e * geo.stride[2] + r) as isize - geo.padding[2] as isize,
                                            ];
                                            let wv = w.data()[(((co * cin + ci) * k[0] + p) * k[1] + q) * k[2] + r];
                                            acc += wv * xi(s, ci, idx);
                                        }
                                    }
                                }
                            }
                            out[(((s * cout + co) * o[0] + a) * o[1] + b) * o[2] + e] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], scale: f32) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 37 % 11) as f32 - 5.0) * scale).collect())
    }

    #[test]
    fn conv3d_matches_naive_loops() {
        for geo in [
            ConvGeometry::cube(3, 1, 1),
            ConvGeometry::cube(2, 2, 0),
            ConvGeometry::new([3, 3, 1], [2, 2, 1], [1, 1, 0]),
            ConvGeometry::cube(1, 1, 0),
            ConvGeometry::new([3, 1, 2], [1, 2, 1], [0, 0, 1]),
        ] {
            let x = ramp(&[2, 3, 5, 4, 6], 0.1);
            let w = ramp(&[4, 3, geo.kernel[0], geo.kernel[1], geo.kernel[2]], 0.05);
            let y = x.conv3d(&w, None, geo);
            let expected = naive_conv(&x, &w, geo);
            for (a, b) in y.data().iter().zip(&expected) {
                assert!((a - b).abs() < 1e-4, "{geo:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with the same weight.
        let geo = ConvGeometry::cube(2, 2, 0);
        let x = ramp(&[1, 3, 4, 4, 6], 0.1);
        let w = ramp(&[5, 3, 2, 2, 2], 0.07);
        let y = ramp(&[1, 5, 2, 2, 3], 0.03);
        let cx = x.conv3d(&w, None, geo);
        // convT weight layout is [Cin_of_T, Cout_of_T, ..] = [5, 3, ..], i.e. the
        // same buffer as the conv weight [Cout, Cin, ..].
        let ty = y.conv_transpose3d(&w, None, geo);
        assert_eq!(ty.shape(), x.shape());
        let lhs: f32 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn bmm_transposed_rhs() {
        let a = Tensor::from_vec(&[1, 2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::from_vec(&[1, 2, 3], vec![1., 0., 1., 0., 1., 0.]);
        let c = a.bmm(&b, true);
        assert_eq!(c.shape(), &[1, 2, 2]);
        assert_eq!(c.data(), &[4., 2., 10., 5.]);
    }
}
