use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], bias: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (c, h, w) = match *input {
            [c, h, w] => (c, h, w),
            _ => return Err(Error::shape("conv2d input dimensions", "C×H×W", input)),
        };
        let (o, kc, kh, kw) = match *kernel {
            [o, kc, kh, kw] => (o, kc, kh, kw),
            _ => return Err(Error::shape("conv2d kernel dimensions", "O×C×KH×KW", kernel)),
        };
        if kc != c {
            return Err(Error::shape("conv2d kernel channels", c, kc));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::shape("conv2d kernel size", "positive", [kh, kw]));
        }
        if bias != [o] {
            return Err(Error::shape("conv2d bias channels", [o], bias));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d stride", "positive", stride));
        }
        if kh > h + 2 * padding {
            return Err(Error::shape("conv2d kernel height vs padded input height", h + 2 * padding, kh));
        }
        if kw > w + 2 * padding {
            return Err(Error::shape("conv2d kernel width vs padded input width", w + 2 * padding, kw));
        }
        Ok(Self {
            in_channels: c,
            in_h: h,
            in_w: w,
            out_channels: o,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        })
    }

    /// Output positions `lo..hi` along one axis for which kernel offset `k`
    /// lands inside the unpadded input.
    fn valid(&self, k: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        // need 0 <= o*s + k - p < in_len
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let hi = if in_len + p > k { ((in_len + p - k - 1) / s + 1).min(out_len) } else { 0 };
        (lo, hi.max(lo))
    }

    /// Visits every (kernel index, input index, output index) triple of
    /// one input/output channel pair.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for ky in 0..self.kernel_h {
            let (oy0, oy1) = self.valid(ky, self.in_h, self.out_h);
            for kx in 0..self.kernel_w {
                let (ox0, ox1) = self.valid(kx, self.in_w, self.out_w);
                let tap = ky * self.kernel_w + kx;
                for oy in oy0..oy1 {
                    let iy = oy * self.stride + ky - self.padding;
                    let in_row = iy * self.in_w;
                    let out_row = oy * self.out_w;
                    for ox in ox0..ox1 {
                        let ix = ox * self.stride + kx - self.padding;
                        f(tap, in_row + ix, out_row + ox);
                    }
                }
            }
        }
    }

    fn planes(&self) -> (usize, usize, usize) {
        (self.in_h * self.in_w, self.out_h * self.out_w, self.kernel_h * self.kernel_w)
    }
}

pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeometry, x: &[T], k: &[T], b: &[T]) -> Vec<T> {
    let (in_plane, out_plane, taps) = g.planes();
    let mut out = vec![T::zero(); g.out_channels * out_plane];
    for (o, out_ch) in out.chunks_exact_mut(out_plane).enumerate() {
        out_ch.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..g.in_channels {
            let xin = &x[c * in_plane..(c + 1) * in_plane];
            let kern = &k[(o * g.in_channels + c) * taps..][..taps];
            g.for_each_tap(|tap, i, j| out_ch[j] += kern[tap] * xin[i]);
        }
    }
    out
}

pub(crate) fn conv2d_backward_input<T: Real>(g: &ConvGeometry, k: &[T], gout: &[T]) -> Vec<T> {
    let (in_plane, out_plane, taps) = g.planes();
    let mut dx = vec![T::zero(); g.in_channels * in_plane];
    for o in 0..g.out_channels {
        let go = &gout[o * out_plane..(o + 1) * out_plane];
        for c in 0..g.in_channels {
            let dxc = &mut dx[c * in_plane..(c + 1) * in_plane];
            let kern = &k[(o * g.in_channels + c) * taps..][..taps];
            g.for_each_tap(|tap, i, j| dxc[i] += kern[tap] * go[j]);
        }
    }
    dx
}

pub(crate) fn conv2d_backward_kernel<T: Real>(g: &ConvGeometry, x: &[T], gout: &[T]) -> Vec<T> {
    let (in_plane, out_plane, taps) = g.planes();
    let mut dk = vec![T::zero(); g.out_channels * g.in_channels * taps];
    for o in 0..g.out_channels {
        let go = &gout[o * out_plane..(o + 1) * out_plane];
        for c in 0..g.in_channels {
            let xin = &x[c * in_plane..(c + 1) * in_plane];
            let dkc = &mut dk[(o * g.in_channels + c) * taps..][..taps];
            g.for_each_tap(|tap, i, j| dkc[tap] += xin[i] * go[j]);
        }
    }
    dk
}
