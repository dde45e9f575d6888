//! Layer kernels with explicit forward and backward passes.
//!
//! Each forward returns the activation plus whatever the backward pass needs;
//! backward maps an upstream gradient to input (and parameter) gradients.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Param, Scalar, Tensor4};

/// He-style uniform initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn he_uniform<T: Scalar>(rng: &mut impl Rng, fan_in: usize, len: usize) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    in_shape: [usize; 4],
    out_hw: (usize, usize),
    /// Per-sample im2col matrices; empty when the input itself serves (1x1, stride 1, no pad).
    cols: Vec<Vec<T>>,
    input: Option<Tensor4<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_c * k * k;
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight: Param::new(vec![out_c, in_c, k, k], he_uniform(rng, fan_in, out_c * fan_in)),
            bias: Param::zeros(vec![out_c]),
        }
    }

    pub fn from_params(weight: Param<T>, bias: Param<T>, stride: usize, pad: usize) -> Result<Self> {
        let [out_c, in_c, k, k2]: [usize; 4] = weight
            .shape
            .clone()
            .try_into()
            .map_err(|_| Error::Shape("conv weight must be 4-d".into()))?;
        if k != k2 || bias.shape != [out_c] || stride == 0 {
            return Err(Error::Shape(format!("bad conv params {:?} / {:?}", weight.shape, bias.shape)));
        }
        Ok(Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight,
            bias,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::Shape("stride must be >= 1".into()));
        }
        if h + 2 * self.pad < self.k || w + 2 * self.pad < self.k {
            return Err(Error::Shape(format!("{h}x{w} input too small for {}x{} kernel", self.k, self.k)));
        }
        Ok((
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        ))
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, ho: usize, wo: usize) -> Vec<T> {
        let (k, s, pad) = (self.k, self.stride, self.pad as isize);
        let p = ho * wo;
        let mut cols = vec![T::ZERO; self.in_c * k * k * p];
        for ci in 0..self.in_c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * s) as isize - pad + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s) as isize - pad + kx as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], gin: &mut [T], h: usize, w: usize, ho: usize, wo: usize) {
        let (k, s, pad) = (self.k, self.stride, self.pad as isize);
        let p = ho * wo;
        for ci in 0..self.in_c {
            let plane = &mut gin[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * s) as isize - pad + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * s) as isize - pad + kx as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += row[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, ConvCache<T>)> {
        if x.c != self.in_c {
            return Err(Error::Shape(format!("conv expects {} channels, got {}", self.in_c, x.c)));
        }
        let (ho, wo) = self.output_hw(x.h, x.w)?;
        let p = ho * wo;
        let rows = self.in_c * self.k * self.k;
        let mut out = Tensor4::zeros(x.n, self.out_c, ho, wo);
        let mut cache = ConvCache {
            in_shape: x.shape(),
            out_hw: (ho, wo),
            cols: Vec::new(),
            input: None,
        };
        for n in 0..x.n {
            let sample = x.sample(n);
            let out_s = &mut out.data[n * self.out_c * p..(n + 1) * self.out_c * p];
            for (o, chunk) in out_s.chunks_mut(p).enumerate() {
                chunk.fill(self.bias.value[o]);
            }
            if self.is_pointwise() {
                T::gemm(self.out_c, rows, p, T::ONE, &self.weight.value, rows as isize, 1, sample, p as isize, 1, T::ONE, out_s);
            } else {
                let cols = self.im2col(sample, x.h, x.w, ho, wo);
                T::gemm(self.out_c, rows, p, T::ONE, &self.weight.value, rows as isize, 1, &cols, p as isize, 1, T::ONE, out_s);
                cache.cols.push(cols);
            }
        }
        if self.is_pointwise() {
            cache.input = Some(x.clone());
        }
        Ok((out, cache))
    }

    /// Backward pass. Parameter gradients are accumulated into `grads`; the
    /// input gradient is computed only when `want_input` is set.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        gout: &Tensor4<T>,
        grads: &mut ConvGrads<T>,
        want_input: bool,
    ) -> Option<Tensor4<T>> {
        let [n, _, h, w] = cache.in_shape;
        let (ho, wo) = cache.out_hw;
        let p = ho * wo;
        let rows = self.in_c * self.k * self.k;
        let mut gin = want_input.then(|| Tensor4::zeros(n, self.in_c, h, w));
        let mut dcols = vec![T::ZERO; if self.is_pointwise() { 0 } else { rows * p }];
        for s in 0..n {
            let g = gout.sample(s);
            let cols: &[T] = match &cache.input {
                Some(x) => x.sample(s),
                None => &cache.cols[s],
            };
            T::gemm(self.out_c, p, rows, T::ONE, g, p as isize, 1, cols, 1, p as isize, T::ONE, &mut grads.weight);
            for (o, chunk) in g.chunks(p).enumerate() {
                grads.bias[o] += chunk.iter().copied().sum::<T>();
            }
            if let Some(gin) = gin.as_mut() {
                let gs = &mut gin.data[s * self.in_c * h * w..(s + 1) * self.in_c * h * w];
                if self.is_pointwise() {
                    T::gemm(rows, self.out_c, p, T::ONE, &self.weight.value, 1, rows as isize, g, p as isize, 1, T::ONE, gs);
                } else {
                    T::gemm(rows, self.out_c, p, T::ONE, &self.weight.value, 1, rows as isize, g, p as isize, 1, T::ZERO, &mut dcols);
                    self.col2im(&dcols, gs, h, w, ho, wo);
                }
            }
        }
        gin
    }

    pub fn zero_grads(&self) -> ConvGrads<T> {
        ConvGrads {
            weight: vec![T::ZERO; self.weight.len()],
            bias: vec![T::ZERO; self.bias.len()],
        }
    }
}

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// ReLU backward from the forward *output*; the subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(out: &Tensor4<T>, gout: &Tensor4<T>) -> Tensor4<T> {
    let mut g = gout.clone();
    for (gv, &o) in g.data.iter_mut().zip(&out.data) {
        if !(o > T::ZERO) {
            *gv = T::ZERO;
        }
    }
    g
}

/// Winning input offset for every pooled output.
#[derive(Debug, Clone)]
pub struct PoolCache {
    in_shape: [usize; 4],
    argmax: Vec<u32>,
}

impl PoolCache {
    pub fn argmax(&self) -> &[u32] {
        &self.argmax
    }
}

/// 2x2 max pooling with stride 2. Ties resolve to the first element in
/// row-major order within the window.
pub fn maxpool2<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, PoolCache)> {
    if !x.h.is_multiple_of(2) || !x.w.is_multiple_of(2) {
        return Err(Error::Shape(format!("maxpool2 needs even spatial dims, got {}x{}", x.h, x.w)));
    }
    let (ho, wo) = (x.h / 2, x.w / 2);
    let mut out = Tensor4::zeros(x.n, x.c, ho, wo);
    let mut argmax = Vec::with_capacity(out.len());
    for plane in 0..x.n * x.c {
        let base = plane * x.h * x.w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * x.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * x.w + 2 * ox + dx;
                    if x.data[i] > x.data[best] {
                        best = i;
                    }
                }
                out.data[(plane * ho + oy) * wo + ox] = x.data[best];
                argmax.push(best as u32);
            }
        }
    }
    Ok((
        out,
        PoolCache {
            in_shape: x.shape(),
            argmax,
        },
    ))
}

pub fn maxpool2_backward<T: Scalar>(cache: &PoolCache, gout: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = cache.in_shape;
    let mut gin = Tensor4::zeros(n, c, h, w);
    for (&i, &g) in cache.argmax.iter().zip(&gout.data) {
        gin.data[i as usize] += g;
    }
    gin
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(sigmoid_scalar)
}

/// Sigmoid backward from the forward output `s`: `g * s * (1 - s)`.
pub fn sigmoid_backward<T: Scalar>(out: &Tensor4<T>, gout: &Tensor4<T>) -> Tensor4<T> {
    let mut g = gout.clone();
    for (gv, &s) in g.data.iter_mut().zip(&out.data) {
        *gv *= s * (T::ONE - s);
    }
    g
}

/// Align-corners bilinear interpolation weights along one axis.
#[derive(Debug, Clone)]
struct Axis1d {
    lo: Vec<usize>,
    hi: Vec<usize>,
    t: Vec<f64>,
}

impl Axis1d {
    fn new(n_in: usize, n_out: usize) -> Self {
        let scale = if n_out > 1 { (n_in - 1) as f64 / (n_out - 1) as f64 } else { 0.0 };
        let (mut lo, mut hi, mut t) = (Vec::new(), Vec::new(), Vec::new());
        for o in 0..n_out {
            let pos = o as f64 * scale;
            let l = (pos.floor() as usize).min(n_in - 1);
            let h = (l + 1).min(n_in - 1);
            lo.push(l);
            hi.push(h);
            t.push(pos - l as f64);
        }
        Self { lo, hi, t }
    }
}

/// Checks that `factor` is a power of two of at least 2.
pub fn check_upsample_factor(factor: usize) -> Result<()> {
    if factor < 2 || !factor.is_power_of_two() {
        return Err(Error::Shape(format!("upsample factor must be a power of two >= 2, got {factor}")));
    }
    Ok(())
}

/// Align-corners bilinear upsampling by `factor` along both spatial axes.
pub fn bilinear_upsample<T: Scalar>(x: &Tensor4<T>, factor: usize) -> Result<Tensor4<T>> {
    check_upsample_factor(factor)?;
    let (ho, wo) = (x.h * factor, x.w * factor);
    let ay = Axis1d::new(x.h, ho);
    let ax = Axis1d::new(x.w, wo);
    let mut out = Tensor4::zeros(x.n, x.c, ho, wo);
    for plane in 0..x.n * x.c {
        let src = &x.data[plane * x.h * x.w..(plane + 1) * x.h * x.w];
        let dst = &mut out.data[plane * ho * wo..(plane + 1) * ho * wo];
        for oy in 0..ho {
            let (y0, y1, ty) = (ay.lo[oy], ay.hi[oy], T::from_f64(ay.t[oy]));
            for ox in 0..wo {
                let (x0, x1, tx) = (ax.lo[ox], ax.hi[ox], T::from_f64(ax.t[ox]));
                let top = src[y0 * x.w + x0] * (T::ONE - tx) + src[y0 * x.w + x1] * tx;
                let bot = src[y1 * x.w + x0] * (T::ONE - tx) + src[y1 * x.w + x1] * tx;
                dst[oy * wo + ox] = top * (T::ONE - ty) + bot * ty;
            }
        }
    }
    Ok(out)
}

/// Transpose of [`bilinear_upsample`]: maps an output-sized gradient back to
/// the `h x w` input grid.
pub fn bilinear_upsample_backward<T: Scalar>(gout: &Tensor4<T>, h: usize, w: usize, factor: usize) -> Result<Tensor4<T>> {
    check_upsample_factor(factor)?;
    if gout.h != h * factor || gout.w != w * factor {
        return Err(Error::Shape("upsample gradient has wrong size".into()));
    }
    let (ho, wo) = (gout.h, gout.w);
    let ay = Axis1d::new(h, ho);
    let ax = Axis1d::new(w, wo);
    let mut gin = Tensor4::zeros(gout.n, gout.c, h, w);
    for plane in 0..gout.n * gout.c {
        let g = &gout.data[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut gin.data[plane * h * w..(plane + 1) * h * w];
        for oy in 0..ho {
            let (y0, y1, ty) = (ay.lo[oy], ay.hi[oy], T::from_f64(ay.t[oy]));
            for ox in 0..wo {
                let (x0, x1, tx) = (ax.lo[ox], ax.hi[ox], T::from_f64(ax.t[ox]));
                let v = g[oy * wo + ox];
                dst[y0 * w + x0] += v * (T::ONE - ty) * (T::ONE - tx);
                dst[y0 * w + x1] += v * (T::ONE - ty) * tx;
                dst[y1 * w + x0] += v * ty * (T::ONE - tx);
                dst[y1 * w + x1] += v * ty * tx;
            }
        }
    }
    Ok(gin)
}

/// Spatial mean per channel, producing an `n x c x 1 x 1` tensor.
pub fn global_avg_pool<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let area = T::from_f64((x.h * x.w) as f64);
    let mut out = Tensor4::zeros(x.n, x.c, 1, 1);
    for plane in 0..x.n * x.c {
        let s: T = x.data[plane * x.h * x.w..(plane + 1) * x.h * x.w].iter().copied().sum();
        out.data[plane] = s / area;
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(gout: &Tensor4<T>, h: usize, w: usize) -> Tensor4<T> {
    let area = T::from_f64((h * w) as f64);
    let mut gin = Tensor4::zeros(gout.n, gout.c, h, w);
    for plane in 0..gout.n * gout.c {
        let v = gout.data[plane] / area;
        gin.data[plane * h * w..(plane + 1) * h * w].fill(v);
    }
    gin
}

/// Fully connected layer over the flattened `c * h * w` features of each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Affine<T> {
    pub fn new(in_f: usize, out_f: usize, rng: &mut impl Rng) -> Self {
        Self {
            in_f,
            out_f,
            weight: Param::new(vec![out_f, in_f], he_uniform(rng, in_f, in_f * out_f)),
            bias: Param::zeros(vec![out_f]),
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let feat = x.c * x.h * x.w;
        if feat != self.in_f {
            return Err(Error::Shape(format!("affine expects {} features, got {feat}", self.in_f)));
        }
        let mut out = Tensor4::zeros(x.n, self.out_f, 1, 1);
        for n in 0..x.n {
            out.data[n * self.out_f..(n + 1) * self.out_f].copy_from_slice(&self.bias.value);
        }
        T::gemm(x.n, self.in_f, self.out_f, T::ONE, &x.data, self.in_f as isize, 1, &self.weight.value, 1, self.in_f as isize, T::ONE, &mut out.data);
        Ok(out)
    }

    /// Returns the input gradient, accumulating parameter gradients into `grads`.
    pub fn backward(&self, x: &Tensor4<T>, gout: &Tensor4<T>, grads: &mut ConvGrads<T>) -> Tensor4<T> {
        T::gemm(self.out_f, x.n, self.in_f, T::ONE, &gout.data, 1, self.out_f as isize, &x.data, self.in_f as isize, 1, T::ONE, &mut grads.weight);
        for n in 0..x.n {
            for o in 0..self.out_f {
                grads.bias[o] += gout.data[n * self.out_f + o];
            }
        }
        let mut gin = Tensor4::zeros(x.n, x.c, x.h, x.w);
        T::gemm(x.n, self.out_f, self.in_f, T::ONE, &gout.data, self.out_f as isize, 1, &self.weight.value, self.in_f as isize, 1, T::ZERO, &mut gin.data);
        gin
    }

    pub fn zero_grads(&self) -> ConvGrads<T> {
        ConvGrads {
            weight: vec![T::ZERO; self.weight.len()],
            bias: vec![T::ZERO; self.bias.len()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(h: usize, w: usize, v: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec(1, 1, h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_pointwise_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = Conv2d::<f64>::new(1, 1, 1, 1, 0, &mut rng);
        c.weight.value = vec![1.0];
        let x = t(2, 3, &[1.0, -2.0, 3.0, 4.0, 5.0, -6.0]);
        assert_eq!(c.forward(&x).unwrap().0, x);
    }

    #[test]
    fn ones_kernel_on_one_hot_is_neighbourhood_indicator() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = Conv2d::<f64>::new(1, 1, 3, 1, 1, &mut rng);
        c.weight.value = vec![1.0; 9];
        let mut x = Tensor4::zeros(1, 1, 5, 5);
        x.data[2 * 5 + 1] = 1.0; // hot pixel at (2, 1)
        let (y, _) = c.forward(&x).unwrap();
        for yy in 0..5 {
            for xx in 0..5 {
                // Direct evaluation of the cross-correlation sum.
                let mut e = 0.0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (iy, ix) = (yy as isize + ky - 1, xx as isize + kx - 1);
                        if (0..5).contains(&iy) && (0..5).contains(&ix) {
                            e += x.data[iy as usize * 5 + ix as usize];
                        }
                    }
                }
                assert_eq!(y.at(0, 0, yy, xx), e);
                let near = (yy as isize - 2).abs() <= 1 && (xx as isize - 1).abs() <= 1;
                assert_eq!(e, if near { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn conv_shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Conv2d::<f32>::new(2, 4, 3, 1, 0, &mut rng);
        assert!(c.forward(&Tensor4::zeros(1, 3, 5, 5)).is_err());
        assert!(c.forward(&Tensor4::zeros(1, 2, 2, 2)).is_err());
    }

    #[test]
    fn strided_conv_output_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Conv2d::<f32>::new(1, 2, 3, 2, 1, &mut rng);
        let (y, _) = c.forward(&Tensor4::zeros(1, 1, 7, 8)).unwrap();
        assert_eq!(y.shape(), [1, 2, 4, 4]);
    }

    #[test]
    fn pool_relu_sigmoid_definitions() {
        let (p, _) = maxpool2(&t(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(p.data, vec![4.0]);
        assert_eq!(relu(&t(1, 2, &[-5.0, 5.0])).data, vec![0.0, 5.0]);
        assert_eq!(sigmoid(&t(1, 1, &[0.0])).data, vec![0.5]);
        assert!(maxpool2(&t(1, 3, &[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let x = t(2, 2, &[7.0, 7.0, 7.0, 7.0]);
        let (_, cache) = maxpool2(&x).unwrap();
        let g = maxpool2_backward(&cache, &t(1, 1, &[1.0]));
        assert_eq!(g.data, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_subgradient_at_zero() {
        let x = t(1, 3, &[0.0, 1.0, -1.0]);
        let g = relu_backward(&relu(&x), &t(1, 3, &[1.0, 1.0, 1.0]));
        assert_eq!(g.data, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn upsample_constant_and_ramp() {
        let c = Tensor4::from_vec(1, 1, 3, 2, vec![3.0f64; 6]).unwrap();
        let u = bilinear_upsample(&c, 4).unwrap();
        assert_eq!(u.shape(), [1, 1, 12, 8]);
        assert!(u.data.iter().all(|&v| (v - 3.0).abs() < 1e-15));

        let r = bilinear_upsample(&t(2, 2, &[0.0, 1.0, 0.0, 1.0]), 2).unwrap();
        for row in r.data.chunks(4) {
            for (got, want) in row.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
                assert!((got - want).abs() < 1e-12);
            }
        }
        assert!(bilinear_upsample(&c, 3).is_err());
        assert!(bilinear_upsample(&c, 1).is_err());
    }

    #[test]
    fn gap_and_identity_affine() {
        let x = Tensor4::from_vec(1, 2, 2, 2, vec![2.0f64, 2.0, 2.0, 2.0, 1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(global_avg_pool(&x).data, vec![2.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = Affine::<f64>::new(3, 3, &mut rng);
        a.weight.value = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let v = Tensor4::from_vec(1, 3, 1, 1, vec![0.5, -1.0, 4.0]).unwrap();
        assert_eq!(a.forward(&v).unwrap().data, v.data);
    }
}
