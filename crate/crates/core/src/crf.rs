//! Fully connected two-label CRF with Potts compatibility and Gaussian
//! appearance (position + intensity) and smoothness (position) kernels,
//! solved by parallel mean-field updates.
//!
//! Pairwise sums are exact over every voxel pair. The smoothness kernel is a
//! separable Gaussian on the voxel grid and is evaluated with 1D passes; the
//! appearance kernel is summed pair by pair.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Mask, Volume};

/// Probabilities are clamped to `[CRF_EPS, 1 - CRF_EPS]` before `-ln`.
pub const CRF_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfParams {
    pub w_app: f64,
    pub w_smooth: f64,
    /// Bandwidths of the position terms, in millimetres.
    pub theta_spatial_app: f64,
    pub theta_intensity: f64,
    pub theta_spatial_smooth: f64,
    pub iterations: usize,
    /// Largest number of voxels solved in one dense model.
    pub max_voxels: usize,
    pub block_slices: usize,
    pub block_overlap: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            w_app: 0.05,
            w_smooth: 0.05,
            theta_spatial_app: 3.0,
            theta_intensity: 0.1,
            theta_spatial_smooth: 1.5,
            iterations: 5,
            max_voxels: 20_000,
            block_slices: 8,
            block_overlap: 2,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        let ok_w = |w: f64| w.is_finite() && w >= 0.0;
        let ok_t = |t: f64| t.is_finite() && t > 0.0;
        if !(ok_w(self.w_app) && ok_w(self.w_smooth)) {
            return Err(Error::Param("CRF kernel weights must be finite and >= 0".into()));
        }
        if !(ok_t(self.theta_spatial_app) && ok_t(self.theta_intensity) && ok_t(self.theta_spatial_smooth)) {
            return Err(Error::Param("CRF bandwidths must be > 0".into()));
        }
        if self.iterations == 0 || self.max_voxels == 0 || self.block_slices == 0 {
            return Err(Error::Param("iterations, max_voxels and block_slices must be positive".into()));
        }
        Ok(())
    }

    pub fn no_pairwise(&self) -> bool {
        self.w_app == 0.0 && self.w_smooth == 0.0
    }
}

/// Dense CRF over the voxels of a box-shaped grid (optionally a subset).
#[derive(Debug, Clone)]
pub struct CrfModel {
    /// Grid the voxels live on.
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    /// Flat grid index of each model voxel, ascending.
    pub voxels: Vec<usize>,
    /// `[background, lesion]` negative log-probabilities.
    pub unary: Vec<[f64; 2]>,
    pub intensity: Vec<f64>,
    pub params: CrfParams,
}

/// Per-voxel `[Q(background), Q(lesion)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalField {
    pub q: Vec<[f64; 2]>,
}

impl MarginalField {
    pub fn labels(&self) -> Vec<u8> {
        self.q.iter().map(|q| (q[1] > q[0]) as u8).collect()
    }

    /// Largest `|Q0 + Q1 - 1|` over voxels.
    pub fn normalization_error(&self) -> f64 {
        self.q.iter().map(|q| (q[0] + q[1] - 1.0).abs()).fold(0.0, f64::max)
    }
}

pub fn unary_from_prob(p: f64) -> [f64; 2] {
    let p = p.clamp(CRF_EPS, 1.0 - CRF_EPS);
    [-(1.0 - p).ln(), -p.ln()]
}

fn softmax_neg(a: f64, b: f64) -> [f64; 2] {
    // softmax of (-a, -b)
    let m = a.min(b);
    let (e0, e1) = ((m - a).exp(), (m - b).exp());
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

pub fn build_crf(prob: &Volume, image: &Volume, params: &CrfParams) -> Result<CrfModel> {
    build_crf_masked(prob, image, None, params)
}

/// Like [`build_crf`], restricted to voxels where `support` is set.
pub fn build_crf_masked(prob: &Volume, image: &Volume, support: Option<&Mask>, params: &CrfParams) -> Result<CrfModel> {
    params.validate()?;
    if prob.shape() != image.shape() {
        return Err(Error::Shape(format!("probabilities {:?} vs image {:?}", prob.shape(), image.shape())));
    }
    if let Some(s) = support {
        if s.shape() != prob.shape() {
            return Err(Error::Shape(format!("support {:?} vs probabilities {:?}", s.shape(), prob.shape())));
        }
    }
    if let Some(v) = prob.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Range(format!("probability {v} outside [0, 1]")));
    }
    let voxels: Vec<usize> = match support {
        Some(s) => (0..s.len()).filter(|&i| s.data()[i] == 1).collect(),
        None => (0..prob.len()).collect(),
    };
    Ok(CrfModel {
        shape: prob.shape(),
        spacing: prob.spacing(),
        unary: voxels.iter().map(|&i| unary_from_prob(prob.data()[i] as f64)).collect(),
        intensity: voxels.iter().map(|&i| image.data()[i] as f64).collect(),
        voxels,
        params: params.clone(),
    })
}

impl CrfModel {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    fn coords(&self, i: usize) -> [usize; 3] {
        let g = self.voxels[i];
        let [_, ny, nx] = self.shape;
        [g / (ny * nx), (g / nx) % ny, g % nx]
    }

    fn sq_dist(&self, a: [usize; 3], b: [usize; 3]) -> f64 {
        (0..3).map(|k| ((a[k] as f64 - b[k] as f64) * self.spacing[k]).powi(2)).sum()
    }

    /// Pairwise kernel between model voxels `i` and `j`.
    pub fn kernel(&self, i: usize, j: usize) -> f64 {
        let p = &self.params;
        let d2 = self.sq_dist(self.coords(i), self.coords(j));
        let di = self.intensity[i] - self.intensity[j];
        p.w_app * (-d2 / (2.0 * p.theta_spatial_app.powi(2)) - di * di / (2.0 * p.theta_intensity.powi(2))).exp()
            + p.w_smooth * (-d2 / (2.0 * p.theta_spatial_smooth.powi(2))).exp()
    }

    /// `Q = softmax(-unary)`, the starting point of inference.
    pub fn unary_softmax(&self) -> MarginalField {
        MarginalField {
            q: self.unary.iter().map(|u| softmax_neg(u[0], u[1])).collect(),
        }
    }

    /// Per-voxel `sum_{j != i} k(i, j) * Q_j(l)` for both labels.
    fn messages(&self, q: &MarginalField) -> Vec<[f64; 2]> {
        let p = &self.params;
        let n = self.len();
        let mut msg = vec![[0.0; 2]; n];
        if p.w_smooth > 0.0 {
            let smooth = self.smooth_messages(q);
            for (m, s) in msg.iter_mut().zip(smooth) {
                m[0] += p.w_smooth * s[0];
                m[1] += p.w_smooth * s[1];
            }
        }
        if p.w_app > 0.0 {
            let app = self.appearance_messages(q);
            for (m, a) in msg.iter_mut().zip(app) {
                m[0] += p.w_app * a[0];
                m[1] += p.w_app * a[1];
            }
        }
        msg
    }

    /// Appearance sums over all pairs. The label fields are scattered onto
    /// the grid (zero off the model voxels, rows padded to whole SIMD lanes)
    /// so every grid row shares one z/y spatial factor and is read
    /// contiguously. Kernel values are evaluated in single precision; row
    /// sums accumulate in double precision.
    fn appearance_messages(&self, q: &MarginalField) -> Vec<[f64; 2]> {
        let p = &self.params;
        let [nz, ny, nx] = self.shape;
        let nxp = nx.div_ceil(LANES) * LANES;
        let axis_table = |k: usize, len: usize| -> Vec<f32> {
            (0..len)
                .map(|d| (-(d as f64 * self.spacing[k]).powi(2) / (2.0 * p.theta_spatial_app.powi(2))).exp())
                .map(|v| if v < FLUSH_TABLE { 0.0 } else { v as f32 })
                .collect()
        };
        let (tz, ty, tx_half) = (axis_table(0, nz), axis_table(1, ny), axis_table(2, nxp));
        // tx[nxp - 1 + d] = factor for signed x offset d
        let tx: Vec<f32> = (0..2 * nxp).map(|k| tx_half[(k as i64 - (nxp as i64 - 1)).unsigned_abs() as usize % nxp]).collect();
        let inv_i = (1.0 / (2.0 * p.theta_intensity.powi(2))) as f32;

        let cells = nz * ny * nxp;
        let (mut int, mut g0, mut g1) = (vec![0.0f32; cells], vec![0.0f32; cells], vec![0.0f32; cells]);
        let mut row_used = vec![false; nz * ny];
        for (v, &g) in self.voxels.iter().enumerate() {
            let (row, x) = (g / nx, g % nx);
            let c = row * nxp + x;
            int[c] = self.intensity[v] as f32;
            g0[c] = flush_q(q.q[v][0]);
            g1[c] = flush_q(q.q[v][1]);
            row_used[row] = true;
        }
        let rows: Vec<usize> = (0..nz * ny).filter(|&r| row_used[r]).collect();
        let grid = AppearanceGrid {
            ny,
            nxp,
            tz: &tz,
            ty: &ty,
            tx: &tx,
            rows: &rows,
            int: &int,
            q0: &g0,
            q1: &g1,
            inv_i,
        };
        let voxel_sums = voxel_sums_impl();
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let g = self.voxels[i];
                let (zi, yi, xi) = (g / (ny * nx), (g / nx) % ny, g % nx);
                let [s0, s1] = voxel_sums(&grid, zi, yi, xi, self.intensity[i] as f32);
                // the sums included j == i with kernel exactly 1
                let c = g / nx * nxp + xi;
                [s0 - g0[c] as f64, s1 - g1[c] as f64]
            })
            .collect()
    }

    /// Smoothness sums by separable Gaussian filtering of the label fields on
    /// the grid (zero off the model voxels), minus each voxel's own term.
    fn smooth_messages(&self, q: &MarginalField) -> Vec<[f64; 2]> {
        let [nz, ny, nx] = self.shape;
        let theta = self.params.theta_spatial_smooth;
        let taps: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                (0..self.shape[k])
                    .map(|d| (-(d as f64 * self.spacing[k]).powi(2) / (2.0 * theta * theta)).exp())
                    .collect()
            })
            .collect();
        let mut out = vec![[0.0; 2]; self.len()];
        for l in 0..2 {
            let mut field = vec![0.0; nz * ny * nx];
            for (v, &g) in self.voxels.iter().enumerate() {
                field[g] = q.q[v][l];
            }
            let strides = [ny * nx, nx, 1];
            for axis in 0..3 {
                field = filter_axis(&field, self.shape, strides[axis], axis, &taps[axis]);
            }
            for (v, &g) in self.voxels.iter().enumerate() {
                out[v][l] = field[g] - q.q[v][l];
            }
        }
        out
    }

    /// Gibbs energy of a labeling of the model voxels.
    pub fn energy(&self, labels: &[u8]) -> Result<f64> {
        if labels.len() != self.len() {
            return Err(Error::Shape(format!("{} labels for {} voxels", labels.len(), self.len())));
        }
        let mut e: f64 = labels.iter().zip(&self.unary).map(|(&l, u)| u[l as usize]).sum();
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                if labels[i] != labels[j] {
                    e += self.kernel(i, j);
                }
            }
        }
        Ok(e)
    }
}

const LANES: usize = 16;

/// `sum_k tx[k] * exp(-(ii - int[k])^2 * c) * q[k]` for both label fields.
// Terms this small are dropped so single-precision arithmetic never meets
// subnormal numbers (which are very slow on common CPUs). Each dropped
// contribution is below 1e-25, and marginals below 1e-10 count as 0, which
// moves a message by at most 1e-10 times the kernel mass.
const FLUSH_TABLE: f64 = 1e-18;
const FLUSH_KERNEL: f32 = 1e-25;
const FLUSH_Q: f64 = 1e-10;

fn flush_q(q: f64) -> f32 {
    if q < FLUSH_Q {
        0.0
    } else {
        q as f32
    }
}

/// Label fields scattered on a lane-padded grid, plus the per-axis spatial
/// factors of the appearance kernel.
struct AppearanceGrid<'a> {
    ny: usize,
    nxp: usize,
    tz: &'a [f32],
    ty: &'a [f32],
    /// `tx[nxp - 1 + d]` is the factor for signed x offset `d`.
    tx: &'a [f32],
    rows: &'a [usize],
    int: &'a [f32],
    q0: &'a [f32],
    q1: &'a [f32],
    inv_i: f32,
}

type VoxelSums = fn(&AppearanceGrid, usize, usize, usize, f32) -> [f64; 2];

/// Picks the widest instruction set available. Every variant performs the
/// same lane-wise IEEE operations in the same order, so results do not
/// depend on the CPU.
fn voxel_sums_impl() -> VoxelSums {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        return |g, z, y, x, ii| {
            // SAFETY: AVX2 support was checked at runtime.
            unsafe { voxel_sums_avx2(g, z, y, x, ii) }
        };
    }
    voxel_sums
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn voxel_sums_avx2(g: &AppearanceGrid, zi: usize, yi: usize, xi: usize, ii: f32) -> [f64; 2] {
    voxel_sums(g, zi, yi, xi, ii)
}

/// `sum_j k_app(i, j) * Q_j` over every grid cell (j == i included).
/// Each row's lane sums are scaled by its z/y factor and accumulated in
/// double precision.
#[inline(always)]
fn voxel_sums(g: &AppearanceGrid, zi: usize, yi: usize, xi: usize, ii: f32) -> [f64; 2] {
    let txi = &g.tx[g.nxp - 1 - xi..2 * g.nxp - 1 - xi];
    let mut acc0 = [0.0f64; LANES];
    let mut acc1 = [0.0f64; LANES];
    for &row in g.rows {
        let szy = g.tz[(row / g.ny).abs_diff(zi)] * g.ty[(row % g.ny).abs_diff(yi)];
        if szy == 0.0 {
            continue;
        }
        let szy = szy as f64;
        let span = row * g.nxp..(row + 1) * g.nxp;
        let mut a0 = [0.0f32; LANES];
        let mut a1 = [0.0f32; LANES];
        let chunks = txi
            .chunks_exact(LANES)
            .zip(g.int[span.clone()].chunks_exact(LANES))
            .zip(g.q0[span.clone()].chunks_exact(LANES).zip(g.q1[span].chunks_exact(LANES)));
        for ((t, v), (p0, p1)) in chunks {
            for l in 0..LANES {
                let d = ii - v[l];
                let w = t[l] * exp_neg(-d * d * g.inv_i);
                let w = if w < FLUSH_KERNEL { 0.0 } else { w };
                a0[l] += w * p0[l];
                a1[l] += w * p1[l];
            }
        }
        for l in 0..LANES {
            acc0[l] += szy * a0[l] as f64;
            acc1[l] += szy * a1[l] as f64;
        }
    }
    [acc0.iter().sum(), acc1.iter().sum()]
}

/// `e^x` for `x <= 0` in single precision (relative error below 3e-7),
/// written without branches so that loops over it vectorize. Arguments below
/// -87 are treated as -87.
#[inline(always)]
fn exp_neg(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    const ROUND: f32 = 12_582_912.0; // 1.5 * 2^23
    let x = x.max(-87.0);
    let t = x * LOG2E + ROUND;
    let n = t - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let p = 1.0 + r * (1.0 + r * (0.5 + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0))))));
    // the low mantissa bits of t hold n as an integer
    let n_bits = t.to_bits().wrapping_sub(ROUND.to_bits());
    p * f32::from_bits(n_bits.wrapping_add(127).wrapping_shl(23))
}

/// Correlates every line along `axis` with the symmetric kernel `taps`
/// (`taps[d]` weights offset `±d`), over the full line.
fn filter_axis(field: &[f64], shape: [usize; 3], stride: usize, axis: usize, taps: &[f64]) -> Vec<f64> {
    let len = shape[axis];
    let mut out = vec![0.0; field.len()];
    let starts: Vec<usize> = (0..field.len()).filter(|&i| (i / stride).is_multiple_of(len)).collect();
    let lines: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&s| {
            let line: Vec<f64> = (0..len).map(|k| field[s + k * stride]).collect();
            (0..len)
                .map(|a| (0..len).map(|b| taps[a.abs_diff(b)] * line[b]).sum())
                .collect()
        })
        .collect();
    for (&s, line) in starts.iter().zip(lines) {
        for (k, v) in line.into_iter().enumerate() {
            out[s + k * stride] = v;
        }
    }
    out
}

/// Mean-field marginals after every iteration (element 0 is the initial
/// unary softmax).
pub fn mean_field_trace(model: &CrfModel) -> Result<Vec<MarginalField>> {
    if model.len() > model.params.max_voxels {
        return Err(Error::Size {
            voxels: model.len(),
            cap: model.params.max_voxels,
        });
    }
    let mut q = model.unary_softmax();
    let mut trace = vec![q.clone()];
    if model.params.no_pairwise() {
        trace.resize(model.params.iterations + 1, q);
        return Ok(trace);
    }
    for _ in 0..model.params.iterations {
        let msg = model.messages(&q);
        // label l pays the kernel mass of voxels currently on the other label
        q = MarginalField {
            q: model
                .unary
                .iter()
                .zip(&msg)
                .map(|(u, m)| softmax_neg(u[0] + m[1], u[1] + m[0]))
                .collect(),
        };
        trace.push(q.clone());
    }
    Ok(trace)
}

pub fn mean_field_infer(model: &CrfModel) -> Result<MarginalField> {
    Ok(mean_field_trace(model)?.pop().expect("trace holds the initial field"))
}

/// Minimum-energy labeling by enumerating all `2^n` labelings.
pub fn exhaustive_map(model: &CrfModel) -> Result<(Vec<u8>, f64)> {
    let n = model.len();
    if n > 20 {
        return Err(Error::Size { voxels: n, cap: 20 });
    }
    let mut best = (Vec::new(), f64::INFINITY);
    for code in 0u32..1 << n {
        let labels: Vec<u8> = (0..n).map(|i| ((code >> i) & 1) as u8).collect();
        let e = model.energy(&labels)?;
        if e < best.1 {
            best = (labels, e);
        }
    }
    Ok(best)
}

/// Refined lesion probabilities `Q(lesion)`.
pub fn refine(prob: &Volume, image: &Volume, params: &CrfParams) -> Result<Volume> {
    refine_masked(prob, image, None, params)
}

/// Refines only voxels inside `support` (others keep their input value).
/// Volumes above the dense cap are solved in overlapping z-blocks whose
/// results are averaged where they overlap; the block depth is halved until
/// every block fits.
pub fn refine_masked(prob: &Volume, image: &Volume, support: Option<&Mask>, params: &CrfParams) -> Result<Volume> {
    params.validate()?;
    if prob.shape() != image.shape() {
        return Err(Error::Shape(format!("probabilities {:?} vs image {:?}", prob.shape(), image.shape())));
    }
    let [nz, ny, nx] = prob.shape();
    let active = |z0: usize, z1: usize| match support {
        Some(s) => s.data()[z0 * ny * nx..z1 * ny * nx].iter().filter(|&&v| v == 1).count(),
        None => (z1 - z0) * ny * nx,
    };
    let mut depth = if active(0, nz) <= params.max_voxels { nz } else { params.block_slices.min(nz) };
    let blocks = loop {
        let overlap = params.block_overlap.min(depth.saturating_sub(1));
        let blocks = z_blocks(nz, depth, overlap);
        if blocks.iter().all(|&(a, b)| active(a, b) <= params.max_voxels) {
            break blocks;
        }
        if depth == 1 {
            return Err(Error::Size {
                voxels: active(0, 1),
                cap: params.max_voxels,
            });
        }
        depth = depth.div_ceil(2);
    };

    let mut sum = vec![0.0f64; prob.len()];
    let mut count = vec![0u32; prob.len()];
    let plane = ny * nx;
    let sub = |v: &Volume, a: usize, b: usize| Volume::new([b - a, ny, nx], v.spacing(), v.data()[a * plane..b * plane].to_vec());
    for &(a, b) in &blocks {
        let p = sub(prob, a, b)?;
        let img = sub(image, a, b)?;
        let sup = support
            .map(|s| Mask::new([b - a, ny, nx], s.spacing(), s.data()[a * plane..b * plane].to_vec()))
            .transpose()?;
        let model = build_crf_masked(&p, &img, sup.as_ref(), params)?;
        if model.is_empty() {
            continue;
        }
        let q = mean_field_infer(&model)?;
        for (v, &g) in model.voxels.iter().enumerate() {
            sum[a * plane + g] += q.q[v][1];
            count[a * plane + g] += 1;
        }
    }
    let data = prob
        .data()
        .iter()
        .enumerate()
        .map(|(i, &p)| if count[i] == 0 { p } else { (sum[i] / count[i] as f64) as f32 })
        .collect();
    Volume::new(prob.shape(), prob.spacing(), data)
}

/// `[start, end)` slice ranges of `depth` slices overlapping by `overlap`,
/// with the last block flush with the end.
pub fn z_blocks(nz: usize, depth: usize, overlap: usize) -> Vec<(usize, usize)> {
    if depth >= nz {
        return vec![(0, nz)];
    }
    let step = depth - overlap;
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        if start + depth >= nz {
            out.push((nz - depth, nz));
            break;
        }
        out.push((start, start + depth));
        start += step;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vol(shape: [usize; 3], data: Vec<f32>) -> Volume {
        Volume::new(shape, [1.0; 3], data).unwrap()
    }

    #[test]
    fn unary_values() {
        let u = unary_from_prob(0.5);
        assert!((u[0] - 2f64.ln()).abs() < 1e-15 && (u[1] - 2f64.ln()).abs() < 1e-15);
        let u = unary_from_prob(1.0);
        assert!(u[1] < 2e-7);
        assert!((u[0] - 16.118).abs() < 1e-3);
        let bad = build_crf(&vol([1, 1, 2], vec![0.5; 2]), &vol([1, 2, 1], vec![0.0; 2]), &CrfParams::default());
        assert!(matches!(bad, Err(Error::Shape(_))));
    }

    #[test]
    fn two_voxel_energy_by_hand() {
        let p = CrfParams {
            w_app: 2.0,
            w_smooth: 0.5,
            theta_spatial_app: 1.5,
            theta_spatial_smooth: 0.8,
            ..Default::default()
        };
        let m = build_crf(&vol([1, 1, 2], vec![0.25, 0.625]), &vol([1, 1, 2], vec![0.4, 0.4]), &p).unwrap();
        let un = unary_from_prob(0.25)[0] + unary_from_prob(0.625)[1];
        let pair = 2.0 * (-1.0f64 / (2.0 * 1.5 * 1.5)).exp() + 0.5 * (-1.0f64 / (2.0 * 0.64)).exp();
        assert!((m.energy(&[0, 1]).unwrap() - (un + pair)).abs() < 1e-12);
        let uniform = unary_from_prob(0.25)[0] + unary_from_prob(0.625)[0];
        assert!((m.energy(&[0, 0]).unwrap() - uniform).abs() < 1e-12);
    }

    #[test]
    fn smooth_filter_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = [3, 4, 5];
        let probs: Vec<f32> = (0..60).map(|_| rng.random()).collect();
        let img: Vec<f32> = (0..60).map(|_| rng.random()).collect();
        let sup = Mask::new(shape, [1.0; 3], (0..60).map(|_| rng.random_bool(0.6) as u8).collect()).unwrap();
        let p = CrfParams {
            w_app: 0.7,
            w_smooth: 1.3,
            ..Default::default()
        };
        let m = build_crf_masked(&vol(shape, probs), &vol(shape, img), Some(&sup), &p).unwrap();
        let q = m.unary_softmax();
        let fast = m.messages(&q);
        for i in 0..m.len() {
            let mut want = [0.0; 2];
            for j in 0..m.len() {
                if i != j {
                    let k = m.kernel(i, j);
                    want[0] += k * q.q[j][0];
                    want[1] += k * q.q[j][1];
                }
            }
            for l in 0..2 {
                assert!((fast[i][l] - want[l]).abs() <= 1e-5 * want[l].max(1.0), "{i} {l}: {} vs {}", fast[i][l], want[l]);
            }
        }
    }

    #[test]
    fn fast_exp_accuracy() {
        for k in 0..=200_000 {
            let x = -(k as f32) * 4e-4;
            let want = (x as f64).exp();
            assert!(((exp_neg(x) as f64) - want).abs() <= 3e-7 * want, "{x}");
        }
        assert_eq!(exp_neg(0.0), 1.0);
        assert!(exp_neg(-1e4) < 1e-37);
    }

    #[test]
    fn zero_pairwise_is_unary_softmax() {
        let p = CrfParams {
            w_app: 0.0,
            w_smooth: 0.0,
            ..Default::default()
        };
        let probs = vec![0.1, 0.5, 0.93, 1.0];
        let m = build_crf(&vol([1, 2, 2], probs.clone()), &vol([1, 2, 2], vec![0.2; 4]), &p).unwrap();
        assert_eq!(mean_field_infer(&m).unwrap(), m.unary_softmax());
        let r = refine(&vol([1, 2, 2], probs.clone()), &vol([1, 2, 2], vec![0.2; 4]), &p).unwrap();
        for (a, b) in r.data().iter().zip(&probs) {
            assert!((a - b.clamp(1e-7, 1.0 - 1e-7)).abs() < 1e-6);
        }
    }

    #[test]
    fn noisy_voxel_matches_map() {
        let mut probs = vec![0.2f32; 8];
        probs[5] = 0.8;
        let p = CrfParams {
            w_app: 0.0,
            w_smooth: 2.0,
            theta_spatial_smooth: 1.5,
            ..Default::default()
        };
        let m = build_crf(&vol([2, 2, 2], probs), &vol([2, 2, 2], vec![0.5; 8]), &p).unwrap();
        let (map, _) = exhaustive_map(&m).unwrap();
        assert_eq!(mean_field_infer(&m).unwrap().labels(), map);
        assert_eq!(map, vec![0; 8]);
    }

    #[test]
    fn isolated_positive_is_suppressed() {
        let mut probs = vec![0.05f32; 27];
        probs[13] = 0.9;
        let p = CrfParams {
            w_app: 3.0,
            w_smooth: 0.0,
            ..Default::default()
        };
        let r = refine(&vol([3, 3, 3], probs), &vol([3, 3, 3], vec![0.4; 27]), &p).unwrap();
        assert!(r.data()[13] < 0.9);
        assert!(r.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn size_cap_and_blocks() {
        let p = CrfParams {
            max_voxels: 4,
            ..Default::default()
        };
        let m = build_crf(&vol([1, 1, 5], vec![0.5; 5]), &vol([1, 1, 5], vec![0.5; 5]), &p).unwrap();
        assert!(matches!(mean_field_infer(&m), Err(Error::Size { .. })));
        assert_eq!(z_blocks(20, 8, 2), vec![(0, 8), (6, 14), (12, 20)]);
        assert_eq!(z_blocks(24, 8, 2), vec![(0, 8), (6, 14), (12, 20), (16, 24)]);
        assert_eq!(z_blocks(5, 8, 2), vec![(0, 5)]);
        // 6 slices of 4 voxels with cap 8: blocks shrink to two slices
        let p = CrfParams {
            max_voxels: 8,
            ..Default::default()
        };
        let r = refine(&vol([6, 2, 2], vec![0.3; 24]), &vol([6, 2, 2], vec![0.5; 24]), &p).unwrap();
        assert_eq!(r.shape(), [6, 2, 2]);
    }

    #[test]
    fn normalized_every_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let probs: Vec<f32> = (0..64).map(|_| rng.random()).collect();
        let img: Vec<f32> = (0..64).map(|_| rng.random()).collect();
        let p = CrfParams {
            w_app: 5.0,
            w_smooth: 3.0,
            ..Default::default()
        };
        let m = build_crf(&vol([4, 4, 4], probs), &vol([4, 4, 4], img), &p).unwrap();
        for q in mean_field_trace(&m).unwrap() {
            assert!(q.normalization_error() < 1e-9);
            assert!(q.q.iter().all(|q| q[0] >= 0.0 && q[1] >= 0.0));
        }
    }
}
