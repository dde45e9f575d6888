//! Volumetric carriers and intensity preprocessing.
//!
//! A [`Volume`] is a dense `f32` grid laid out z-major (slice), then y (row),
//! then x (column). [`Mask`] shares the layout but stores binary labels.

use crate::error::{Error, Result};

/// Lower bound of the soft-tissue window applied before normalization.
pub const HU_WINDOW_LO: f32 = -150.0;
/// Upper bound of the soft-tissue window applied before normalization.
pub const HU_WINDOW_HI: f32 = 250.0;

pub type Shape3 = [usize; 3];
pub type Spacing3 = [f64; 3];

fn check_geometry(shape: Shape3, spacing: Spacing3, len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::Shape(format!("dimensions must be positive, got {shape:?}")));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::Shape(format!("spacing must be positive, got {spacing:?}")));
    }
    let expected = shape[0] * shape[1] * shape[2];
    if len != expected {
        return Err(Error::Shape(format!(
            "data length {len} does not match shape {shape:?} ({expected})"
        )));
    }
    Ok(())
}

/// Scalar volume with voxel spacing in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    shape: Shape3,
    spacing: Spacing3,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(shape: Shape3, spacing: Spacing3, data: Vec<f32>) -> Result<Self> {
        check_geometry(shape, spacing, data.len())?;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Range(format!("non-finite voxel at flat index {pos}")));
        }
        Ok(Self {
            shape,
            spacing,
            data,
        })
    }

    pub fn filled(shape: Shape3, spacing: Spacing3, value: f32) -> Result<Self> {
        Self::new(shape, spacing, vec![value; shape.iter().product()])
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn spacing(&self) -> Spacing3 {
        self.spacing
    }

    pub fn nz(&self) -> usize {
        self.shape[0]
    }

    pub fn ny(&self) -> usize {
        self.shape[1]
    }

    pub fn nx(&self) -> usize {
        self.shape[2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape[1] + y) * self.shape[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let plane = self.shape[1] * self.shape[2];
        &self.data[z * plane..(z + 1) * plane]
    }

    /// Applies `f` voxelwise, rejecting non-finite results.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Volume> {
        Volume::new(self.shape, self.spacing, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Builds a volume from stacked planes of identical size.
    pub fn from_planes(planes: &[Vec<f32>], ny: usize, nx: usize, spacing: Spacing3) -> Result<Self> {
        let mut data = Vec::with_capacity(planes.len() * ny * nx);
        for p in planes {
            if p.len() != ny * nx {
                return Err(Error::Shape(format!("plane of {} values, expected {}", p.len(), ny * nx)));
            }
            data.extend_from_slice(p);
        }
        Volume::new([planes.len(), ny, nx], spacing, data)
    }
}

/// Binary label volume. Every voxel is exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    shape: Shape3,
    spacing: Spacing3,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(shape: Shape3, spacing: Spacing3, data: Vec<u8>) -> Result<Self> {
        check_geometry(shape, spacing, data.len())?;
        if let Some(pos) = data.iter().position(|&v| v > 1) {
            return Err(Error::Range(format!("mask value {} at {pos} is not binary", data[pos])));
        }
        Ok(Self {
            shape,
            spacing,
            data,
        })
    }

    pub fn zeros(shape: Shape3, spacing: Spacing3) -> Result<Self> {
        Self::new(shape, spacing, vec![0; shape.iter().product()])
    }

    pub fn ones(shape: Shape3, spacing: Spacing3) -> Result<Self> {
        Self::new(shape, spacing, vec![1; shape.iter().product()])
    }

    /// Interprets a volume of exact 0.0/1.0 values as a mask.
    pub fn from_volume(vol: &Volume) -> Result<Self> {
        let mut data = Vec::with_capacity(vol.len());
        for (i, &v) in vol.data().iter().enumerate() {
            match v {
                v if v == 0.0 => data.push(0),
                v if v == 1.0 => data.push(1),
                _ => return Err(Error::Range(format!("mask voxel {i} has non-binary value {v}"))),
            }
        }
        Mask::new(vol.shape(), vol.spacing(), data)
    }

    pub fn to_volume(&self) -> Volume {
        Volume {
            shape: self.shape,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn spacing(&self) -> Spacing3 {
        self.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape[1] + y) * self.shape[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[self.index(z, y, x)] == 1
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        let plane = self.shape[1] * self.shape[2];
        &self.data[z * plane..(z + 1) * plane]
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn any(&self) -> bool {
        self.data.contains(&1)
    }

    pub fn slice_count(&self, z: usize) -> usize {
        self.slice(z).iter().map(|&v| v as usize).sum()
    }

    /// True when every set voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.shape == other.shape
            && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Mask {
            shape: self.shape,
            spacing: self.spacing,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a & b).collect(),
        })
    }
}

/// Three adjacent slices presented as the three input channels of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSlab {
    /// Channel-major planes, `3 * ny * nx` values.
    pub data: Vec<f32>,
    pub ny: usize,
    pub nx: usize,
    pub center_index: usize,
}

impl ContextSlab {
    pub fn channel(&self, k: usize) -> &[f32] {
        let plane = self.ny * self.nx;
        &self.data[k * plane..(k + 1) * plane]
    }
}

/// Source slice indices for the three context channels around `index`,
/// replicating the boundary slice where the neighbour does not exist.
pub fn context_indices(nz: usize, index: usize) -> [usize; 3] {
    [index.saturating_sub(1), index, (index + 1).min(nz - 1)]
}

/// Clamps every voxel into `[lo, hi]`.
pub fn clip_intensities(vol: &Volume, lo: f32, hi: f32) -> Result<Volume> {
    if !(lo < hi) {
        return Err(Error::Range(format!("clip bounds must satisfy lo < hi, got ({lo}, {hi})")));
    }
    vol.map(|v| v.max(lo).min(hi))
}

/// Affine rescale of the volume so its minimum maps to 0 and maximum to 1.
pub fn min_max_normalize(vol: &Volume) -> Result<Volume> {
    let (lo, hi) = vol.min_max();
    if hi <= lo {
        return Err(Error::DegenerateVolume(format!("constant volume (value {lo})")));
    }
    let (lo, range) = (lo as f64, hi as f64 - lo as f64);
    vol.map(|v| ((v as f64 - lo) / range) as f32)
}

/// Clip to the soft-tissue window, then min-max normalize.
pub fn preprocess(vol: &Volume) -> Result<Volume> {
    min_max_normalize(&clip_intensities(vol, HU_WINDOW_LO, HU_WINDOW_HI)?)
}

pub fn stack_context_slices(vol: &Volume, index: usize) -> Result<ContextSlab> {
    if index >= vol.nz() {
        return Err(Error::Index {
            index,
            len: vol.nz(),
        });
    }
    let idx = context_indices(vol.nz(), index);
    Ok(gather_slab(vol, idx, index))
}

/// Slab whose three channels all hold slice `index`, i.e. a network
/// input without inter-slice context.
pub fn replicate_slice(vol: &Volume, index: usize) -> Result<ContextSlab> {
    if index >= vol.nz() {
        return Err(Error::Index {
            index,
            len: vol.nz(),
        });
    }
    Ok(gather_slab(vol, [index; 3], index))
}

fn gather_slab(vol: &Volume, idx: [usize; 3], center: usize) -> ContextSlab {
    let mut data = Vec::with_capacity(3 * vol.ny() * vol.nx());
    for &z in &idx {
        data.extend_from_slice(vol.slice(z));
    }
    ContextSlab {
        data,
        ny: vol.ny(),
        nx: vol.nx(),
        center_index: center,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(nz: usize, ny: usize, nx: usize) -> Volume {
        let n = nz * ny * nx;
        Volume::new([nz, ny, nx], [1.0; 3], (0..n).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn clip_examples() {
        let v = Volume::new([1, 1, 3], [1.0; 3], vec![-300.0, 100.0, 400.0]).unwrap();
        let c = clip_intensities(&v, -150.0, 250.0).unwrap();
        assert_eq!(c.data(), &[-150.0, 100.0, 250.0]);
        assert!(matches!(clip_intensities(&v, 5.0, 5.0), Err(Error::Range(_))));
        assert!(matches!(clip_intensities(&v, 6.0, 5.0), Err(Error::Range(_))));
    }

    #[test]
    fn normalize_examples() {
        let v = Volume::new([1, 1, 3], [1.0; 3], vec![-150.0, 50.0, 250.0]).unwrap();
        assert_eq!(min_max_normalize(&v).unwrap().data(), &[0.0, 0.5, 1.0]);
        let c = Volume::filled([2, 2, 2], [1.0; 3], 7.0).unwrap();
        assert!(matches!(min_max_normalize(&c), Err(Error::DegenerateVolume(_))));
        let unit = Volume::new([1, 1, 2], [1.0; 3], vec![0.0, 1.0]).unwrap();
        assert_eq!(min_max_normalize(&unit).unwrap(), unit);
    }

    #[test]
    fn context_interior_and_edges() {
        let v = ramp(10, 2, 2);
        let s = stack_context_slices(&v, 5).unwrap();
        assert_eq!(s.channel(0), v.slice(4));
        assert_eq!(s.channel(1), v.slice(5));
        assert_eq!(s.channel(2), v.slice(6));
        assert_eq!(context_indices(10, 0), [0, 0, 1]);
        assert_eq!(context_indices(10, 9), [8, 9, 9]);
        assert_eq!(context_indices(1, 0), [0, 0, 0]);
        assert!(matches!(stack_context_slices(&v, 10), Err(Error::Index { .. })));
    }

    #[test]
    fn replicated_slab_repeats_center() {
        let v = ramp(4, 2, 3);
        let s = replicate_slice(&v, 2).unwrap();
        for k in 0..3 {
            assert_eq!(s.channel(k), v.slice(2));
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Volume::new([0, 1, 1], [1.0; 3], vec![]).is_err());
        assert!(Volume::new([1, 1, 2], [1.0; 3], vec![0.0]).is_err());
        assert!(Volume::new([1, 1, 1], [0.0, 1.0, 1.0], vec![0.0]).is_err());
        assert!(Volume::new([1, 1, 1], [1.0; 3], vec![f32::NAN]).is_err());
        assert!(Mask::new([1, 1, 1], [1.0; 3], vec![2]).is_err());
    }

    #[test]
    fn mask_volume_conversion() {
        let m = Mask::new([1, 2, 2], [1.0; 3], vec![0, 1, 1, 0]).unwrap();
        assert_eq!(Mask::from_volume(&m.to_volume()).unwrap(), m);
        let bad = Volume::new([1, 1, 1], [1.0; 3], vec![0.5]).unwrap();
        assert!(Mask::from_volume(&bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_volume() -> impl Strategy<Value = Volume> {
            (1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(z, y, x)| {
                proptest::collection::vec(-1000.0f32..1000.0, z * y * x)
                    .prop_map(move |d| Volume::new([z, y, x], [1.0, 0.5, 0.5], d).unwrap())
            })
        }

        proptest! {
            #[test]
            fn clip_is_idempotent(v in arb_volume()) {
                let once = clip_intensities(&v, HU_WINDOW_LO, HU_WINDOW_HI).unwrap();
                let twice = clip_intensities(&once, HU_WINDOW_LO, HU_WINDOW_HI).unwrap();
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn normalized_range_is_exact(v in arb_volume()) {
                let (lo, hi) = v.min_max();
                prop_assume!(hi > lo);
                let n = min_max_normalize(&v).unwrap();
                let (nlo, nhi) = n.min_max();
                prop_assert_eq!(nlo, 0.0);
                prop_assert_eq!(nhi, 1.0);
                prop_assert!(n.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
            }

            #[test]
            fn context_never_leaves_volume(nz in 1usize..12, idx in 0usize..12) {
                prop_assume!(idx < nz);
                let c = context_indices(nz, idx);
                prop_assert!(c.iter().all(|&z| z < nz));
                prop_assert_eq!(c[1], idx);
            }
        }
    }
}
