//! Synthetic CT-like phantoms with exact liver and lesion ground truth.
//!
//! The liver is an ellipsoid whose surface is perturbed by a few
//! low-frequency radial harmonics; lesions are spheres placed so that every
//! voxel they cover lies inside the liver. Randomness comes from a ChaCha8
//! stream seeded per case, so a parameter set always reproduces the same
//! bytes.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rvol;
use crate::volume::{Mask, Shape3, Spacing3, Volume, HU_WINDOW_HI, HU_WINDOW_LO};

/// Name of the random generator used for every seeded stream in this crate.
pub const RNG_ALGORITHM: &str = "chacha8";

const MAX_PLACEMENT_ATTEMPTS: usize = 2000;
const HARMONICS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomParams {
    pub shape: Shape3,
    pub spacing: Spacing3,
    /// Liver semi-axis along each axis as a fraction of that axis' extent.
    pub liver_radius_range: (f64, f64),
    /// Relative amplitude of the radial surface perturbation.
    pub liver_deformation: f64,
    /// Inclusive range for the number of lesions.
    pub lesion_count_range: (usize, usize),
    /// Lesion sphere radius in voxels.
    pub lesion_radius_range: (f64, f64),
    pub intensity_liver: f32,
    pub intensity_lesion: f32,
    pub intensity_background: f32,
    pub noise_sigma: f32,
    /// Adds a second, liver-like ellipsoid outside the liver.
    pub distractor: bool,
    pub intensity_distractor: f32,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            shape: [24, 64, 64],
            spacing: [1.0, 1.0, 1.0],
            liver_radius_range: (0.36, 0.43),
            liver_deformation: 0.08,
            lesion_count_range: (1, 2),
            lesion_radius_range: (5.0, 7.5),
            intensity_liver: 110.0,
            intensity_lesion: 50.0,
            intensity_background: -60.0,
            noise_sigma: 20.0,
            distractor: false,
            intensity_distractor: 160.0,
            seed: 1,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Param(m));
        if self.shape.contains(&0) {
            return bad(format!("shape must be positive, got {:?}", self.shape));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return bad(format!("spacing must be positive, got {:?}", self.spacing));
        }
        let (rlo, rhi) = self.liver_radius_range;
        if !(rlo > 0.0 && rlo <= rhi && rhi <= 0.5) {
            return bad(format!("liver_radius_range must satisfy 0 < lo <= hi <= 0.5, got {rlo}..{rhi}"));
        }
        if !(0.0..0.5).contains(&self.liver_deformation) {
            return bad(format!("liver_deformation must be in [0, 0.5), got {}", self.liver_deformation));
        }
        let (clo, chi) = self.lesion_count_range;
        if clo > chi {
            return bad(format!("lesion_count_range is empty: {clo}..={chi}"));
        }
        let (llo, lhi) = self.lesion_radius_range;
        if !(llo > 0.0 && llo <= lhi) {
            return bad(format!("lesion_radius_range must satisfy 0 < lo <= hi, got {llo}..{lhi}"));
        }
        if lhi >= self.max_liver_radius_voxels() {
            return bad(format!(
                "lesion radius {lhi} must be smaller than the largest liver semi-axis {:.2}",
                self.max_liver_radius_voxels()
            ));
        }
        let means = [self.intensity_liver, self.intensity_lesion, self.intensity_background];
        if means[0] == means[1] || means[0] == means[2] || means[1] == means[2] {
            return bad("intensity means must be pairwise distinct".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        Ok(())
    }

    fn max_liver_radius_voxels(&self) -> f64 {
        let shrink = 1.0 - self.liver_deformation;
        self.shape
            .iter()
            .map(|&d| d as f64 * self.liver_radius_range.0 * shrink)
            .fold(0.0, f64::max)
    }
}

/// One phantom with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCase {
    pub case_id: String,
    pub image: Volume,
    pub liver: Mask,
    pub lesion: Mask,
}

impl LabeledCase {
    pub fn validate(&self) -> Result<()> {
        if self.image.shape() != self.liver.shape() || self.image.shape() != self.lesion.shape() {
            return Err(Error::Shape(format!("case {} has inconsistent shapes", self.case_id)));
        }
        if !self.liver.any() {
            return Err(Error::Param(format!("case {} has an empty liver", self.case_id)));
        }
        if !self.lesion.is_subset_of(&self.liver) {
            return Err(Error::Param(format!("case {}: lesion extends outside liver", self.case_id)));
        }
        Ok(())
    }
}

/// Smooth star-shaped body: unit ellipsoid radius scaled by `1 + Σ harmonics`.
struct Blob {
    center: [f64; 3],
    semi: [f64; 3],
    dirs: [[f64; 3]; HARMONICS],
    freq: [f64; HARMONICS],
    phase: [f64; HARMONICS],
    amp: [f64; HARMONICS],
}

impl Blob {
    fn sample(rng: &mut ChaCha8Rng, center: [f64; 3], semi: [f64; 3], deformation: f64) -> Self {
        let mut dirs = [[0.0; 3]; HARMONICS];
        let mut freq = [0.0; HARMONICS];
        let mut phase = [0.0; HARMONICS];
        let mut amp = [0.0; HARMONICS];
        for k in 0..HARMONICS {
            dirs[k] = UnitSphere.sample(rng);
            freq[k] = rng.random_range(1.0..3.0);
            phase[k] = rng.random_range(0.0..std::f64::consts::TAU);
            amp[k] = deformation / HARMONICS as f64 * rng.random_range(0.5..1.0);
        }
        Self {
            center,
            semi,
            dirs,
            freq,
            phase,
            amp,
        }
    }

    fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        let p = [
            (z as f64 - self.center[0]) / self.semi[0],
            (y as f64 - self.center[1]) / self.semi[1],
            (x as f64 - self.center[2]) / self.semi[2],
        ];
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if r == 0.0 {
            return true;
        }
        let u = [p[0] / r, p[1] / r, p[2] / r];
        let mut scale = 1.0;
        for k in 0..HARMONICS {
            let d = self.dirs[k];
            let proj = d[0] * u[0] + d[1] * u[1] + d[2] * u[2];
            scale += self.amp[k] * (self.freq[k] * std::f64::consts::PI * proj + self.phase[k]).sin();
        }
        r <= scale
    }
}

fn sphere_voxels(shape: Shape3, c: [f64; 3], r: f64) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    let lo = |a: usize| (c[a] - r).floor();
    let hi = |a: usize| (c[a] + r).ceil();
    if (0..3).any(|a| lo(a) < 0.0 || hi(a) > (shape[a] - 1) as f64) {
        return None;
    }
    for z in lo(0) as usize..=hi(0) as usize {
        for y in lo(1) as usize..=hi(1) as usize {
            for x in lo(2) as usize..=hi(2) as usize {
                let d2 = (z as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (x as f64 - c[2]).powi(2);
                if d2 <= r * r {
                    out.push((z * shape[1] + y) * shape[2] + x);
                }
            }
        }
    }
    Some(out)
}

pub fn generate_phantom(params: &PhantomParams, case_id: &str) -> Result<LabeledCase> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let shape = params.shape;
    let n = shape.iter().product::<usize>();
    let plane = shape[1] * shape[2];

    let frac = rng.random_range(params.liver_radius_range.0..=params.liver_radius_range.1);
    let semi = shape.map(|d| d as f64 * frac);
    let center: [f64; 3] = std::array::from_fn(|a| {
        let mid = (shape[a] as f64 - 1.0) / 2.0;
        let slack = (shape[a] as f64 / 2.0 - semi[a] * (1.0 + params.liver_deformation)).max(0.0);
        mid + rng.random_range(-0.5..=0.5) * slack
    });
    let liver_blob = Blob::sample(&mut rng, center, semi, params.liver_deformation);

    let mut liver = vec![0u8; n];
    for (i, v) in liver.iter_mut().enumerate() {
        let (z, y, x) = (i / plane, (i / shape[2]) % shape[1], i % shape[2]);
        *v = liver_blob.contains(z, y, x) as u8;
    }
    if !liver.contains(&1) {
        return Err(Error::Param("liver ellipsoid falls outside the volume".into()));
    }

    let distractor = if params.distractor {
        // Placed in whichever corner region the liver leaves most room for.
        let semi_d = shape.map(|d| d as f64 * 0.12);
        let c = [
            center[0],
            if center[1] < shape[1] as f64 / 2.0 { shape[1] as f64 * 0.86 } else { shape[1] as f64 * 0.14 },
            if center[2] < shape[2] as f64 / 2.0 { shape[2] as f64 * 0.86 } else { shape[2] as f64 * 0.14 },
        ];
        Some(Blob::sample(&mut rng, c, semi_d, 0.0))
    } else {
        None
    };

    let mut lesion = vec![0u8; n];
    let count = rng.random_range(params.lesion_count_range.0..=params.lesion_count_range.1);
    let liver_voxels: Vec<usize> = (0..n).filter(|&i| liver[i] == 1).collect();
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let r = rng.random_range(params.lesion_radius_range.0..=params.lesion_radius_range.1);
            let anchor = liver_voxels[rng.random_range(0..liver_voxels.len())];
            let c = [
                (anchor / plane) as f64 + rng.random_range(-0.5..0.5),
                ((anchor / shape[2]) % shape[1]) as f64 + rng.random_range(-0.5..0.5),
                (anchor % shape[2]) as f64 + rng.random_range(-0.5..0.5),
            ];
            if let Some(vox) = sphere_voxels(shape, c, r) {
                if !vox.is_empty() && vox.iter().all(|&i| liver[i] == 1) {
                    vox.iter().for_each(|&i| lesion[i] = 1);
                    placed = true;
                    break;
                }
            }
        }
        if !placed {
            return Err(Error::Placement {
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }

    let noise = Normal::new(0.0f64, params.noise_sigma as f64)
        .map_err(|e| Error::Param(format!("noise distribution: {e}")))?;
    let mut image = Vec::with_capacity(n);
    for i in 0..n {
        let (z, y, x) = (i / plane, (i / shape[2]) % shape[1], i % shape[2]);
        let mean = if lesion[i] == 1 {
            params.intensity_lesion
        } else if liver[i] == 1 {
            params.intensity_liver
        } else if distractor.as_ref().is_some_and(|d| d.contains(z, y, x)) {
            params.intensity_distractor
        } else {
            params.intensity_background
        };
        let v = mean as f64 + noise.sample(&mut rng);
        image.push((v as f32).clamp(HU_WINDOW_LO, HU_WINDOW_HI));
    }

    let case = LabeledCase {
        case_id: case_id.to_string(),
        image: Volume::new(shape, params.spacing, image)?,
        liver: Mask::new(shape, params.spacing, liver)?,
        lesion: Mask::new(shape, params.spacing, lesion)?,
    };
    case.validate()?;
    Ok(case)
}

/// Train/validation/test partition of generated cases.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<LabeledCase>,
    pub val: Vec<LabeledCase>,
    pub test: Vec<LabeledCase>,
}

impl Dataset {
    pub fn all(&self) -> impl Iterator<Item = &LabeledCase> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn manifest(&self) -> DatasetManifest {
        let ids = |v: &[LabeledCase]| v.iter().map(|c| c.case_id.clone()).collect();
        DatasetManifest {
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Split sizes for `n` cases: rounded train and val counts, remainder to test.
pub fn split_sizes(n: usize, split: (f64, f64)) -> Result<(usize, usize, usize)> {
    let (tr, va) = split;
    if !(tr > 0.0 && tr < 1.0 && va > 0.0 && va < 1.0 && tr + va < 1.0) {
        return Err(Error::Param(format!("split fractions must lie in (0,1) and sum below 1, got {split:?}")));
    }
    let n_train = (n as f64 * tr).round() as usize;
    let n_val = ((n as f64 * va).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    Ok((n_train, n_val, n - n_train - n_val))
}

/// Generates one case per parameter set and partitions them. Case ids are
/// `case_000`, `case_001`, ... in input order; membership of each split is
/// drawn from a permutation seeded by `split_seed`.
pub fn generate_dataset(params_list: &[PhantomParams], split: (f64, f64), split_seed: u64) -> Result<Dataset> {
    let (n_train, n_val, _) = split_sizes(params_list.len(), split)?;
    let mut cases = params_list
        .par_iter()
        .enumerate()
        .map(|(i, p)| generate_phantom(p, &format!("case_{i:03}")))
        .collect::<Result<Vec<_>>>()?;
    let ids: HashSet<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
    debug_assert_eq!(ids.len(), cases.len());

    let mut order: Vec<usize> = (0..cases.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut slots: Vec<Option<LabeledCase>> = cases.drain(..).map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<LabeledCase> {
        let mut v: Vec<_> = idx.iter().map(|&i| slots[i].take().expect("index used once")).collect();
        v.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        v
    };
    Ok(Dataset {
        train: take(&order[..n_train]),
        val: take(&order[n_train..n_train + n_val]),
        test: take(&order[n_train + n_val..]),
    })
}

/// Parameter sets for `n` cases sharing `base` but with distinct seeds.
pub fn params_for_cases(base: &PhantomParams, n: usize) -> Vec<PhantomParams> {
    (0..n)
        .map(|i| PhantomParams {
            seed: base.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            ..base.clone()
        })
        .collect()
}

pub fn write_case(case: &LabeledCase, dir: &Path) -> Result<()> {
    rvol::write_volume(&case.image, &dir.join(format!("{}_img", case.case_id)))?;
    rvol::write_mask(&case.liver, &dir.join(format!("{}_liver", case.case_id)))?;
    rvol::write_mask(&case.lesion, &dir.join(format!("{}_lesion", case.case_id)))
}

pub fn read_case(dir: &Path, case_id: &str) -> Result<LabeledCase> {
    let case = LabeledCase {
        case_id: case_id.to_string(),
        image: rvol::read_volume(&dir.join(format!("{case_id}_img")))?,
        liver: rvol::read_mask(&dir.join(format!("{case_id}_liver")))?,
        lesion: rvol::read_mask(&dir.join(format!("{case_id}_lesion")))?,
    };
    case.validate()?;
    Ok(case)
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for case in ds.all() {
        write_case(case, dir)?;
    }
    let path = dir.join("dataset.json");
    let text = serde_json::to_string_pretty(&ds.manifest()).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("dataset.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let load = |ids: &[String]| ids.iter().map(|id| read_case(dir, id)).collect::<Result<Vec<_>>>();
    Ok(Dataset {
        train: load(&m.train)?,
        val: load(&m.val)?,
        test: load(&m.test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomParams {
        PhantomParams {
            shape: [12, 40, 40],
            lesion_radius_range: (2.0, 3.5),
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_phantom(&small(), "a").unwrap();
        let b = generate_phantom(&small(), "a").unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(&PhantomParams { seed: 2, ..small() }, "a").unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn zero_lesions_gives_empty_mask() {
        let p = PhantomParams {
            lesion_count_range: (0, 0),
            ..small()
        };
        let c = generate_phantom(&p, "x").unwrap();
        assert_eq!(c.lesion.count(), 0);
        assert!(c.liver.any());
    }

    #[test]
    fn lesion_inside_liver_exhaustive() {
        for seed in 0..8 {
            let c = generate_phantom(&PhantomParams { seed, ..small() }, "x").unwrap();
            let outside = (0..c.lesion.len())
                .filter(|&i| c.lesion.data()[i] == 1 && c.liver.data()[i] == 0)
                .count();
            assert_eq!(outside, 0);
            assert!(c.image.data().iter().all(|v| (-150.0..=250.0).contains(v)));
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = [
            PhantomParams { intensity_lesion: 110.0, ..small() },
            PhantomParams { noise_sigma: -1.0, ..small() },
            PhantomParams { lesion_radius_range: (2.0, 30.0), ..small() },
            PhantomParams { lesion_count_range: (3, 1), ..small() },
        ];
        for p in bad {
            assert!(matches!(generate_phantom(&p, "x"), Err(Error::Param(_))), "{p:?}");
        }
    }

    #[test]
    fn unplaceable_lesion_reports_placement_error() {
        // The liver is wide in-plane but thinner in z than the lesion diameter.
        let p = PhantomParams {
            shape: [8, 60, 60],
            liver_radius_range: (0.45, 0.45),
            liver_deformation: 0.0,
            lesion_radius_range: (5.0, 5.5),
            lesion_count_range: (1, 1),
            ..Default::default()
        };
        assert!(matches!(generate_phantom(&p, "x"), Err(Error::Placement { .. })));
    }

    #[test]
    fn split_sizes_and_membership() {
        assert_eq!(split_sizes(40, (0.5, 0.25)).unwrap(), (20, 10, 10));
        assert!(split_sizes(40, (0.8, 0.3)).is_err());
        assert!(split_sizes(40, (0.0, 0.3)).is_err());

        let params = params_for_cases(&small(), 12);
        let a = generate_dataset(&params, (0.5, 0.25), 9).unwrap();
        let b = generate_dataset(&params, (0.5, 0.25), 9).unwrap();
        assert_eq!(a.manifest(), b.manifest());
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (6, 3, 3));

        let mut seen: Vec<String> = a.all().map(|c| c.case_id.clone()).collect();
        let n = seen.len();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), n);
        let expected: Vec<String> = (0..12).map(|i| format!("case_{i:03}")).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&params_for_cases(&small(), 4), (0.5, 0.25), 1).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }
}
