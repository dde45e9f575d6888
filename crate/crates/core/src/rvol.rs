//! RVOL on-disk format: `<name>.json` header plus `<name>.raw` payload of
//! little-endian `f32` values in z, y, x order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Mask, Shape3, Spacing3, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvolHeader {
    pub shape: Shape3,
    pub spacing: Spacing3,
    pub dtype: String,
    pub order: String,
}

/// Paths of the header and payload files for a base path such as `out/case_img`.
pub fn rvol_paths(base: &Path) -> (PathBuf, PathBuf) {
    let name = base.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    (
        base.with_file_name(format!("{name}.json")),
        base.with_file_name(format!("{name}.raw")),
    )
}

pub fn write_volume(vol: &Volume, base: &Path) -> Result<()> {
    let (json_path, raw_path) = rvol_paths(base);
    if let Some(dir) = base.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let header = RvolHeader {
        shape: vol.shape(),
        spacing: vol.spacing(),
        dtype: "f32".into(),
        order: "zyx".into(),
    };
    let text = serde_json::to_string_pretty(&header).map_err(|e| Error::json(&json_path, e))?;
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    let mut bytes = Vec::with_capacity(vol.len() * 4);
    for v in vol.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))
}

pub fn read_volume(base: &Path) -> Result<Volume> {
    let (json_path, raw_path) = rvol_paths(base);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: RvolHeader = serde_json::from_str(&text).map_err(|e| Error::json(&json_path, e))?;
    if header.dtype != "f32" {
        return Err(Error::format(&json_path, format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.order != "zyx" {
        return Err(Error::format(&json_path, format!("unsupported order {:?}", header.order)));
    }
    if header.shape.contains(&0) {
        return Err(Error::format(&json_path, format!("non-positive shape {:?}", header.shape)));
    }
    if header.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::format(&json_path, format!("non-positive spacing {:?}", header.spacing)));
    }
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = header.shape.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            &raw_path,
            format!("payload has {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(header.shape, header.spacing, data).map_err(|e| Error::format(&raw_path, e.to_string()))
}

pub fn write_mask(mask: &Mask, base: &Path) -> Result<()> {
    write_volume(&mask.to_volume(), base)
}

pub fn read_mask(base: &Path) -> Result<Mask> {
    let vol = read_volume(base)?;
    Mask::from_volume(&vol).map_err(|e| Error::format(base, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..64).map(|_| rng.random_range(-1e6f32..1e6)).collect();
        let v = Volume::new([4, 4, 4], [2.5, 0.7, 0.7], data).unwrap();
        let base = dir.path().join("v");
        write_volume(&v, &base).unwrap();
        let back = read_volume(&base).unwrap();
        assert_eq!(back.shape(), v.shape());
        assert_eq!(back.spacing(), v.spacing());
        let same = v.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }

    #[test]
    fn short_payload_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("v");
        let v = Volume::filled([2, 2, 2], [1.0; 3], 1.0).unwrap();
        write_volume(&v, &base).unwrap();
        let (_, raw) = rvol_paths(&base);
        fs::write(&raw, vec![0u8; 4 * 7]).unwrap();
        assert!(matches!(read_volume(&base), Err(Error::Format { .. })));
    }

    #[test]
    fn zero_dimension_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("v");
        let (json, raw) = rvol_paths(&base);
        fs::write(&json, r#"{"shape":[0,4,4],"spacing":[1,1,1],"dtype":"f32","order":"zyx"}"#).unwrap();
        fs::write(&raw, b"").unwrap();
        assert!(matches!(read_volume(&base), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_volume(&dir.path().join("nope")), Err(Error::Io { .. })));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("m");
        let m = Mask::new([1, 2, 2], [1.0; 3], vec![1, 0, 0, 1]).unwrap();
        write_mask(&m, &base).unwrap();
        assert_eq!(read_mask(&base).unwrap(), m);
    }
}
