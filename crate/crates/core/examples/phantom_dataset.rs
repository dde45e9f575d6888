//! Generates a seeded phantom dataset, prints per-case statistics and writes
//! it to disk in the RVOL format.
//!
//!     cargo run --release --example phantom_dataset -- /tmp/phantoms

use std::path::PathBuf;

use cascade_seg::phantom::{generate_dataset, read_dataset, write_dataset, PhantomParams};

fn main() -> cascade_seg::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cascade_phantoms"));
    let params: Vec<PhantomParams> = (1..=10)
        .map(|seed| PhantomParams {
            seed,
            ..Default::default()
        })
        .collect();
    let ds = generate_dataset(&params, (0.6, 0.2), 2017)?;

    println!("{:<10} {:>8} {:>8} {:>10}", "case", "liver", "lesion", "lesion z");
    for case in ds.all() {
        let slices = (0..case.lesion.shape()[0]).filter(|&z| case.lesion.slice_count(z) > 0).count();
        println!("{:<10} {:>8} {:>8} {:>10}", case.case_id, case.liver.count(), case.lesion.count(), slices);
    }

    write_dataset(&ds, &out)?;
    let back = read_dataset(&out)?;
    assert_eq!(back.test, ds.test);
    println!("split {}/{}/{} written to {}", ds.train.len(), ds.val.len(), ds.test.len(), out.display());
    Ok(())
}
