//! The four-row ablation: segmentation-only baseline, cascade with liver
//! masking and 3-slice input, then the detector and the CRF switched on.
//!
//!     cargo run --release --example ablation                    # reduced run
//!     cargo run --release --example ablation -- configs/desk.json
//!
//! Any further `key=value` arguments override the configuration.

use std::path::Path;

use cascade_seg::config::RunConfig;
use cascade_seg::workflow::{ablation_run, generate_data, train_all, write_report};

fn main() -> cascade_seg::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (path, mut sets): (Vec<String>, Vec<String>) = args.into_iter().partition(|a| !a.contains('='));
    let cfg = match path.first() {
        Some(p) => RunConfig::load(Path::new(p))?,
        None => {
            sets.splice(
                0..0,
                ["data.seeds=[1,2,3,4,5,6,7,8,9,10,11,12]", "data.split=[0.6,0.1]"]
                    .map(String::from),
            );
            for net in ["liver", "lesion", "baseline"] {
                sets.insert(2, format!("{net}.train.epochs=3"));
            }
            sets.insert(2, "detector.train.steps=200".into());
            RunConfig::default()
        }
    };
    let cfg = cfg.with_overrides(&sets)?;

    let data = generate_data(&cfg)?;
    let models = train_all(&cfg, &data.train)?;
    let ablation = ablation_run(&cfg, &models, &data.test)?;
    print!("{}", ablation.report.to_table());

    let dir = std::env::temp_dir().join("cascade_ablation");
    write_report(&ablation.report, &dir)?;
    println!("report written to {}", dir.display());
    Ok(())
}
