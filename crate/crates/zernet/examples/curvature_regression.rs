//! Small end-to-end run: synthesize bumpy spheres with curvature targets,
//! train a Zernike convolution network on each leave-one-out fold, and
//! print the cross-validation table.
//!
//! Uses a reduced setup (2 meshes, coarse sampling) so it finishes in a few
//! seconds; expect modest but clearly-above-baseline correlations.
//!
//! Run with: cargo run --example curvature_regression

use zernet::net::NetConfig;
use zernet::patch::PatchConfig;
use zernet::train::manifest::Dataset;
use zernet::train::synth::{generate_synthetic, SynthConfig};
use zernet::train::{run_loocv, PrepConfig, TrainSettings};
use zernet::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let synth = SynthConfig {
        count: 2,
        seed: 11,
        subdivisions: 2,
        amplitude: 0.1,
    };
    generate_synthetic(&synth, dir.path())?;
    let dataset = Dataset::load(&dir.path().join("manifest.json"))?;
    println!("synthesized {} meshes in {}", dataset.len(), dir.path().display());

    let net = NetConfig {
        max_order: 3,
        rotations: 4,
        conv_filters: [4, 6, 8],
        linear_width: 8,
        linear_relu: true,
    };
    let prep = PrepConfig {
        samples: 500,
        seed: 1,
        patch: PatchConfig::new(0.1, 8, 24)?,
    };
    let settings = TrainSettings {
        lr: 2e-2,
        epochs: 200,
        init_seed: 4,
        ..TrainSettings::default()
    };

    let report = run_loocv(&dataset, &net, &prep, &settings, |p| {
        if p.epoch % 50 == 0 || p.epoch == p.epochs {
            println!(
                "fold {} epoch {:>3}/{} train mse {:.4e}",
                p.fold, p.epoch, p.epochs, p.train_mse
            );
        }
    })?;

    println!("\n{}", report.table());
    println!(
        "mean PCC {:.3} vs linear-coordinate baseline {:.3}",
        report.mean_pcc(),
        report.mean_baseline_pcc()
    );
    Ok(())
}
