//! Central-difference verification of the hand-written backward pass on a
//! small fixed problem.

use std::fmt;

use ndarray::Array3;
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::patch::{build_patch_operator, LocalPatch, PatchConfig, PatchFrame, PatchSet};
use crate::zernike::{DiskPoint, ZernikeBasisSet};

use super::{mse_loss, NetConfig, ZerNetModel, XYZ_CHANNELS};

pub const GRAD_TOL: f64 = 1e-4;
pub const FD_EPSILON: f64 = 1e-5;
/// Rel-error denominators are floored here so parameters with an exactly
/// zero gradient measure finite-difference noise against a fixed scale.
const DENOM_FLOOR: f64 = 1e-6;

const TOY_SAMPLES: usize = 16;

#[derive(Clone, Debug)]
pub struct LayerCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub layers: Vec<LayerCheck>,
    pub max_rel_err: f64,
    pub passed: bool,
    pub seed: u64,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradient check: {TOY_SAMPLES} samples, epsilon {FD_EPSILON:.0e}, tolerance {GRAD_TOL:.0e}, seed {}",
            self.seed
        )?;
        for layer in &self.layers {
            writeln!(
                f,
                "  {:<14} max rel err {:.3e} over {} parameters",
                layer.name, layer.max_rel_err, layer.checked
            )?;
        }
        write!(
            f,
            "  overall max rel err {:.3e}: {}",
            self.max_rel_err,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Fixed small instance exercising every layer: random input coefficients,
/// synthetic full-rank patches whose members span all samples, random
/// targets. Order 3 keeps the basis smaller than the member count.
pub fn toy_problem(seed: u64) -> (ZerNetModel, Array3<f64>, PatchSet, Vec<f64>) {
    let config = NetConfig {
        max_order: 3,
        rotations: 4,
        conv_filters: [2, 3, 4],
        linear_width: 5,
        linear_relu: true,
    };
    let mut model = ZerNetModel::new(config).expect("toy config is valid");
    model.init_params(seed ^ 0xA5A5_A5A5);

    let basis = ZernikeBasisSet::new(3).expect("order 3 is valid");
    let n = basis.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut patches = Vec::with_capacity(TOY_SAMPLES);
    let mut operators = Vec::with_capacity(TOY_SAMPLES);
    for center in 0..TOY_SAMPLES {
        let mut members = vec![center];
        let mut rest: Vec<usize> = (0..TOY_SAMPLES).filter(|&i| i != center).collect();
        for i in (1..rest.len()).rev() {
            rest.swap(i, rng.gen_range(0..=i));
        }
        members.extend(rest);

        let mut coords = vec![DiskPoint::new(0.0, 0.0).expect("origin is on the disk")];
        for _ in 1..TOY_SAMPLES {
            let r = rng.gen_range(0.25..1.0);
            let theta = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            coords.push(DiskPoint::new(r, theta).expect("sampled inside the disk"));
        }
        let patch = LocalPatch {
            center,
            members,
            disk_coords: coords,
            frame: PatchFrame {
                e1: nalgebra::Vector3::x(),
                e2: nalgebra::Vector3::y(),
                normal: nalgebra::Vector3::z(),
            },
            warn_sparse: false,
        };
        let op = build_patch_operator(&patch, &basis).expect("random coords give full rank");
        operators.push(op);
        patches.push(patch);
    }
    let set = PatchSet {
        config: PatchConfig::new(0.05, 8, n).expect("toy patch config is valid"),
        r0: 1.0,
        max_order: 3,
        patches,
        operators,
    };

    let input = Array3::from_shape_fn((TOY_SAMPLES, XYZ_CHANNELS, n), |_| rng.gen_range(-1.0..1.0));
    let target: Vec<f64> = (0..TOY_SAMPLES).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (model, input, set, target)
}

/// Compare analytic gradients against central differences for every
/// parameter. `corrupt` perturbs the analytic gradient first and must make
/// the check fail; it exists as a negative control.
pub fn run(seed: u64, corrupt: bool) -> Result<GradCheckReport> {
    let (mut model, input, set, target) = toy_problem(seed);

    let (pred, cache) = model.forward(&input, &set)?;
    let (_, dpred) = mse_loss(&pred, &target)?;
    let mut analytic = model.backward(&input, &set, &cache, &dpred)?;
    if corrupt {
        for slot in [model.layout().conv_w[0], model.layout().linear_w, model.layout().head_w] {
            analytic[slot.offset] += 1e-2;
        }
    }

    let slots = model.layout().named_slots();
    let mut layers = Vec::with_capacity(slots.len());
    let mut overall: f64 = 0.0;
    for (name, slot) in slots {
        let mut worst: f64 = 0.0;
        for i in slot.offset..slot.offset + slot.len {
            let saved = model.params[i];
            model.params[i] = saved + FD_EPSILON;
            let plus = loss_at(&model, &input, &set, &target)?;
            model.params[i] = saved - FD_EPSILON;
            let minus = loss_at(&model, &input, &set, &target)?;
            model.params[i] = saved;

            let fd = (plus - minus) / (2.0 * FD_EPSILON);
            let denom = fd.abs().max(analytic[i].abs()).max(DENOM_FLOOR);
            worst = worst.max((fd - analytic[i]).abs() / denom);
        }
        overall = overall.max(worst);
        layers.push(LayerCheck { name, max_rel_err: worst, checked: slot.len });
    }

    Ok(GradCheckReport {
        layers,
        max_rel_err: overall,
        passed: overall < GRAD_TOL,
        seed,
    })
}

fn loss_at(
    model: &ZerNetModel,
    input: &Array3<f64>,
    set: &PatchSet,
    target: &[f64],
) -> Result<f64> {
    let (pred, _) = model.forward(input, set)?;
    Ok(mse_loss(&pred, target)?.0)
}
