//! Training and evaluation: dataset preparation, full-batch Adam training
//! with target standardization, leave-one-out cross validation, and a linear
//! coordinate baseline.

pub mod manifest;
pub mod metrics;
pub mod synth;

use nalgebra::{Matrix4, Vector4};
use ndarray::Array3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{
    load_mesh, map_back_to_vertices, normalize_area, read_field_file, sample_uniform,
    transfer_scalar, SamplePointSet, TriangleMesh,
};
use crate::net::{mse_loss, Checkpoint, NetConfig, TrainState, ZerNetModel};
use crate::patch::{extract_aligned_xyz, read_patch_set, write_patch_set, PatchConfig, PatchSet};
use crate::zernike::ZernikeBasisSet;

use manifest::Dataset;
use metrics::{EvalReport, HIT_THRESHOLDS};

/// How meshes are turned into network-ready sample sets.
#[derive(Clone, Debug)]
pub struct PrepConfig {
    /// Surface samples per mesh.
    pub samples: usize,
    /// Base seed; each entry mixes in its index so meshes get distinct but
    /// reproducible point sets.
    pub seed: u64,
    pub patch: PatchConfig,
}

impl PrepConfig {
    pub fn default_for(basis: &ZernikeBasisSet) -> Self {
        PrepConfig {
            samples: 8000,
            seed: 7,
            patch: PatchConfig::default_for(basis),
        }
    }
}

fn entry_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One dataset entry lifted to trainable form: normalized mesh, sample
/// points, patch operators, aligned-coordinate input, and targets at both
/// vertices and samples.
pub struct PreparedEntry {
    pub name: String,
    pub mesh: TriangleMesh,
    /// Linear factor applied by area normalization.
    pub scale: f64,
    pub points: SamplePointSet,
    pub set: PatchSet,
    pub input: Array3<f64>,
    pub target_vertices: Vec<f64>,
    pub target_samples: Vec<f64>,
}

/// Load one manifest entry and build everything training needs. A patch
/// cache listed in the manifest is used when its content hash and build
/// settings still match, and rebuilt in place otherwise.
pub fn prepare_entry(
    dataset: &Dataset,
    index: usize,
    net: &NetConfig,
    prep: &PrepConfig,
) -> Result<PreparedEntry> {
    let name = dataset.entry_name(index);
    let original = load_mesh(&dataset.mesh_path(index))?;
    let (mesh, scale) = normalize_area(&original)?;
    let points = sample_uniform(&mesh, prep.samples, entry_seed(prep.seed, index))?;
    let basis = ZernikeBasisSet::new(net.max_order)?;

    let cache_path = dataset.patches_path(index);
    let mut set = None;
    if let Some(path) = &cache_path {
        if let Ok((cached, hash)) = read_patch_set(path) {
            if hash == points.content_hash()
                && cached.config == prep.patch
                && cached.max_order == net.max_order
                && cached.patches.len() == points.len()
            {
                set = Some(cached);
            }
        }
    }
    let set = match set {
        Some(set) => set,
        None => {
            let built = PatchSet::build(&points, &prep.patch, &basis, mesh.total_area())?;
            if let Some(path) = &cache_path {
                write_patch_set(path, &built, &points.content_hash())?;
            }
            built
        }
    };

    let input = extract_aligned_xyz(&points, &set.patches, &set.operators)?;
    let target_vertices = read_field_file(&dataset.field_path(index), mesh.vertex_count())?;
    let target_samples = transfer_scalar(&mesh, &target_vertices, &points)?;
    Ok(PreparedEntry {
        name,
        mesh,
        scale,
        points,
        set,
        input,
        target_vertices,
        target_samples,
    })
}

/// Population mean and standard deviation of the concatenated training
/// targets. Constant targets cannot be standardized.
pub fn standardization(entries: &[&PreparedEntry]) -> Result<(f64, f64)> {
    let n: usize = entries.iter().map(|e| e.target_samples.len()).sum();
    if n == 0 {
        return Err(Error::Domain("no training targets to standardize".into()));
    }
    let sum: f64 = entries
        .iter()
        .flat_map(|e| e.target_samples.iter())
        .sum();
    let mean = sum / n as f64;
    let var: f64 = entries
        .iter()
        .flat_map(|e| e.target_samples.iter())
        .map(|t| (t - mean) * (t - mean))
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt();
    if std < 1e-12 {
        return Err(Error::Domain(
            "training targets have zero variance; nothing to regress".into(),
        ));
    }
    Ok((mean, std))
}

/// Full-batch trainer: one epoch is one Adam step over the average gradient
/// of every training entry. Targets are standardized internally; predictions
/// come back in original units.
pub struct Trainer {
    pub model: ZerNetModel,
    pub state: TrainState,
    pub target_mean: f64,
    pub target_std: f64,
    pub epoch: u64,
    /// Gradient-contribution count per dataset entry, evidence that held-out
    /// entries never touched the optimizer.
    pub contributions: Vec<u64>,
}

impl Trainer {
    pub fn new(
        config: NetConfig,
        settings: &TrainSettings,
        target_mean: f64,
        target_std: f64,
        entry_count: usize,
    ) -> Result<Self> {
        let mut model = ZerNetModel::new(config)?;
        model.init_params(settings.init_seed);
        let state = TrainState::new(
            settings.lr,
            settings.beta1,
            settings.beta2,
            1e-8,
            model.param_count(),
        )?;
        Ok(Trainer {
            model,
            state,
            target_mean,
            target_std,
            epoch: 0,
            contributions: vec![0; entry_count],
        })
    }

    pub fn resume(
        config: NetConfig,
        settings: &TrainSettings,
        ckpt: &Checkpoint,
        entry_count: usize,
    ) -> Result<Self> {
        let mut model = ZerNetModel::new(config)?;
        let mut state = TrainState::new(
            settings.lr,
            settings.beta1,
            settings.beta2,
            1e-8,
            model.param_count(),
        )?;
        ckpt.restore(&mut model, &mut state)?;
        Ok(Trainer {
            model,
            state,
            target_mean: ckpt.target_mean,
            target_std: ckpt.target_std,
            epoch: ckpt.epoch,
            contributions: vec![0; entry_count],
        })
    }

    /// One optimizer step over `(entry id, entry)` pairs. Returns the mean
    /// training MSE in standardized units and records it in the loss history.
    pub fn epoch_step(&mut self, entries: &[(usize, &PreparedEntry)]) -> Result<f64> {
        if entries.is_empty() {
            return Err(Error::Domain("epoch over an empty training set".into()));
        }
        let k = entries.len() as f64;
        let mut grad_acc = vec![0.0f64; self.model.param_count()];
        let mut loss_acc = 0.0;
        for &(id, entry) in entries {
            let std_target: Vec<f64> = entry
                .target_samples
                .iter()
                .map(|t| (t - self.target_mean) / self.target_std)
                .collect();
            let (pred, cache) = self.model.forward(&entry.input, &entry.set)?;
            let (loss, mut dpred) = mse_loss(&pred, &std_target)?;
            loss_acc += loss;
            for d in &mut dpred {
                *d /= k;
            }
            let grads = self.model.backward(&entry.input, &entry.set, &cache, &dpred)?;
            for (a, g) in grad_acc.iter_mut().zip(&grads) {
                *a += g;
            }
            if let Some(c) = self.contributions.get_mut(id) {
                *c += 1;
            }
        }
        self.state.adam_step(&mut self.model.params, &grad_acc)?;
        self.epoch += 1;
        let mean_loss = loss_acc / k;
        self.state.loss_history.push(mean_loss);
        Ok(mean_loss)
    }

    /// Per-sample predictions in original target units.
    pub fn predict(&self, entry: &PreparedEntry) -> Result<Vec<f64>> {
        let (pred, _) = self.model.forward(&entry.input, &entry.set)?;
        Ok(pred
            .into_iter()
            .map(|p| p * self.target_std + self.target_mean)
            .collect())
    }

    /// Predictions carried back to mesh vertices by nearest sample.
    pub fn predict_vertices(&self, entry: &PreparedEntry) -> Result<Vec<f64>> {
        let pred = self.predict(entry)?;
        map_back_to_vertices(&entry.points, &pred, &entry.mesh)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(
            &self.model,
            &self.state,
            self.epoch,
            self.target_mean,
            self.target_std,
        )
    }
}

/// Fit `target ≈ w·[x, y, z, 1]` by least squares over every training
/// sample, then score the held-out entry at its vertices. The gap to this
/// baseline is what the patch network has to earn.
pub fn linear_baseline_pcc(train: &[&PreparedEntry], held: &PreparedEntry) -> Result<f64> {
    let mut ata = Matrix4::<f64>::zeros();
    let mut atb = Vector4::<f64>::zeros();
    for entry in train {
        for (p, &t) in entry.points.positions.iter().zip(&entry.target_samples) {
            let row = Vector4::new(p.x, p.y, p.z, 1.0);
            ata += row * row.transpose();
            atb += row * t;
        }
    }
    let w = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| Error::Domain("baseline design matrix is singular".into()))?;
    let pred: Vec<f64> = held
        .points
        .positions
        .iter()
        .map(|p| w[0] * p.x + w[1] * p.y + w[2] * p.z + w[3])
        .collect();
    let at_vertices = map_back_to_vertices(&held.points, &pred, &held.mesh)?;
    metrics::pcc(&at_vertices, &held.target_vertices)
}

#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: u64,
    pub init_seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 60,
            init_seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpochProgress {
    pub fold: usize,
    pub fold_count: usize,
    pub epoch: u64,
    pub epochs: u64,
    pub train_mse: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FoldReport {
    /// Dataset entry index held out for this fold.
    pub fold: usize,
    pub name: String,
    pub eval: EvalReport,
    pub baseline_pcc: f64,
    /// Last training MSE, in standardized units.
    pub final_train_mse: f64,
    /// Optimizer contributions recorded for the held-out entry; always zero.
    pub held_out_contributions: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LoocvReport {
    pub folds: Vec<FoldReport>,
}

impl LoocvReport {
    pub fn mean_pcc(&self) -> f64 {
        self.folds.iter().map(|f| f.eval.pcc).sum::<f64>() / self.folds.len() as f64
    }

    pub fn mean_mape(&self) -> f64 {
        self.folds.iter().map(|f| f.eval.mape).sum::<f64>() / self.folds.len() as f64
    }

    pub fn mean_baseline_pcc(&self) -> f64 {
        self.folds.iter().map(|f| f.baseline_pcc).sum::<f64>() / self.folds.len() as f64
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let width = self
            .folds
            .iter()
            .map(|f| f.name.len())
            .max()
            .unwrap_or(4)
            .max(4);
        out.push_str(&format!(
            "{:<width$}  {:>8}  {:>6}  {:>7}  {:>7}  {:>8}\n",
            "fold", "MAPE%", "PCC", "HR(10%)", "HR(20%)", "base-PCC"
        ));
        for f in &self.folds {
            let hr = |i: usize| f.eval.hit_rates.get(i).map(|h| h.rate).unwrap_or(f64::NAN);
            out.push_str(&format!(
                "{:<width$}  {:>8.2}  {:>6.3}  {:>7.2}  {:>7.2}  {:>8.3}\n",
                f.name,
                f.eval.mape,
                f.eval.pcc,
                hr(0),
                hr(1),
                f.baseline_pcc
            ));
        }
        out.push_str(&format!(
            "{:<width$}  {:>8.2}  {:>6.3}  {:>7}  {:>7}  {:>8.3}\n",
            "mean",
            self.mean_mape(),
            self.mean_pcc(),
            "",
            "",
            self.mean_baseline_pcc()
        ));
        out
    }
}

/// Leave-one-out cross validation: for every fold index, train a fresh model
/// on all other entries and evaluate on the held-out mesh at its vertices.
/// `progress` is called once per epoch.
pub fn run_loocv(
    dataset: &Dataset,
    net: &NetConfig,
    prep: &PrepConfig,
    settings: &TrainSettings,
    mut progress: impl FnMut(&EpochProgress),
) -> Result<LoocvReport> {
    let entries: Vec<PreparedEntry> = (0..dataset.len())
        .map(|i| prepare_entry(dataset, i, net, prep))
        .collect::<Result<_>>()?;
    let folds = dataset.folds();
    let mut reports = Vec::with_capacity(folds.len());

    for &held_id in &folds {
        let train_refs: Vec<(usize, &PreparedEntry)> = entries
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held_id)
            .collect();
        let train_only: Vec<&PreparedEntry> = train_refs.iter().map(|(_, e)| *e).collect();
        let (mean, std) = standardization(&train_only)?;
        let mut trainer = Trainer::new(net.clone(), settings, mean, std, entries.len())?;
        let mut last_mse = f64::NAN;
        for epoch in 0..settings.epochs {
            last_mse = trainer.epoch_step(&train_refs)?;
            progress(&EpochProgress {
                fold: held_id,
                fold_count: folds.len(),
                epoch: epoch + 1,
                epochs: settings.epochs,
                train_mse: last_mse,
            });
        }

        let held = &entries[held_id];
        let contributions = trainer.contributions[held_id];
        if contributions != 0 {
            return Err(Error::Verification(format!(
                "held-out entry {} contributed {} gradients",
                held.name, contributions
            )));
        }
        let pred_vertices = trainer.predict_vertices(held)?;
        let eval = EvalReport::compute(&pred_vertices, &held.target_vertices, &HIT_THRESHOLDS)?;
        let baseline_pcc = linear_baseline_pcc(&train_only, held)?;
        reports.push(FoldReport {
            fold: held_id,
            name: held.name.clone(),
            eval,
            baseline_pcc,
            final_train_mse: last_mse,
            held_out_contributions: contributions,
        });
    }
    Ok(LoocvReport { folds: reports })
}
