//! Fitting φ to recorded choices with projected ADAM, plus data splitting,
//! evaluation and loss-curve export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{backprop, forward_tape, GradientVector};
use crate::image::Image;
use crate::pyramid::{ParamBounds, PyramidParams};
use crate::scenario::sha256_hex;
use crate::user_loss::{
    batch_loss, candidate_errors, loss_gradient_weights, resolve_or_err, variant_loss,
    ChoiceRecord, FrameResolver, LossBreakdown, LossVariant,
};

const N_PARAMS: usize = PyramidParams::LEN;

/// ADAM moments and hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: [f64; N_PARAMS],
    pub v: [f64; N_PARAMS],
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            m: [0.0; N_PARAMS],
            v: [0.0; N_PARAMS],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

/// Projects every component into its box.
pub fn clamp_params(params: &PyramidParams, bounds: &ParamBounds) -> PyramidParams {
    let clamp = |x: f64, lo: f64, hi: f64| if x.is_nan() { lo } else { x.clamp(lo, hi) };
    PyramidParams::new(
        params
            .sigmas
            .map(|s| clamp(s, bounds.sigma_min, bounds.sigma_max)),
        params.epsilons.map(|e| clamp(e, 0.0, bounds.eps_max)),
    )
}

/// One bias-corrected ADAM update followed by projection onto the bounds.
/// Moments are kept as-is when the projection is active.
pub fn adam_step(
    state: &AdamState,
    grad: &GradientVector,
    params: &PyramidParams,
    bounds: &ParamBounds,
) -> Result<(AdamState, PyramidParams)> {
    if !grad.is_finite() {
        return Err(Error::Numeric(format!("non-finite gradient {grad:?}")));
    }
    let g = grad.to_array();
    let mut next = *state;
    next.t += 1;
    let bc1 = 1.0 - state.beta1.powi(next.t as i32);
    let bc2 = 1.0 - state.beta2.powi(next.t as i32);
    let mut values = params.to_array();
    for i in 0..N_PARAMS {
        next.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g[i];
        next.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g[i] * g[i];
        let m_hat = next.m[i] / bc1;
        let v_hat = next.v[i] / bc2;
        values[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps_hat);
    }
    Ok((next, clamp_params(&PyramidParams::from_array(values), bounds)))
}

/// Uniform draw inside the bounds.
pub fn init_params(bounds: &ParamBounds, seed: u64) -> PyramidParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigmas = [(); 3].map(|_| rng.random_range(bounds.sigma_min..=bounds.sigma_max));
    let epsilons = [(); 3].map(|_| rng.random_range(0.0..=bounds.eps_max));
    PyramidParams::new(sigmas, epsilons)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

/// Stratified K-fold assignment plus the fold rotation that decides which
/// folds play test and validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub k: usize,
    pub seed: u64,
    /// Fold used as test set; the next fold (mod K) is validation.
    pub rotation: usize,
    pub folds: Vec<usize>,
}

impl DataSplit {
    pub fn with_rotation(&self, rotation: usize) -> Self {
        Self {
            rotation: rotation % self.k,
            ..self.clone()
        }
    }

    pub fn role_of_fold(&self, fold: usize) -> Role {
        if fold == self.rotation {
            Role::Test
        } else if fold == (self.rotation + 1) % self.k {
            Role::Validation
        } else {
            Role::Train
        }
    }

    pub fn role(&self, item: usize) -> Role {
        self.role_of_fold(self.folds[item])
    }

    pub fn indices(&self, role: Role) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.role(i) == role).collect()
    }

    pub fn select<T: Clone>(&self, items: &[T], role: Role) -> Vec<T> {
        self.indices(role).into_iter().map(|i| items[i].clone()).collect()
    }

    pub fn split_id(&self) -> String {
        let mut text = format!("k={};seed={};rot={};", self.k, self.seed, self.rotation);
        for f in &self.folds {
            let _ = write!(text, "{f},");
        }
        sha256_hex(text.as_bytes())[..16].to_string()
    }
}

/// Stratified K-fold split. Members of each stratum are shuffled and dealt
/// round-robin across folds, so fold sizes and per-stratum counts per fold
/// each differ by at most one.
pub fn make_split(strata: &[usize], k: usize, seed: u64) -> Result<DataSplit> {
    if k < 3 {
        return Err(Error::Input(format!(
            "need K >= 3 folds for train/validation/test roles, got {k}"
        )));
    }
    if strata.len() < k {
        return Err(Error::Input(format!(
            "{} scenarios cannot fill {k} folds",
            strata.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut order: Vec<Vec<usize>> = groups.into_values().collect();
    order.shuffle(&mut rng);
    let mut folds = vec![0; strata.len()];
    for (pos, item) in order
        .into_iter()
        .flat_map(|mut g| {
            g.shuffle(&mut rng);
            g
        })
        .enumerate()
    {
        folds[item] = pos % k;
    }
    Ok(DataSplit {
        k,
        seed,
        rotation: 0,
        folds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub variant: LossVariant,
    pub bounds: ParamBounds,
    /// Box for the random initialization; ignored when `init` is set.
    pub init_bounds: ParamBounds,
    pub init: Option<PyramidParams>,
    pub seed: u64,
    pub log_every: usize,
    /// Keep the epoch with the lowest validation loss instead of the last.
    pub select_by_validation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            lr: 1e-2,
            batch_size: 50,
            variant: LossVariant::Hybrid,
            bounds: ParamBounds::default(),
            init_bounds: ParamBounds {
                sigma_min: 0.5,
                sigma_max: 5.0,
                eps_max: 0.2,
            },
            init: None,
            seed: 0,
            log_every: 100,
            select_by_validation: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Input("epochs must be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Input(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Input("batch_size must be >= 1".into()));
        }
        self.bounds.validate()?;
        self.init_bounds.validate()?;
        if let Some(p) = &self.init {
            p.validate_within(&self.bounds)?;
        }
        Ok(())
    }

    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        sha256_hex(&json)[..16].to_string()
    }

    pub fn initial_params(&self) -> PyramidParams {
        match self.init {
            Some(p) => p,
            None => clamp_params(&init_params(&self.init_bounds, self.seed), &self.bounds),
        }
    }
}

/// Training loss and parameters after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub loss: f64,
    pub params: PyramidParams,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub params: PyramidParams,
    pub variant: LossVariant,
    pub user_id: String,
    /// Loss of the initial parameters on the training records.
    pub initial_loss: f64,
    pub curve: Vec<CurvePoint>,
    /// Epoch whose parameters were kept (1-based).
    pub selected_epoch: usize,
    pub config_hash: String,
    pub split_id: String,
}

impl ModelCheckpoint {
    pub fn final_loss(&self) -> f64 {
        self.curve.last().map_or(self.initial_loss, |c| c.loss)
    }

    /// Training loss logged at the kept epoch.
    pub fn selected_loss(&self) -> f64 {
        self.curve
            .get(self.selected_epoch.wrapping_sub(1))
            .map_or(self.initial_loss, |c| c.loss)
    }
}

/// Loss, candidate errors and ∂loss/∂φ for one recorded choice.
pub fn frame_gradient<R: FrameResolver + ?Sized>(
    record: &ChoiceRecord,
    resolver: &R,
    params: &PyramidParams,
    variant: LossVariant,
) -> Result<(f64, GradientVector)> {
    let view = resolve_or_err(resolver, record)?;
    let (output, tape) = forward_tape(view.source, params)?;
    let errors = candidate_errors(&output, view.candidates)?;
    let loss = variant_loss(&errors, record.selected, variant)?;
    let weights = loss_gradient_weights(&errors, record.selected, variant)?;
    if weights.iter().all(|&w| w == 0.0) {
        return Ok((loss, GradientVector::zero()));
    }
    // ∂e_q/∂out = 2 (out - I_q) / N
    let scale = 2.0 / output.len() as f64;
    let mut d_out = vec![0.0; output.len()];
    for (w, cand) in weights.iter().zip(view.candidates) {
        if *w == 0.0 {
            continue;
        }
        for ((d, &o), &c) in d_out.iter_mut().zip(output.pixels()).zip(cand.pixels()) {
            *d += w * scale * (o - c);
        }
    }
    let d_out = Image::new(output.width(), output.height(), d_out)?;
    Ok((loss, backprop(&tape, &d_out)?))
}

/// Mean gradient over a batch; summation runs in record order.
pub fn batch_gradient<R: FrameResolver + ?Sized>(
    records: &[ChoiceRecord],
    resolver: &R,
    params: &PyramidParams,
    variant: LossVariant,
) -> Result<GradientVector> {
    let parts: Vec<GradientVector> = records
        .par_iter()
        .map(|r| frame_gradient(r, resolver, params, variant).map(|(_, g)| g))
        .collect::<Result<_>>()?;
    let sum = parts
        .into_iter()
        .fold(GradientVector::zero(), |acc, g| acc + g);
    Ok(sum * (1.0 / records.len().max(1) as f64))
}

/// Projected mini-batch ADAM over the training records.
///
/// Each epoch shuffles the records with the config seed, takes one ADAM
/// step per batch on the batch-mean gradient, then logs the summed loss
/// over all training records at the updated parameters. `on_epoch` sees
/// every curve point as it is produced.
pub fn train<R: FrameResolver + ?Sized>(
    records: &[ChoiceRecord],
    resolver: &R,
    config: &TrainConfig,
    validation: &[ChoiceRecord],
    split_id: &str,
    mut on_epoch: impl FnMut(&CurvePoint),
) -> Result<ModelCheckpoint> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Input("no training records".into()));
    }
    let user_id = records[0].user_id.clone();
    let mut params = config.initial_params();
    let mut adam = AdamState::new(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..records.len()).collect();

    let initial_loss = batch_loss(records, resolver, &params, config.variant)?.total;
    let use_validation = config.select_by_validation && !validation.is_empty();
    let mut best: Option<(f64, usize, PyramidParams)> = None;
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<ChoiceRecord> = chunk.iter().map(|&i| records[i].clone()).collect();
            let grad = batch_gradient(&batch, resolver, &params, config.variant)?;
            let (next_state, next_params) = adam_step(&adam, &grad, &params, &config.bounds)?;
            adam = next_state;
            params = next_params;
        }
        let loss = batch_loss(records, resolver, &params, config.variant)?.total;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss became {loss} at epoch {epoch}")));
        }
        let validation_loss = if use_validation {
            let v = batch_loss(validation, resolver, &params, config.variant)?.total;
            if best.is_none_or(|(b, _, _)| v < b) {
                best = Some((v, epoch, params));
            }
            Some(v)
        } else {
            None
        };
        let point = CurvePoint {
            epoch,
            loss,
            params,
            validation_loss,
        };
        on_epoch(&point);
        curve.push(point);
    }

    let (selected_epoch, kept) = match best {
        Some((_, e, p)) => (e, p),
        None => (config.epochs, params),
    };
    Ok(ModelCheckpoint {
        params: kept,
        variant: config.variant,
        user_id,
        initial_loss,
        curve,
        selected_epoch,
        config_hash: config.config_hash(),
        split_id: split_id.to_string(),
    })
}

/// Result of fitting one session's choices with a K-fold split.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionFit {
    pub checkpoint: ModelCheckpoint,
    pub split: Option<DataSplit>,
    pub train: Vec<ChoiceRecord>,
    pub validation: Vec<ChoiceRecord>,
    pub test: Vec<ChoiceRecord>,
}

impl SessionFit {
    /// Validation and test records together.
    pub fn held_out(&self) -> Vec<ChoiceRecord> {
        let mut out = self.validation.clone();
        out.extend_from_slice(&self.test);
        out
    }
}

/// Splits `records` by source image into K folds and trains on the train
/// role, selecting on validation. With fewer than K records everything
/// is used for training and nothing is held out.
pub fn fit_session(
    records: &[ChoiceRecord],
    store: &crate::scenario::FrameStore,
    config: &TrainConfig,
    k: usize,
    on_epoch: impl FnMut(&CurvePoint),
) -> Result<SessionFit> {
    if records.is_empty() {
        return Err(Error::Input("session has no recorded choices".into()));
    }
    if records.len() < k {
        let checkpoint = train(records, store, config, &[], "all", on_epoch)?;
        return Ok(SessionFit {
            checkpoint,
            split: None,
            train: records.to_vec(),
            validation: Vec::new(),
            test: Vec::new(),
        });
    }
    let split = make_split(&store.strata(records)?, k, config.seed)?;
    let train_set = split.select(records, Role::Train);
    let validation = split.select(records, Role::Validation);
    let test = split.select(records, Role::Test);
    let checkpoint = train(&train_set, store, config, &validation, &split.split_id(), on_epoch)?;
    Ok(SessionFit {
        checkpoint,
        split: Some(split),
        train: train_set,
        validation,
        test,
    })
}

fn check_variant(checkpoint_variant: LossVariant, variant: LossVariant) -> Result<()> {
    if checkpoint_variant != variant {
        return Err(Error::Protocol(format!(
            "model trained with {checkpoint_variant} loss cannot be evaluated with {variant} loss"
        )));
    }
    Ok(())
}

pub fn evaluate_breakdown<R: FrameResolver + ?Sized>(
    params: &PyramidParams,
    checkpoint_variant: LossVariant,
    records: &[ChoiceRecord],
    resolver: &R,
    variant: LossVariant,
) -> Result<LossBreakdown> {
    check_variant(checkpoint_variant, variant)?;
    batch_loss(records, resolver, params, variant)
}

/// Summed loss of the checkpoint's φ over `records`. Models are only
/// evaluated with the loss they were trained with.
pub fn evaluate<R: FrameResolver + ?Sized>(
    checkpoint: &ModelCheckpoint,
    records: &[ChoiceRecord],
    resolver: &R,
    variant: LossVariant,
) -> Result<f64> {
    Ok(evaluate_breakdown(&checkpoint.params, checkpoint.variant, records, resolver, variant)?.total)
}

/// `matrix[i][j]` = loss of model `i` on test set `j`.
pub fn cross_evaluate<R: FrameResolver + ?Sized>(
    models: &[(PyramidParams, LossVariant)],
    test_sets: &[Vec<ChoiceRecord>],
    resolver: &R,
    variant: LossVariant,
) -> Result<Vec<Vec<f64>>> {
    models
        .iter()
        .map(|(params, v)| {
            test_sets
                .iter()
                .map(|t| Ok(evaluate_breakdown(params, *v, t, resolver, variant)?.total))
                .collect()
        })
        .collect()
}

pub const CURVE_HEADER: &str = "epoch,loss,sigma1,sigma2,sigma3,eps1,eps2,eps3";

pub fn export_curves(checkpoint: &ModelCheckpoint) -> String {
    curves_csv(&checkpoint.curve)
}

pub fn curves_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::with_capacity(64 * (curve.len() + 1));
    out.push_str(CURVE_HEADER);
    out.push('\n');
    for p in curve {
        let _ = write!(out, "{},{:e}", p.epoch, p.loss);
        for v in p.params.to_array() {
            let _ = write!(out, ",{v:e}");
        }
        out.push('\n');
    }
    out
}

/// Reads a curve CSV written by [`curves_csv`].
pub fn parse_curves(text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CURVE_HEADER => {}
        _ => return Err(Error::Format("curve CSV header mismatch".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(Error::Format(format!("bad curve row '{line}'")));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad number '{s}' in curve CSV")))
            };
            let epoch = fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad epoch '{}'", fields[0])))?;
            let mut values = [0.0; N_PARAMS];
            for (v, f) in values.iter_mut().zip(&fields[2..]) {
                *v = num(f)?;
            }
            Ok(CurvePoint {
                epoch,
                loss: num(fields[1])?,
                params: PyramidParams::from_array(values),
                validation_loss: None,
            })
        })
        .collect()
}

/// On-disk checkpoint: `{user_id, variant, sigmas, epsilons, config_hash,
/// split_id, curve_path}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub user_id: String,
    pub variant: LossVariant,
    pub sigmas: [f64; 3],
    pub epsilons: [f64; 3],
    pub config_hash: String,
    pub split_id: String,
    pub curve_path: String,
}

impl CheckpointFile {
    pub fn from_checkpoint(cp: &ModelCheckpoint, curve_path: &str) -> Self {
        Self {
            user_id: cp.user_id.clone(),
            variant: cp.variant,
            sigmas: cp.params.sigmas,
            epsilons: cp.params.epsilons,
            config_hash: cp.config_hash.clone(),
            split_id: cp.split_id.clone(),
            curve_path: curve_path.to_string(),
        }
    }

    pub fn params(&self) -> PyramidParams {
        PyramidParams::new(self.sigmas, self.epsilons)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        file.params().validate()?;
        Ok(file)
    }

    /// Resolves `curve_path` against the checkpoint's directory.
    pub fn curve_location(&self, checkpoint_path: &Path) -> std::path::PathBuf {
        let p = Path::new(&self.curve_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            checkpoint_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(p)
        }
    }
}

/// Writes `<stem>.json` and its curve CSV `<stem>.curve.csv` side by side.
pub fn save_checkpoint(cp: &ModelCheckpoint, path: &Path) -> Result<CheckpointFile> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Input(format!("bad checkpoint path {}", path.display())))?;
    let curve_name = format!("{stem}.curve.csv");
    let curve_path = path.with_file_name(&curve_name);
    std::fs::write(&curve_path, export_curves(cp))?;
    let file = CheckpointFile::from_checkpoint(cp, &curve_name);
    std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
    Ok(file)
}
