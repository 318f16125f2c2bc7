//! `prefdn` command line: one subcommand per pipeline stage.
//!
//! stdout carries data (CSV, summaries); diagnostics go to stderr. Exit
//! code 0 on success, 2 for bad arguments or protocol misuse, 1 otherwise.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::gradients::{gradient_check, GradCheckCase};
use crate::image::{read_image, write_image, Image};
use crate::pyramid::{decompose, denoise, PyramidParams};
use crate::scenario::{
    default_center, list_image_files, simulate_choices, CandidateSet, FrameStore, OracleUser,
    ParamSampler, SessionManifest, CHOICES_FILE, DEFAULT_SPREAD, MANIFEST_FILE,
};
use crate::service::{ServiceConfig, DEFAULT_FOLDS, DEFAULT_PORT};
use crate::synth::noisy_phantoms;
use crate::trainer::{
    cross_evaluate, fit_session, parse_curves, save_checkpoint, CheckpointFile, TrainConfig,
};
use crate::user_loss::{format_choice_log, parse_choice_log, ChoiceRecord, LossVariant, DEFAULT_Q};

#[derive(Debug, Parser)]
#[command(name = "prefdn", version, about = "Preference-trained pyramid denoiser")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Denoise one image with explicit parameters.
    Denoise(DenoiseArgs),
    /// Write the band-pass and residual images of the pyramid.
    Decompose(DecomposeArgs),
    /// Plan a forced-choice session and write its manifest.
    GenSession(GenSessionArgs),
    /// Plan a session and answer it with a simulated user.
    Simulate(SimulateArgs),
    /// Fit a model to a session's choices.
    Train(TrainArgs),
    /// Loss of each model on each choice set, as a CSV matrix.
    Eval(EvalArgs),
    /// Compare backprop against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the HTTP study service.
    Serve(ServeArgs),
    /// Write a model's loss curve as CSV.
    ExportCurves(ExportCurvesArgs),
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got '{s}'"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.parse().map_err(|_| format!("'{p}' is not a number"))?;
    }
    Ok(out)
}

fn parse_variant(s: &str) -> std::result::Result<LossVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// σ per level, e.g. 1,2,4
    #[arg(long, value_parser = parse_triple)]
    pub sigma: [f64; 3],
    /// ε per level, e.g. 0.02,0.05,0.1
    #[arg(long, value_parser = parse_triple)]
    pub eps: [f64; 3],
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory for band1..3 and residual images.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_parser = parse_triple, default_value = "1,2,4")]
    pub sigma: [f64; 3],
    /// Extension of the written images.
    #[arg(long, default_value = "pgm")]
    pub ext: String,
}

#[derive(Debug, Clone, Args)]
pub struct SessionArgs {
    /// Directory of source images (.pgm/.png).
    #[arg(long)]
    pub images: PathBuf,
    /// Session directory to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub scenarios_per_image: usize,
    #[arg(long, default_value_t = DEFAULT_Q)]
    pub q: usize,
    #[arg(long, default_value_t = DEFAULT_SPREAD)]
    pub spread: f64,
    /// Sampler center σ (defaults to 1,2,4).
    #[arg(long, value_parser = parse_triple)]
    pub center_sigma: Option<[f64; 3]>,
    /// Sampler center ε (defaults to 0.02,0.05,0.1).
    #[arg(long, value_parser = parse_triple)]
    pub center_eps: Option<[f64; 3]>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Frame id prefix; keep distinct across sessions that are evaluated together.
    #[arg(long, default_value = "s")]
    pub prefix: String,
    /// Fill the image directory with this many synthetic noisy phantoms first.
    #[arg(long)]
    pub synthesize: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub synth_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub synth_noise: f64,
}

#[derive(Debug, Args)]
pub struct GenSessionArgs {
    #[command(flatten)]
    pub session: SessionArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// Hidden σ of the simulated user.
    #[arg(long, value_parser = parse_triple)]
    pub sigma: [f64; 3],
    /// Hidden ε of the simulated user.
    #[arg(long, value_parser = parse_triple)]
    pub eps: [f64; 3],
    /// Probability of a uniformly random answer.
    #[arg(long, default_value_t = 0.0)]
    pub decision_noise: f64,
    #[arg(long, default_value = "sim")]
    pub user_id: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Session directory (manifest.json and choices.jsonl).
    #[arg(long)]
    pub session: PathBuf,
    /// Checkpoint path; the curve CSV and held-out choices are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_variant, default_value = "hybrid")]
    pub variant: LossVariant,
    #[arg(long, default_value_t = 5000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    /// Start from these σ instead of a random draw (needs --init-eps).
    #[arg(long, value_parser = parse_triple, requires = "init_eps")]
    pub init_sigma: Option<[f64; 3]>,
    #[arg(long, value_parser = parse_triple, requires = "init_sigma")]
    pub init_eps: Option<[f64; 3]>,
    /// Keep the last epoch instead of the best validation epoch.
    #[arg(long)]
    pub keep_last: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Comma-separated checkpoint files.
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<PathBuf>,
    /// Comma-separated choice logs (.jsonl).
    #[arg(long, value_delimiter = ',', required = true)]
    pub tests: Vec<PathBuf>,
    /// Session directories that define the frames; by default the directory
    /// of each test file.
    #[arg(long, value_delimiter = ',')]
    pub sessions: Vec<PathBuf>,
    #[arg(long, value_parser = parse_variant, default_value = "hybrid")]
    pub variant: LossVariant,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub size: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Minimum distance of band coefficients from their thresholds.
    #[arg(long, default_value_t = 1e-3)]
    pub margin: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "PREFDN_PORT", default_value_t = DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, env = "PREFDN_DATA", default_value = "data")]
    pub data: PathBuf,
    #[arg(long, env = "PREFDN_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Static UI files served outside /api.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportCurvesArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Denoise(a) => cmd_denoise(&a),
        Command::Decompose(a) => cmd_decompose(&a),
        Command::GenSession(a) => cmd_gen_session(&a.session).map(|_| ()),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Serve(a) => cmd_serve(a),
        Command::ExportCurves(a) => cmd_export_curves(&a),
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main_exit_code() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_denoise(a: &DenoiseArgs) -> Result<()> {
    let params = PyramidParams::new(a.sigma, a.eps);
    params.validate()?;
    let img = read_image(&a.input)?;
    write_image(&denoise(&img, &params)?, &a.out)
}

fn cmd_decompose(a: &DecomposeArgs) -> Result<()> {
    let img = read_image(&a.input)?;
    let d = decompose(&img, a.sigma)?;
    std::fs::create_dir_all(&a.out_dir)?;
    // bands are signed; shift them to mid-gray so they survive quantization
    for (i, band) in d.bandpass.iter().enumerate() {
        let path = a.out_dir.join(format!("band{}.{}", i + 1, a.ext));
        write_image(&band.map(|v| v + 0.5), &path)?;
    }
    write_image(&d.residual_lowpass, &a.out_dir.join(format!("residual.{}", a.ext)))
}

fn sampler_from(a: &SessionArgs) -> ParamSampler {
    let c = default_center();
    ParamSampler {
        center: PyramidParams::new(
            a.center_sigma.unwrap_or(c.sigmas),
            a.center_eps.unwrap_or(c.epsilons),
        ),
        spread: a.spread,
        ..Default::default()
    }
}

/// Writes the manifest and returns it with the loaded images.
fn cmd_gen_session(a: &SessionArgs) -> Result<(SessionManifest, Vec<Arc<Image>>)> {
    if let Some(n) = a.synthesize {
        std::fs::create_dir_all(&a.images)?;
        for (i, img) in noisy_phantoms(n, a.synth_size, a.synth_noise, a.seed)?
            .iter()
            .enumerate()
        {
            write_image(img, &a.images.join(format!("phantom{i:03}.pgm")))?;
        }
    }
    let files = list_image_files(&a.images)?;
    let paths = files
        .iter()
        .map(|f| Ok(std::fs::canonicalize(f)?.to_string_lossy().into_owned()))
        .collect::<Result<Vec<_>>>()?;
    let manifest = SessionManifest::plan(
        paths,
        a.scenarios_per_image,
        sampler_from(a),
        a.q,
        a.seed,
        &a.prefix,
    )?;
    let images = manifest.load_images(&a.out)?;
    std::fs::create_dir_all(&a.out)?;
    manifest.write(&a.out.join(MANIFEST_FILE))?;
    eprintln!(
        "{} frames from {} images written to {}",
        manifest.frames.len(),
        images.len(),
        a.out.display()
    );
    Ok((manifest, images))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let oracle = OracleUser::new(
        a.user_id.clone(),
        PyramidParams::new(a.sigma, a.eps),
        a.decision_noise,
    )?;
    let (manifest, images) = cmd_gen_session(&a.session)?;
    let sets = manifest.render(&images)?;
    let records = simulate_choices(&sets, &oracle, a.session.seed)?;
    std::fs::write(a.session.out.join(CHOICES_FILE), format_choice_log(&records)?)?;
    println!("{} choices", records.len());
    Ok(())
}

fn load_session(dir: &Path) -> Result<(FrameStore, Vec<ChoiceRecord>)> {
    let manifest = SessionManifest::read(&dir.join(MANIFEST_FILE))?;
    let records = parse_choice_log(&std::fs::read_to_string(dir.join(CHOICES_FILE))?)?;
    Ok((FrameStore::from_manifest(&manifest, dir)?, records))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let (store, records) = load_session(&a.session)?;
    let config = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        variant: a.variant,
        seed: a.seed,
        init: a.init_sigma.zip(a.init_eps).map(|(s, e)| PyramidParams::new(s, e)),
        select_by_validation: !a.keep_last,
        ..Default::default()
    };
    let fit = fit_session(&records, &store, &config, a.folds, |p| {
        if p.epoch % config.log_every == 0 {
            eprintln!("epoch {} loss {:.6e}", p.epoch, p.loss);
        }
    })?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(&fit.checkpoint, &a.out)?;
    std::fs::write(a.out.with_extension("test.jsonl"), format_choice_log(&fit.test)?)?;
    let cp = &fit.checkpoint;
    println!(
        "sigmas={:?} epsilons={:?} selected_epoch={} train_loss={:.6e} initial_loss={:.6e}",
        cp.params.sigmas,
        cp.params.epsilons,
        cp.selected_epoch,
        cp.selected_loss(),
        cp.initial_loss
    );
    Ok(())
}

/// Renders the frames that `records` reference from the given sessions.
/// The same frame id may appear in several sessions only if it denotes the
/// same scenario.
fn resolve_frames(session_dirs: &[PathBuf], records: &[ChoiceRecord]) -> Result<FrameStore> {
    let mut owner: HashMap<String, (PathBuf, SessionManifest, usize)> = HashMap::new();
    for dir in session_dirs {
        let manifest = SessionManifest::read(&dir.join(MANIFEST_FILE))?;
        for (i, f) in manifest.frames.iter().enumerate() {
            let image = manifest.resolve_image_path(dir, f.source);
            if let Some((d, m, j)) = owner.get(&f.frame_id) {
                let other = &m.frames[*j];
                let same = m.resolve_image_path(d, other.source) == image
                    && other.seed == f.seed
                    && m.sampler == manifest.sampler
                    && m.q == manifest.q;
                if !same {
                    return Err(Error::Input(format!(
                        "frame id {} names different scenarios in {} and {}; regenerate with distinct --prefix",
                        f.frame_id,
                        d.display(),
                        dir.display()
                    )));
                }
                continue;
            }
            owner.insert(f.frame_id.clone(), (dir.clone(), manifest.clone(), i));
        }
    }
    let mut wanted: Vec<&str> = records.iter().map(|r| r.frame_id.as_str()).collect();
    wanted.sort_unstable();
    wanted.dedup();
    let mut images: HashMap<PathBuf, Arc<Image>> = HashMap::new();
    let mut sets: Vec<CandidateSet> = Vec::with_capacity(wanted.len());
    for id in wanted {
        let (dir, m, i) = owner
            .get(id)
            .ok_or_else(|| Error::MissingData(format!("frame '{id}' not in any session")))?;
        let f = &m.frames[*i];
        let path = m.resolve_image_path(dir, f.source);
        let img = match images.get(&path) {
            Some(img) => img.clone(),
            None => {
                let img = Arc::new(read_image(&path)?);
                images.insert(path, img.clone());
                img
            }
        };
        sets.push(crate::scenario::generate_candidate_set(
            img, f.source, &f.frame_id, &m.sampler, m.q, f.seed,
        )?);
    }
    FrameStore::new(sets)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let models = a
        .models
        .iter()
        .map(|p| CheckpointFile::read(p).map(|c| (c.params(), c.variant)))
        .collect::<Result<Vec<_>>>()?;
    let tests = a
        .tests
        .iter()
        .map(|p| parse_choice_log(&std::fs::read_to_string(p)?))
        .collect::<Result<Vec<_>>>()?;
    let sessions: Vec<PathBuf> = if a.sessions.is_empty() {
        let mut dirs: Vec<PathBuf> = a
            .tests
            .iter()
            .map(|t| t.parent().unwrap_or(Path::new(".")).to_path_buf())
            .collect();
        dirs.dedup();
        dirs
    } else {
        a.sessions.clone()
    };
    let all: Vec<ChoiceRecord> = tests.iter().flatten().cloned().collect();
    let store = resolve_frames(&sessions, &all)?;
    let matrix = cross_evaluate(&models, &tests, &store, a.variant)?;

    let mut csv = String::from("model");
    for t in &a.tests {
        csv.push(',');
        csv.push_str(&stem(t));
    }
    csv.push('\n');
    for (m, row) in a.models.iter().zip(&matrix) {
        csv.push_str(&stem(m));
        for v in row {
            csv.push_str(&format!(",{v:e}"));
        }
        csv.push('\n');
    }
    emit(&csv, a.out.as_deref())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    if a.size == 0 || !a.h.is_finite() || a.h <= 0.0 {
        return Err(Error::Input("size and h must be positive".into()));
    }
    let case = GradCheckCase::sample(a.size, a.seed, a.margin, a.h);
    let report = gradient_check(&case.image, &case.params, &case.target, a.h)?;
    let names = ["sigma1", "sigma2", "sigma3", "eps1", "eps2", "eps3"];
    let (an, nu) = (report.analytic.to_array(), report.numeric.to_array());
    let mut out = String::from("param,value,analytic,numeric,rel_error\n");
    let values = case.params.to_array();
    for i in 0..6 {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e}\n",
            names[i], values[i], an[i], nu[i], report.relative_errors[i]
        ));
    }
    emit(&out, None)?;
    let max = report.max_relative_error();
    eprintln!("max relative error {max:e} (kink margin {:e})", report.kink_margin);
    if max > a.tolerance {
        return Err(Error::Numeric(format!(
            "max relative error {max:e} exceeds {:e}",
            a.tolerance
        )));
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        data_dir: a.data,
        master_seed: a.seed,
        ui_dir: a.ui_dir,
    };
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(crate::service::serve(config, a.port))
}

fn cmd_export_curves(a: &ExportCurvesArgs) -> Result<()> {
    let cp = CheckpointFile::read(&a.model)?;
    let text = std::fs::read_to_string(cp.curve_location(&a.model))?;
    parse_curves(&text)?;
    emit(&text, a.out.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn triples() {
        assert_eq!(parse_triple("1,2,4").unwrap(), [1.0, 2.0, 4.0]);
        assert_eq!(parse_triple(" 0.5, 1e-2 ,3").unwrap(), [0.5, 0.01, 3.0]);
        assert!(parse_triple("1,2").is_err());
        assert!(parse_triple("1,2,x").is_err());
        assert!(parse_triple("1,2,3,4").is_err());
    }

    #[test]
    fn argument_errors_exit_with_two() {
        let e = Cli::try_parse_from(["prefdn", "denoise", "--in", "a", "--out", "b", "--sigma", "1,2", "--eps", "0,0,0"])
            .unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = Cli::try_parse_from(["prefdn", "frobnicate"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
