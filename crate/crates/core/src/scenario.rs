//! Forced-choice study material: randomized candidate renderings per frame,
//! the session manifest that regenerates them, and a simulated user.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{read_image, sum_squared_diff, Image, ImageFormat};
use crate::pyramid::{denoise, ParamBounds, PyramidConfig, PyramidParams};
use crate::user_loss::{ChoiceRecord, FrameResolver, FrameView, DEFAULT_Q};

/// Stable 64-bit seed from a parent seed, a label and an index.
pub fn derive_seed(parent: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Center values the candidates are scattered around.
pub fn default_center() -> PyramidParams {
    PyramidParams::new([1.0, 2.0, 4.0], [0.02, 0.05, 0.1])
}

pub const DEFAULT_SPREAD: f64 = 0.75;

/// Multiplicative uniform perturbation around a center parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSampler {
    pub center: PyramidParams,
    /// Fractional half-range: each component is drawn from
    /// `[c(1 - spread), c(1 + spread)]`.
    pub spread: f64,
    pub bounds: ParamBounds,
}

impl Default for ParamSampler {
    fn default() -> Self {
        Self {
            center: default_center(),
            spread: DEFAULT_SPREAD,
            bounds: ParamBounds::default(),
        }
    }
}

impl ParamSampler {
    pub fn validate(&self) -> Result<()> {
        if !self.spread.is_finite() || self.spread < 0.0 {
            return Err(Error::ParamRange(format!(
                "spread must be >= 0, got {}",
                self.spread
            )));
        }
        self.bounds.validate()?;
        self.center.validate()
    }

    pub fn sample(&self, seed: u64) -> PyramidParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng)
    }

    pub fn sample_with(&self, rng: &mut impl Rng) -> PyramidParams {
        let mut draw = |c: f64| {
            if self.spread == 0.0 {
                c
            } else {
                c * (1.0 + self.spread * (2.0 * rng.random::<f64>() - 1.0))
            }
        };
        let b = &self.bounds;
        let sigmas = self
            .center
            .sigmas
            .map(|c| draw(c).clamp(b.sigma_min, b.sigma_max));
        let epsilons = self.center.epsilons.map(|c| draw(c).clamp(0.0, b.eps_max));
        PyramidParams::new(sigmas, epsilons)
    }
}

/// Q denoised variants of one source frame.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub frame_id: String,
    /// Index of the source image in the session's image list.
    pub source_index: usize,
    pub source: Arc<Image>,
    pub candidates: Vec<Image>,
    pub gen_params: Vec<PyramidParams>,
    pub seed: u64,
}

impl CandidateSet {
    pub fn q(&self) -> usize {
        self.candidates.len()
    }

    pub fn view(&self) -> FrameView<'_> {
        FrameView {
            source: &self.source,
            candidates: &self.candidates,
        }
    }
}

pub fn generate_candidate_set(
    source: Arc<Image>,
    source_index: usize,
    frame_id: &str,
    sampler: &ParamSampler,
    q: usize,
    seed: u64,
) -> Result<CandidateSet> {
    if q < 2 {
        return Err(Error::Input(format!("need at least 2 candidates, got {q}")));
    }
    sampler.validate()?;
    let gen_params: Vec<PyramidParams> = (0..q)
        .map(|k| sampler.sample(derive_seed(seed, "candidate", k as u64)))
        .collect();
    let candidates = gen_params
        .iter()
        .map(|p| denoise(&source, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateSet {
        frame_id: frame_id.to_string(),
        source_index,
        source,
        candidates,
        gen_params,
        seed,
    })
}

/// Simulated user that prefers the candidate closest to its own hidden
/// parameter setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleUser {
    pub user_id: String,
    pub hidden_params: PyramidParams,
    /// Probability of answering uniformly at random instead.
    pub decision_noise: f64,
}

impl OracleUser {
    pub fn new(user_id: impl Into<String>, hidden_params: PyramidParams, decision_noise: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decision_noise) {
            return Err(Error::ParamRange(format!(
                "decision noise must lie in [0, 1], got {decision_noise}"
            )));
        }
        hidden_params.validate()?;
        Ok(Self {
            user_id: user_id.into(),
            hidden_params,
            decision_noise,
        })
    }

    /// The user's ideal rendering of `source`.
    pub fn preferred_image(&self, source: &Image) -> Result<Image> {
        denoise(source, &self.hidden_params)
    }

    /// Index of the pick given the preferred rendering; ties go to the
    /// lowest index.
    pub fn choose_against(&self, preferred: &Image, set: &CandidateSet, seed: u64) -> Result<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if self.decision_noise > 0.0 && rng.random::<f64>() < self.decision_noise {
            return Ok(rng.random_range(0..set.q()));
        }
        let mut best = (0, f64::INFINITY);
        for (k, cand) in set.candidates.iter().enumerate() {
            let e = sum_squared_diff(preferred, cand)?;
            if e < best.1 {
                best = (k, e);
            }
        }
        Ok(best.0)
    }
}

pub fn oracle_choose(set: &CandidateSet, oracle: &OracleUser, seed: u64) -> Result<ChoiceRecord> {
    let preferred = oracle.preferred_image(&set.source)?;
    Ok(ChoiceRecord {
        user_id: oracle.user_id.clone(),
        frame_id: set.frame_id.clone(),
        selected: oracle.choose_against(&preferred, set, seed)?,
        q: set.q(),
        ts: 0,
    })
}

/// Answers every set in order. `ts` is a logical clock (the answer index)
/// so the log is reproducible.
pub fn simulate_choices(
    sets: &[CandidateSet],
    oracle: &OracleUser,
    seed: u64,
) -> Result<Vec<ChoiceRecord>> {
    let mut sources: Vec<usize> = sets.iter().map(|s| s.source_index).collect();
    sources.sort_unstable();
    sources.dedup();
    let preferred: HashMap<usize, Image> = sources
        .par_iter()
        .map(|&i| {
            let set = sets.iter().find(|s| s.source_index == i).expect("source present");
            Ok((i, oracle.preferred_image(&set.source)?))
        })
        .collect::<Result<_>>()?;
    sets.iter()
        .enumerate()
        .map(|(ts, set)| {
            let pick = oracle.choose_against(
                &preferred[&set.source_index],
                set,
                derive_seed(seed, &set.frame_id, 0),
            )?;
            Ok(ChoiceRecord {
                user_id: oracle.user_id.clone(),
                frame_id: set.frame_id.clone(),
                selected: pick,
                q: set.q(),
                ts: ts as u64,
            })
        })
        .collect()
}

/// One scenario entry of a session manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_id: String,
    pub source: usize,
    pub seed: u64,
}

/// Everything needed to regenerate a session's candidates bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub version: u32,
    pub master_seed: u64,
    pub q: usize,
    pub scenarios_per_image: usize,
    pub sampler: ParamSampler,
    #[serde(default)]
    pub pyramid: PyramidConfig,
    /// Image paths, relative to the manifest's directory unless absolute.
    pub images: Vec<String>,
    pub frames: Vec<FrameEntry>,
}

pub const MANIFEST_VERSION: u32 = 1;

impl SessionManifest {
    /// Lays out `scenarios_per_image` scenarios per image with frame ids
    /// `{prefix}{index:04}` and per-scenario seeds derived from the master.
    pub fn plan(
        images: Vec<String>,
        scenarios_per_image: usize,
        sampler: ParamSampler,
        q: usize,
        master_seed: u64,
        prefix: &str,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Input("session needs at least one image".into()));
        }
        if scenarios_per_image == 0 {
            return Err(Error::Input("scenarios_per_image must be >= 1".into()));
        }
        if q < 2 {
            return Err(Error::Input(format!("need at least 2 candidates, got {q}")));
        }
        sampler.validate()?;
        let frames = (0..images.len())
            .flat_map(|src| (0..scenarios_per_image).map(move |k| (src, k)))
            .enumerate()
            .map(|(i, (source, _))| {
                let frame_id = format!("{prefix}{i:04}");
                let seed = derive_seed(master_seed, &frame_id, 0);
                FrameEntry {
                    frame_id,
                    source,
                    seed,
                }
            })
            .collect();
        Ok(Self {
            version: MANIFEST_VERSION,
            master_seed,
            q,
            scenarios_per_image,
            sampler,
            pyramid: PyramidConfig::default(),
            images,
            frames,
        })
    }

    /// Permutes presentation order with a seeded shuffle. Frame ids and
    /// seeds travel with their entries.
    pub fn shuffle_frames(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "frame-order", 0));
        self.frames.shuffle(&mut rng);
    }

    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate()?;
        self.sampler.validate()?;
        if let Some(f) = self.frames.iter().find(|f| f.source >= self.images.len()) {
            return Err(Error::Input(format!(
                "frame {} references missing image {}",
                f.frame_id, f.source
            )));
        }
        Ok(())
    }

    /// Renders every scenario from already-loaded images.
    pub fn render(&self, images: &[Arc<Image>]) -> Result<Vec<CandidateSet>> {
        self.validate()?;
        if images.len() != self.images.len() {
            return Err(Error::Input(format!(
                "manifest lists {} images, {} supplied",
                self.images.len(),
                images.len()
            )));
        }
        self.frames
            .par_iter()
            .map(|f| {
                generate_candidate_set(
                    images[f.source].clone(),
                    f.source,
                    &f.frame_id,
                    &self.sampler,
                    self.q,
                    f.seed,
                )
            })
            .collect()
    }

    pub fn resolve_image_path(&self, base_dir: &Path, index: usize) -> PathBuf {
        let p = Path::new(&self.images[index]);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }

    pub fn load_images(&self, base_dir: &Path) -> Result<Vec<Arc<Image>>> {
        (0..self.images.len())
            .map(|i| read_image(&self.resolve_image_path(base_dir, i)).map(Arc::new))
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHOICES_FILE: &str = "choices.jsonl";

/// Image files (`.pgm`, `.pnm`, `.png`) directly inside `dir`, sorted by name.
pub fn list_image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Input(format!("image directory {} not found", dir.display())));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && ImageFormat::from_path(p).is_ok())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Input(format!("no images in {}", dir.display())));
    }
    Ok(files)
}

/// In-memory image and scenario sets: `images.len() * scenarios_per_image`
/// candidate sets with frame ids `s0000, s0001, ...`.
pub fn build_session(
    images: &[Arc<Image>],
    scenarios_per_image: usize,
    sampler: &ParamSampler,
    q: usize,
    master_seed: u64,
) -> Result<Vec<CandidateSet>> {
    let names = (0..images.len()).map(|i| format!("image{i}")).collect();
    SessionManifest::plan(names, scenarios_per_image, *sampler, q, master_seed, "s")?
        .render(images)
}

/// Rendered candidate sets indexed by frame id.
#[derive(Debug, Clone, Default)]
pub struct FrameStore {
    sets: Vec<CandidateSet>,
    index: HashMap<String, usize>,
}

impl FrameStore {
    pub fn new(sets: Vec<CandidateSet>) -> Result<Self> {
        let mut index = HashMap::with_capacity(sets.len());
        for (i, s) in sets.iter().enumerate() {
            if index.insert(s.frame_id.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate frame id {}", s.frame_id)));
            }
        }
        Ok(Self { sets, index })
    }

    pub fn from_manifest(manifest: &SessionManifest, base_dir: &Path) -> Result<Self> {
        let images = manifest.load_images(base_dir)?;
        Self::new(manifest.render(&images)?)
    }

    pub fn sets(&self) -> &[CandidateSet] {
        &self.sets
    }

    pub fn get(&self, frame_id: &str) -> Option<&CandidateSet> {
        self.index.get(frame_id).map(|&i| &self.sets[i])
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Stratum (source image index) of each record, for split construction.
    pub fn strata(&self, records: &[ChoiceRecord]) -> Result<Vec<usize>> {
        records
            .iter()
            .map(|r| {
                self.get(&r.frame_id)
                    .map(|s| s.source_index)
                    .ok_or_else(|| Error::MissingData(format!("unknown frame '{}'", r.frame_id)))
            })
            .collect()
    }
}

impl FrameResolver for FrameStore {
    fn resolve(&self, frame_id: &str) -> Option<FrameView<'_>> {
        self.get(frame_id).map(CandidateSet::view)
    }
}

impl Default for SessionManifest {
    fn default() -> Self {
        Self {
            version: MANIFEST_VERSION,
            master_seed: 0,
            q: DEFAULT_Q,
            scenarios_per_image: 4,
            sampler: ParamSampler::default(),
            pyramid: PyramidConfig::default(),
            images: Vec::new(),
            frames: Vec::new(),
        }
    }
}
