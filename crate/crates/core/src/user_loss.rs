//! Losses built from forced-choice selections.
//!
//! For one frame with candidates `I_0..I_{Q-1}` and network output `I_NN`,
//! the candidate errors are `e_q = mean((I_NN - I_q)²)`. A user picking `*`
//! implies `e_* <= e_q` for every `q`; the three variants are
//!
//! * best-match: `e_*`
//! * forced-choice: `Σ_q max(e_* - e_q, 0)`
//! * hybrid: the sum of both.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{sum_squared_diff, Image};
use crate::pyramid::{denoise, PyramidParams};

/// Default number of candidates shown per frame.
pub const DEFAULT_Q: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    BestMatch,
    ForcedChoice,
    Hybrid,
}

impl LossVariant {
    pub const ALL: [LossVariant; 3] = [
        LossVariant::BestMatch,
        LossVariant::ForcedChoice,
        LossVariant::Hybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::BestMatch => "best-match",
            LossVariant::ForcedChoice => "forced-choice",
            LossVariant::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "bm" | "best-match" | "bestmatch" => Ok(LossVariant::BestMatch),
            "fc" | "forced-choice" | "forcedchoice" => Ok(LossVariant::ForcedChoice),
            "hy" | "hybrid" => Ok(LossVariant::Hybrid),
            other => Err(Error::Input(format!(
                "unknown loss variant '{other}' (expected best-match, forced-choice or hybrid)"
            ))),
        }
    }
}

/// One forced-choice decision. Serialized as one JSON object per line of a
/// session's choice log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub user_id: String,
    pub frame_id: String,
    /// Canonical candidate index (not the on-screen position).
    pub selected: usize,
    /// Number of candidates shown.
    pub q: usize,
    /// Milliseconds since the Unix epoch, or a logical clock for simulated users.
    pub ts: u64,
}

impl ChoiceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.selected >= self.q {
            return Err(Error::IndexOutOfRange {
                index: self.selected,
                len: self.q,
            });
        }
        Ok(())
    }
}

/// Parses a JSONL choice log, skipping blank lines.
pub fn parse_choice_log(text: &str) -> Result<Vec<ChoiceRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let rec: ChoiceRecord = serde_json::from_str(l)?;
            rec.validate()?;
            Ok(rec)
        })
        .collect()
}

pub fn format_choice_log(records: &[ChoiceRecord]) -> Result<String> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}

fn check_index(errors: &[f64], selected: usize) -> Result<()> {
    if selected >= errors.len() {
        return Err(Error::IndexOutOfRange {
            index: selected,
            len: errors.len(),
        });
    }
    Ok(())
}

pub fn candidate_errors(output: &Image, candidates: &[Image]) -> Result<Vec<f64>> {
    candidates
        .iter()
        .map(|c| sum_squared_diff(output, c))
        .collect()
}

pub fn best_match_loss(errors: &[f64], selected: usize) -> Result<f64> {
    check_index(errors, selected)?;
    Ok(errors[selected])
}

/// Per-candidate hinge terms `max(e_* - e_q, 0)`; the selected slot is 0.
pub fn hinge_terms(errors: &[f64], selected: usize) -> Result<Vec<f64>> {
    check_index(errors, selected)?;
    let chosen = errors[selected];
    Ok(errors
        .iter()
        .enumerate()
        .map(|(q, &e)| if q == selected { 0.0 } else { (chosen - e).max(0.0) })
        .collect())
}

pub fn forced_choice_loss(errors: &[f64], selected: usize) -> Result<f64> {
    Ok(hinge_terms(errors, selected)?.iter().sum())
}

pub fn hybrid_loss(errors: &[f64], selected: usize) -> Result<f64> {
    Ok(best_match_loss(errors, selected)? + forced_choice_loss(errors, selected)?)
}

pub fn variant_loss(errors: &[f64], selected: usize, variant: LossVariant) -> Result<f64> {
    match variant {
        LossVariant::BestMatch => best_match_loss(errors, selected),
        LossVariant::ForcedChoice => forced_choice_loss(errors, selected),
        LossVariant::Hybrid => hybrid_loss(errors, selected),
    }
}

/// `∂L/∂e_q` for one frame. Hinges at exact ties contribute nothing.
pub fn loss_gradient_weights(
    errors: &[f64],
    selected: usize,
    variant: LossVariant,
) -> Result<Vec<f64>> {
    check_index(errors, selected)?;
    let mut w = vec![0.0; errors.len()];
    if matches!(variant, LossVariant::BestMatch | LossVariant::Hybrid) {
        w[selected] += 1.0;
    }
    if matches!(variant, LossVariant::ForcedChoice | LossVariant::Hybrid) {
        let chosen = errors[selected];
        for (q, &e) in errors.iter().enumerate() {
            if q != selected && chosen > e {
                w[selected] += 1.0;
                w[q] -= 1.0;
            }
        }
    }
    Ok(w)
}

/// Number of constraints `e_* <= e_q` that the errors violate.
pub fn violated_constraints(errors: &[f64], selected: usize) -> Result<usize> {
    check_index(errors, selected)?;
    let chosen = errors[selected];
    Ok(errors
        .iter()
        .enumerate()
        .filter(|&(q, &e)| q != selected && chosen > e)
        .count())
}

/// Aggregate over a batch of frames.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Σ_s e_{s,*}, reported for every variant.
    pub best_match_term: f64,
    /// Σ_s max(e_{s,*} - e_{s,q}, 0) per candidate slot q.
    pub hinge_terms: Vec<f64>,
    pub violated_constraints: usize,
    /// Number of (s, q≠*) pairs considered.
    pub constraints: usize,
    pub frames: usize,
}

impl LossBreakdown {
    pub fn violation_rate(&self) -> f64 {
        if self.constraints == 0 {
            0.0
        } else {
            self.violated_constraints as f64 / self.constraints as f64
        }
    }

    pub fn hinge_total(&self) -> f64 {
        self.hinge_terms.iter().sum()
    }

    /// Adds one frame's errors in place. Frames must be accumulated in a
    /// fixed order for the totals to be reproducible.
    pub fn accumulate(
        &mut self,
        errors: &[f64],
        selected: usize,
        variant: LossVariant,
    ) -> Result<()> {
        let hinges = hinge_terms(errors, selected)?;
        if self.hinge_terms.len() < hinges.len() {
            self.hinge_terms.resize(hinges.len(), 0.0);
        }
        for (acc, h) in self.hinge_terms.iter_mut().zip(&hinges) {
            *acc += h;
        }
        self.best_match_term += errors[selected];
        self.total += variant_loss(errors, selected, variant)?;
        self.violated_constraints += violated_constraints(errors, selected)?;
        self.constraints += errors.len() - 1;
        self.frames += 1;
        Ok(())
    }
}

/// Source frame and rendered candidates for one scenario.
pub struct FrameView<'a> {
    pub source: &'a Image,
    pub candidates: &'a [Image],
}

/// Looks up stored candidate sets by frame id.
pub trait FrameResolver: Sync {
    fn resolve(&self, frame_id: &str) -> Option<FrameView<'_>>;
}

pub(crate) fn resolve_or_err<'a, R: FrameResolver + ?Sized>(
    resolver: &'a R,
    record: &ChoiceRecord,
) -> Result<FrameView<'a>> {
    let view = resolver
        .resolve(&record.frame_id)
        .ok_or_else(|| Error::MissingData(format!("unknown frame '{}'", record.frame_id)))?;
    if record.selected >= view.candidates.len() {
        return Err(Error::IndexOutOfRange {
            index: record.selected,
            len: view.candidates.len(),
        });
    }
    Ok(view)
}

/// Summed loss over `records` with the network evaluated at `params`.
pub fn batch_loss<R: FrameResolver + ?Sized>(
    records: &[ChoiceRecord],
    resolver: &R,
    params: &PyramidParams,
    variant: LossVariant,
) -> Result<LossBreakdown> {
    use rayon::prelude::*;

    let per_frame: Vec<(Vec<f64>, usize)> = records
        .par_iter()
        .map(|rec| {
            let view = resolve_or_err(resolver, rec)?;
            let output = denoise(view.source, params)?;
            Ok((candidate_errors(&output, view.candidates)?, rec.selected))
        })
        .collect::<Result<_>>()?;
    let mut breakdown = LossBreakdown::default();
    for (errors, selected) in &per_frame {
        breakdown.accumulate(errors, *selected, variant)?;
    }
    Ok(breakdown)
}
