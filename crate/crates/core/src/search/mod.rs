//! Box-prompt search for one foreground class.
//!
//! The search grows a pixel set from the most confident pixels, first over
//! target-model features and then over segmenter features, boxes the set
//! after every step and queries the segmenter. It stops once consecutive
//! segmenter outputs stop changing.

mod pixels;
mod propagate;
mod stability;
mod trace;

use std::fmt;
use std::str::FromStr;

pub use pixels::{disk_offsets, PixelSet};
pub use propagate::{
    artificial_expand, box_from_pixels, mbs_prototype, mbs_prototype_unit, mbs_step, mbs_step_with,
    mbs_threshold, prototype_distances, select_seed, tbs_step, tbs_step_unit, UnitFeatures,
};
pub use stability::{check_stable, delta_m, STABLE_SPANS};
pub use trace::{Phase, SearchTrace, Termination, TraceRecord, TRACE_HEADER};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, BoxPrompt};
use crate::segmenter::SegmenterSession;
use crate::tensor::{FeatureMap, ProbabilityMap};

/// Dataset family whose hyperparameters seed a [`SearchConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Profile {
    #[default]
    Abdominal,
    Prostate,
    Custom,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Abdominal => "abdominal",
            Profile::Prostate => "prostate",
            Profile::Custom => "custom",
        }
    }

    /// Aggregation temperature for this profile.
    pub fn temperature(self) -> f64 {
        match self {
            Profile::Prostate => 10.0,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "abdominal" => Ok(Profile::Abdominal),
            "prostate" => Ok(Profile::Prostate),
            "custom" => Ok(Profile::Custom),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub p_delta: f64,
    pub tau_f: f64,
    pub r: usize,
    pub margin_m: usize,
    pub tau_delta: f64,
    pub tau_div: f64,
    pub tau_max: f64,
    pub n_artificial: usize,
    pub max_iters: usize,
    /// Run the segmenter-feature phase when the backend exposes features.
    pub use_mbs: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self::abdominal()
    }
}

impl SearchConfig {
    pub fn abdominal() -> Self {
        Self {
            p_delta: 0.005,
            tau_f: 0.99,
            r: 4,
            margin_m: 2,
            tau_delta: 15.0,
            tau_div: 2.5,
            tau_max: 0.35,
            n_artificial: 3,
            max_iters: 256,
            use_mbs: true,
        }
    }

    pub fn prostate() -> Self {
        Self {
            tau_max: 0.30,
            ..Self::abdominal()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Prostate => Self::prostate(),
            _ => Self::abdominal(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.p_delta > 0.0 && self.p_delta < 1.0) {
            return fail(format!("p_delta must be in (0, 1), got {}", self.p_delta));
        }
        if !(self.tau_f > 0.0 && self.tau_f <= 1.0) {
            return fail(format!("tau_f must be in (0, 1], got {}", self.tau_f));
        }
        if self.r < 1 {
            return fail("r must be at least 1".into());
        }
        if !(self.tau_delta >= 0.0 && self.tau_delta.is_finite()) {
            return fail(format!("tau_delta must be >= 0, got {}", self.tau_delta));
        }
        if !(self.tau_div > 0.0 && self.tau_div.is_finite()) {
            return fail(format!("tau_div must be > 0, got {}", self.tau_div));
        }
        if !(self.tau_max > 0.0 && self.tau_max < 2.0) {
            return fail(format!("tau_max must be in (0, 2), got {}", self.tau_max));
        }
        if self.max_iters < 1 {
            return fail("max_iters must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub mask: BinaryMask,
    pub trace: SearchTrace,
    /// Whether the segmenter-feature phase ran.
    pub mbs_ran: bool,
}

impl SearchOutcome {
    pub fn termination(&self) -> Termination {
        self.trace
            .termination
            .expect("finished search has a termination")
    }
}

enum PhaseEnd {
    /// Index of the first query of the stable interval in the phase history.
    Stable(usize),
    Fixpoint,
    Cap,
}

#[derive(Default)]
struct History {
    boxes: Vec<BoxPrompt>,
    masks: Vec<BinaryMask>,
}

struct Runner<'a, 's> {
    session: &'a mut (dyn SegmenterSession + 's),
    cfg: &'a SearchConfig,
    trace: SearchTrace,
    height: usize,
    width: usize,
    last: Option<BinaryMask>,
}

impl Runner<'_, '_> {
    /// Queries the segmenter; `None` once the iteration cap is reached.
    fn query(
        &mut self,
        phase: Phase,
        set_size: usize,
        bx: BoxPrompt,
    ) -> Result<Option<BinaryMask>> {
        let iteration = self.trace.records.len();
        if iteration >= self.cfg.max_iters {
            return Ok(None);
        }
        let mask = self.session.segment(&bx).map_err(|e| Error::Backend {
            phase: phase.as_str(),
            iteration,
            source: Box::new(e),
        })?;
        if mask.height() != self.height || mask.width() != self.width {
            return Err(Error::Backend {
                phase: phase.as_str(),
                iteration,
                source: Box::new(Error::ShapeMismatch(format!(
                    "segmenter returned {}x{} mask for {}x{} image",
                    mask.height(),
                    mask.width(),
                    self.height,
                    self.width
                ))),
            });
        }
        let delta = match &self.last {
            Some(prev) => Some(delta_m(prev, &mask)?),
            None => None,
        };
        self.trace.records.push(TraceRecord {
            iteration,
            phase,
            set_size,
            bx,
            delta_m: delta,
            stable_span: 0,
        });
        self.last = Some(mask.clone());
        Ok(Some(mask))
    }

    fn push_and_check(
        &mut self,
        hist: &mut History,
        bx: BoxPrompt,
        mask: BinaryMask,
    ) -> Option<usize> {
        hist.boxes.push(bx);
        hist.masks.push(mask);
        let (j, j2) = check_stable(&hist.masks, self.cfg.tau_delta)?;
        if let Some(rec) = self.trace.records.last_mut() {
            rec.stable_span = j2 - j;
        }
        Some(j)
    }

    fn run_phase(
        &mut self,
        phase: Phase,
        mut set: PixelSet,
        hist: &mut History,
        mut grow: impl FnMut(&PixelSet) -> Result<PixelSet>,
    ) -> Result<(PhaseEnd, PixelSet)> {
        loop {
            let bx = box_from_pixels(&set, self.cfg.margin_m, self.height, self.width)?;
            let Some(mask) = self.query(phase, set.len(), bx)? else {
                return Ok((PhaseEnd::Cap, set));
            };
            if let Some(j) = self.push_and_check(hist, bx, mask) {
                return Ok((PhaseEnd::Stable(j), set));
            }
            let next = grow(&set)?;
            if next.len() == set.len() {
                return Ok((PhaseEnd::Fixpoint, set));
            }
            set = next;
        }
    }

    fn finish(
        mut self,
        mask: BinaryMask,
        bx: Option<BoxPrompt>,
        why: Termination,
        mbs_ran: bool,
    ) -> SearchOutcome {
        self.trace.chosen_box = bx;
        self.trace.termination = Some(why);
        SearchOutcome {
            mask,
            trace: self.trace,
            mbs_ran,
        }
    }

    fn finish_cap(self, mbs_ran: bool) -> SearchOutcome {
        let bx = self.trace.records.last().map(|r| r.bx);
        let mask = self
            .last
            .clone()
            .unwrap_or_else(|| BinaryMask::empty(self.height, self.width));
        self.finish(mask, bx, Termination::IterationCap, mbs_ran)
    }
}

/// Searches a box prompt for class `k` and returns the segmenter mask it yields.
pub fn search_class(
    session: &mut dyn SegmenterSession,
    probs: &ProbabilityMap,
    target: &FeatureMap,
    k: usize,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let (h, w) = (probs.height(), probs.width());
    if target.height() != h || target.width() != w {
        return Err(Error::ShapeMismatch(format!(
            "probabilities {h}x{w} vs target features {}x{}",
            target.height(),
            target.width()
        )));
    }
    if session.height() != h || session.width() != w {
        return Err(Error::ShapeMismatch(format!(
            "probabilities {h}x{w} vs segmenter image {}x{}",
            session.height(),
            session.width()
        )));
    }
    let seed = select_seed(probs, k, cfg.p_delta)?;
    let target_unit = UnitFeatures::new(target);

    let mut run = Runner {
        session,
        cfg,
        trace: SearchTrace::new(k),
        height: h,
        width: w,
        last: None,
    };
    run.trace.zero_norm_target = target_unit.zero_norm_count();

    let mut tbs = History::default();
    let (end, _) = run.run_phase(Phase::Tbs, seed, &mut tbs, |s| {
        tbs_step_unit(s, &target_unit, cfg.tau_f, cfg.r)
    })?;
    let (tbs_index, tbs_reason) = match end {
        PhaseEnd::Cap => return Ok(run.finish_cap(false)),
        PhaseEnd::Stable(j) => (j, Termination::StableTbs),
        PhaseEnd::Fixpoint => (tbs.masks.len() - 1, Termination::FixpointTbs),
    };
    let tbs_mask = tbs.masks.swap_remove(tbs_index);
    let tbs_box = tbs.boxes[tbs_index];

    let seg_feats = if cfg.use_mbs {
        match run.session.features() {
            Ok(f) => Some(f),
            Err(Error::Capability(_)) => None,
            Err(e) => {
                return Err(Error::Backend {
                    phase: Phase::Mbs.as_str(),
                    iteration: run.trace.records.len(),
                    source: Box::new(e),
                })
            }
        }
    } else {
        None
    };
    let Some(seg_feats) = seg_feats else {
        return Ok(run.finish(tbs_mask, Some(tbs_box), tbs_reason, false));
    };
    if seg_feats.height() != h || seg_feats.width() != w {
        return Err(Error::ShapeMismatch(
            "segmenter features do not match the image".into(),
        ));
    }

    let start = PixelSet::from_mask(&tbs_mask);
    if start.is_empty() {
        return Ok(run.finish(
            tbs_mask,
            Some(tbs_box),
            Termination::EmptySegmenterMask,
            true,
        ));
    }
    let seg_unit = UnitFeatures::new(&seg_feats);
    run.trace.zero_norm_segmenter = seg_unit.zero_norm_count();
    let (c_m, div_m) = mbs_prototype_unit(&tbs_mask, &seg_unit)?;
    let tau_d = mbs_threshold(div_m, cfg.tau_div, cfg.tau_max);
    run.trace.tau_d = Some(tau_d);
    let distances = prototype_distances(&seg_unit, &c_m)?;

    let mut mbs = History::default();
    let (end, final_set) = run.run_phase(Phase::Mbs, start, &mut mbs, |s| {
        mbs_step_with(s, &distances, tau_d, cfg.r)
    })?;
    match end {
        PhaseEnd::Cap => return Ok(run.finish_cap(true)),
        PhaseEnd::Stable(j) => {
            let mask = mbs.masks.swap_remove(j);
            return Ok(run.finish(mask, Some(mbs.boxes[j]), Termination::StableMbs, true));
        }
        PhaseEnd::Fixpoint => {}
    }

    let before = mbs.masks.len() - 1;
    let mut bx = mbs.boxes[before];
    for _ in 0..cfg.n_artificial {
        bx = artificial_expand(&bx, cfg.r, h, w);
        let Some(mask) = run.query(Phase::Artificial, final_set.len(), bx)? else {
            return Ok(run.finish_cap(true));
        };
        if let Some(j) = run.push_and_check(&mut mbs, bx, mask) {
            let mask = mbs.masks.swap_remove(j);
            return Ok(run.finish(
                mask,
                Some(mbs.boxes[j]),
                Termination::StableArtificial,
                true,
            ));
        }
    }
    let mask = mbs.masks.swap_remove(before);
    Ok(run.finish(
        mask,
        Some(mbs.boxes[before]),
        Termination::NoStableInterval,
        true,
    ))
}
