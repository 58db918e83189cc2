use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mask::BoxPrompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Tbs,
    Mbs,
    Artificial,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Tbs => "TBS",
            Phase::Mbs => "MBS",
            Phase::Artificial => "ARTIFICIAL",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TBS" => Ok(Phase::Tbs),
            "MBS" => Ok(Phase::Mbs),
            "ARTIFICIAL" => Ok(Phase::Artificial),
            _ => Err(Error::InvalidArgument(format!("unknown phase {s:?}"))),
        }
    }
}

/// Why a search stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    StableTbs,
    StableMbs,
    StableArtificial,
    /// Target-feature growth stopped and the segmenter-feature phase did not run.
    FixpointTbs,
    NoStableInterval,
    EmptySegmenterMask,
    IterationCap,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::StableTbs => "stable_tbs",
            Termination::StableMbs => "stable_mbs",
            Termination::StableArtificial => "stable_artificial",
            Termination::FixpointTbs => "fixpoint_tbs",
            Termination::NoStableInterval => "no_stable_interval",
            Termination::EmptySegmenterMask => "empty_segmenter_mask",
            Termination::IterationCap => "iteration_cap",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One segmenter query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub set_size: usize,
    pub bx: BoxPrompt,
    /// Pixels changed relative to the previous query; `None` for the first.
    pub delta_m: Option<usize>,
    /// Span of the stable interval ending here, 0 if none.
    pub stable_span: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    pub class: usize,
    pub records: Vec<TraceRecord>,
    pub chosen_box: Option<BoxPrompt>,
    pub termination: Option<Termination>,
    /// Pixels whose target or segmenter feature had zero norm.
    pub zero_norm_target: usize,
    pub zero_norm_segmenter: usize,
    /// Threshold used by the segmenter-feature phase, if it ran.
    pub tau_d: Option<f64>,
}

pub const TRACE_HEADER: &str =
    "iteration,phase,set_size,row_min,col_min,row_max,col_max,delta_m,stable_span";

impl SearchTrace {
    pub fn new(class: usize) -> Self {
        Self {
            class,
            records: Vec::new(),
            chosen_box: None,
            termination: None,
            zero_norm_target: 0,
            zero_norm_segmenter: 0,
            tau_d: None,
        }
    }

    /// Records of one phase, in order.
    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.records.len() + 1));
        s.push_str(TRACE_HEADER);
        s.push('\n');
        for r in &self.records {
            let delta = r.delta_m.map(|d| d.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.iteration,
                r.phase,
                r.set_size,
                r.bx.row_min,
                r.bx.col_min,
                r.bx.row_max,
                r.bx.col_max,
                delta,
                r.stable_span
            ));
        }
        s
    }

    /// `iteration,phase,delta_m,box_area` rows for plotting output change
    /// against box index. The first query has no delta and is skipped.
    pub fn delta_series_csv(&self) -> String {
        let mut s = String::from("iteration,phase,delta_m,box_area\n");
        for r in &self.records {
            if let Some(d) = r.delta_m {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    r.iteration,
                    r.phase,
                    d,
                    r.bx.area()
                ));
            }
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::file(path, e))
    }

    pub fn from_csv(class: usize, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(TRACE_HEADER) {
            return Err(Error::InvalidArgument("trace CSV header mismatch".into()));
        }
        let bad = |line: &str| Error::InvalidArgument(format!("bad trace row {line:?}"));
        let mut trace = Self::new(class);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 9 {
                return Err(bad(line));
            }
            let num = |i: usize| cols[i].parse::<usize>().map_err(|_| bad(line));
            trace.records.push(TraceRecord {
                iteration: num(0)?,
                phase: cols[1].parse()?,
                set_size: num(2)?,
                bx: BoxPrompt::new(num(3)?, num(4)?, num(5)?, num(6)?)?,
                delta_m: if cols[7].is_empty() {
                    None
                } else {
                    Some(num(7)?)
                },
                stable_span: num(8)?,
            });
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = SearchTrace::new(2);
        t.records.push(TraceRecord {
            iteration: 0,
            phase: Phase::Tbs,
            set_size: 3,
            bx: BoxPrompt::new(1, 2, 3, 4).unwrap(),
            delta_m: None,
            stable_span: 0,
        });
        t.records.push(TraceRecord {
            iteration: 1,
            phase: Phase::Artificial,
            set_size: 3,
            bx: BoxPrompt::new(0, 0, 5, 6).unwrap(),
            delta_m: Some(7),
            stable_span: 1,
        });
        let csv = t.to_csv();
        assert_eq!(csv.lines().nth(1), Some("0,TBS,3,1,2,3,4,,0"));
        assert_eq!(csv.lines().nth(2), Some("1,ARTIFICIAL,3,0,0,5,6,7,1"));
        let back = SearchTrace::from_csv(2, &csv).unwrap();
        assert_eq!(back.records, t.records);
        assert_eq!(
            t.delta_series_csv(),
            "iteration,phase,delta_m,box_area\n1,ARTIFICIAL,7,42\n"
        );
    }
}
