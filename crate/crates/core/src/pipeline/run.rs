use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{CpScope, RunConfig};
use super::dataset::{Dataset, SliceData, SliceEntry};
use super::retrain::{retrain_toy, RetrainReport};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::metrics::{AssdMode, MetricReport};
use crate::postprocess::{assemble_labels, keep_largest, keep_largest_3d, Connectivity};
use crate::search::{search_class, SearchConfig, SearchTrace};
use crate::segmenter::SegmenterBackend;
use crate::tensor::{write_file, LabelMask, ProbabilityMap};

/// Searches every present class of one slice and returns the raw masks.
pub fn refine_slice(
    backend: &dyn SegmenterBackend,
    id: &str,
    data: &SliceData,
    cfg: &SearchConfig,
) -> Result<Vec<(usize, BinaryMask, SearchTrace)>> {
    let present = data.probs.argmax();
    let classes: Vec<usize> = (1..data.probs.classes())
        .filter(|&k| present.contains(k))
        .collect();
    if classes.is_empty() {
        return Ok(Vec::new());
    }
    let mut session = backend.open_session(id, &data.image)?;
    let mut out = Vec::with_capacity(classes.len());
    for k in classes {
        let o = search_class(session.as_mut(), &data.probs, &data.target_features, k, cfg)?;
        log::debug!(
            "{id} class {k}: {} after {} queries",
            o.termination(),
            o.trace.records.len()
        );
        out.push((k, o.mask, o.trace));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SliceResult {
    pub id: String,
    pub volume: String,
    /// Error message if the slice failed.
    pub error: Option<String>,
    pub traces: Vec<SearchTrace>,
    pub raw_masks: Vec<(usize, BinaryMask)>,
    pub probs: Option<ProbabilityMap>,
    pub ground_truth: Option<LabelMask>,
    /// Labels assembled from the masks before component filtering.
    pub raw_labels: Option<LabelMask>,
    /// Final pseudo-labels.
    pub labels: Option<LabelMask>,
    pub baseline: Option<LabelMask>,
}

/// Scores for one set of labels against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub report_2d: MetricReport,
    pub report_3d: MetricReport,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub slices: Vec<SliceResult>,
    pub failures: usize,
    pub refined: Option<Scores>,
    /// Refined masks before component filtering.
    pub refined_raw: Option<Scores>,
    pub baseline: Option<Scores>,
    pub retrain: Option<RetrainReport>,
    pub output_dir: PathBuf,
}

impl RunSummary {
    pub fn refined_dice(&self) -> f64 {
        self.refined
            .as_ref()
            .map_or(f64::NAN, |s| s.report_2d.mean_dice)
    }

    pub fn refined_raw_dice(&self) -> f64 {
        self.refined_raw
            .as_ref()
            .map_or(f64::NAN, |s| s.report_2d.mean_dice)
    }

    pub fn baseline_dice(&self) -> f64 {
        self.baseline
            .as_ref()
            .map_or(f64::NAN, |s| s.report_2d.mean_dice)
    }
}

fn process(
    backend: &dyn SegmenterBackend,
    ds: &Dataset,
    entry: &SliceEntry,
    cfg: &RunConfig,
) -> SliceResult {
    let mut res = SliceResult {
        id: entry.id.clone(),
        volume: entry.volume.clone(),
        error: None,
        traces: Vec::new(),
        raw_masks: Vec::new(),
        probs: None,
        ground_truth: None,
        raw_labels: None,
        labels: None,
        baseline: None,
    };
    let data = match ds.load(&entry.id) {
        Ok(d) => d,
        Err(e) => {
            res.error = Some(e.to_string());
            return res;
        }
    };
    res.baseline = Some(data.probs.argmax());
    match refine_slice(backend, &entry.id, &data, &cfg.search) {
        Ok(found) => {
            for (k, m, t) in found {
                res.raw_masks.push((k, m));
                res.traces.push(t);
            }
        }
        Err(e) => {
            log::warn!("slice {} failed: {e}", entry.id);
            res.error = Some(e.to_string());
        }
    }
    res.ground_truth = data.ground_truth;
    res.probs = Some(data.probs);
    res
}

fn filtered(masks: &[(usize, BinaryMask)], connectivity: Connectivity) -> Vec<(usize, BinaryMask)> {
    masks
        .iter()
        .map(|(k, m)| (*k, keep_largest(m, connectivity)))
        .collect()
}

/// Component filtering across the slices of each volume.
fn filter_volumes(
    slices: &[SliceResult],
    connectivity: Connectivity,
) -> Result<Vec<Vec<(usize, BinaryMask)>>> {
    let mut out: Vec<Vec<(usize, BinaryMask)>> =
        slices.iter().map(|s| s.raw_masks.clone()).collect();
    let mut volumes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in slices.iter().enumerate() {
        if s.error.is_none() {
            volumes.entry(s.volume.as_str()).or_default().push(i);
        }
    }
    for members in volumes.values() {
        let Some(probs) = slices[members[0]].probs.as_ref() else {
            continue;
        };
        let (h, w) = (probs.height(), probs.width());
        if members.iter().any(|&i| {
            slices[i]
                .probs
                .as_ref()
                .is_none_or(|p| (p.height(), p.width()) != (h, w))
        }) {
            return Err(Error::ShapeMismatch(
                "slices of one volume differ in size".into(),
            ));
        }
        for k in 1..probs.classes() {
            let stack: Vec<BinaryMask> = members
                .iter()
                .map(|&i| {
                    slices[i]
                        .raw_masks
                        .iter()
                        .find(|(c, _)| *c == k)
                        .map_or_else(|| BinaryMask::empty(h, w), |(_, m)| m.clone())
                })
                .collect();
            let kept = keep_largest_3d(&stack, connectivity)?;
            for (&i, m) in members.iter().zip(kept) {
                if let Some(slot) = out[i].iter_mut().find(|(c, _)| *c == k) {
                    slot.1 = m;
                }
            }
        }
    }
    Ok(out)
}

/// Scores labelled slices; 3-D scores pool each volume and average volumes.
pub fn score(
    labels: &[(&str, &LabelMask, &LabelMask)],
    assd_mode: AssdMode,
) -> Result<Option<Scores>> {
    if labels.is_empty() {
        return Ok(None);
    }
    let pred: Vec<LabelMask> = labels.iter().map(|(_, p, _)| (*p).clone()).collect();
    let gt: Vec<LabelMask> = labels.iter().map(|(_, _, g)| (*g).clone()).collect();
    let report_2d = MetricReport::for_volume(&pred, &gt, AssdMode::PerSlice, false)?;
    let mut volumes: BTreeMap<&str, (Vec<LabelMask>, Vec<LabelMask>)> = BTreeMap::new();
    for (v, p, g) in labels {
        let e = volumes.entry(v).or_default();
        e.0.push((*p).clone());
        e.1.push((*g).clone());
    }
    let k = gt[0].num_classes();
    let mut dice = vec![Vec::new(); k - 1];
    let mut dist = vec![Vec::new(); k - 1];
    for (p, g) in volumes.values() {
        let r = MetricReport::for_volume(p, g, assd_mode, true)?;
        for c in 0..k - 1 {
            dice[c].push(r.per_class_dice[c]);
            dist[c].push(r.per_class_assd[c]);
        }
    }
    let mean = |v: &Vec<f64>| {
        let ok: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().sum::<f64>() / ok.len() as f64
        }
    };
    let report_3d = MetricReport::new(
        dice.iter().map(mean).collect(),
        dist.iter().map(mean).collect(),
    );
    Ok(Some(Scores {
        report_2d,
        report_3d,
    }))
}

/// Scores `<labels_dir>/<id>.dfgt` against the dataset's ground truth.
/// Slices without ground truth are skipped; a missing label file is an error.
pub fn score_dir(ds: &Dataset, labels_dir: &Path, assd_mode: AssdMode) -> Result<Option<Scores>> {
    let mut rows = Vec::new();
    for e in &ds.entries {
        let data = ds.load(&e.id)?;
        let Some(gt) = data.ground_truth else {
            continue;
        };
        let tensor = crate::tensor::read_file(labels_dir.join(format!("{}.dfgt", e.id)))?;
        let pred = LabelMask::from_tensor(tensor, gt.num_classes())?;
        rows.push((e.volume.clone(), pred, gt));
    }
    let refs: Vec<(&str, &LabelMask, &LabelMask)> =
        rows.iter().map(|(v, p, g)| (v.as_str(), p, g)).collect();
    score(&refs, assd_mode)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn fmt6(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.6}")
    }
}

/// Runs search, filtering and scoring over a dataset and writes all outputs.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let spec = cfg.backend.as_ref().expect("validated");
    let ds = Dataset::open(cfg.dataset_root.as_ref().expect("validated"))?;
    let out = cfg.output_dir.clone().expect("validated");
    let backend = spec.build(cfg.parallelism)?;
    run_with_backend(cfg, &ds, backend.as_ref(), &out)
}

pub fn run_with_backend(
    cfg: &RunConfig,
    ds: &Dataset,
    backend: &dyn SegmenterBackend,
    out: &Path,
) -> Result<RunSummary> {
    for sub in ["labels", "traces"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::file(&d, e))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let mut slices: Vec<SliceResult> = pool.install(|| {
        ds.entries
            .par_iter()
            .map(|e| process(backend, ds, e, cfg))
            .collect()
    });

    let filtered_masks = match (cfg.use_cp, cfg.cp_scope) {
        (false, _) => slices.iter().map(|s| s.raw_masks.clone()).collect(),
        (true, CpScope::Slice) => slices
            .iter()
            .map(|s| filtered(&s.raw_masks, cfg.connectivity))
            .collect(),
        (true, CpScope::Volume) => filter_volumes(&slices, cfg.connectivity)?,
    };
    for (s, masks) in slices.iter_mut().zip(filtered_masks) {
        if s.error.is_some() {
            continue;
        }
        let probs = s.probs.as_ref().expect("loaded slice");
        s.raw_labels = Some(assemble_labels(&s.raw_masks, probs)?);
        s.labels = Some(assemble_labels(&masks, probs)?);
    }

    let failures = slices.iter().filter(|s| s.error.is_some()).count();
    let mut slice_csv = String::from("slice_id,volume_id,status,baseline_dice,refined_dice\n");
    let mut failure_csv = String::from("slice_id,error\n");
    for s in &slices {
        if let Some(e) = &s.error {
            let _ = writeln!(slice_csv, "{},{},failed,nan,nan", s.id, s.volume);
            let _ = writeln!(failure_csv, "{},{:?}", s.id, e);
            continue;
        }
        let labels = s.labels.as_ref().expect("assembled");
        write_file(
            out.join("labels").join(format!("{}.dfgt", s.id)),
            &labels.to_tensor(),
        )?;
        for t in &s.traces {
            t.write_csv(
                out.join("traces")
                    .join(format!("{}_class{}.csv", s.id, t.class)),
            )?;
        }
        let (b, r) = match &s.ground_truth {
            Some(g) => (
                MetricReport::for_slice(s.baseline.as_ref().expect("loaded"), g)?.mean_dice,
                MetricReport::for_slice(labels, g)?.mean_dice,
            ),
            None => (f64::NAN, f64::NAN),
        };
        let _ = writeln!(
            slice_csv,
            "{},{},ok,{},{}",
            s.id,
            s.volume,
            fmt6(b),
            fmt6(r)
        );
    }
    write_text(&out.join("slice_dice.csv"), &slice_csv)?;
    if failures > 0 {
        write_text(&out.join("failures.csv"), &failure_csv)?;
    }

    let scored = |pick: fn(&SliceResult) -> Option<&LabelMask>| -> Result<Option<Scores>> {
        let rows: Vec<(&str, &LabelMask, &LabelMask)> = slices
            .iter()
            .filter(|s| s.error.is_none())
            .filter_map(|s| Some((s.volume.as_str(), pick(s)?, s.ground_truth.as_ref()?)))
            .collect();
        score(&rows, cfg.assd_mode)
    };
    let refined = scored(|s| s.labels.as_ref())?;
    let refined_raw = scored(|s| s.raw_labels.as_ref())?;
    let baseline = scored(|s| s.baseline.as_ref())?;
    if let Some(sc) = &refined {
        write_text(&out.join("report_2d.csv"), &sc.report_2d.to_csv())?;
        write_text(&out.join("report_3d.csv"), &sc.report_3d.to_csv())?;
    }
    if let Some(sc) = &baseline {
        write_text(&out.join("baseline_report_2d.csv"), &sc.report_2d.to_csv())?;
    }

    let retrain = if cfg.retrain_epochs > 0 {
        let ok: Vec<&SliceResult> = slices.iter().filter(|s| s.error.is_none()).collect();
        if ok.is_empty() {
            None
        } else {
            let mut data = Vec::with_capacity(ok.len());
            for s in &ok {
                data.push((ds.load(&s.id)?, s.labels.clone().expect("assembled")));
            }
            let report = retrain_toy(cfg, &data)?;
            write_file(out.join("toy_model.dfgt"), &report.model.to_tensor())?;
            write_text(&out.join("retrain_loss.csv"), &report.curve.to_csv())?;
            Some(report)
        }
    } else {
        None
    };

    Ok(RunSummary {
        slices,
        failures,
        refined,
        refined_raw,
        baseline,
        retrain,
        output_dir: out.to_path_buf(),
    })
}
