//! Behavioural checks every segmenter backend and worker must pass.

use std::fmt;

use serde_json::Value;

use super::process::WorkerProcess;
use super::protocol::{Request, ERR_NO_EMBEDDING};
use super::SegmenterBackend;
use crate::error::Error;
use crate::mask::BoxPrompt;
use crate::tensor::{write_file, DenseTensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConformanceReport {
    pub checks: Vec<Check>,
}

impl ConformanceReport {
    fn record(&mut self, name: &'static str, outcome: Result<(), String>) {
        self.checks.push(Check { name, outcome });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.outcome.is_ok())
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.outcome.is_err()).collect()
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            match &c.outcome {
                Ok(()) => writeln!(f, "PASS {}", c.name)?,
                Err(e) => writeln!(f, "FAIL {}: {e}", c.name)?,
            }
        }
        Ok(())
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// A small tissue-id image usable by any backend: two rectangles on background.
pub fn probe_image(height: usize, width: usize) -> DenseTensor {
    let mut v = vec![0.0f32; height * width];
    for r in height / 4..height / 2 {
        for c in width / 4..width / 2 {
            v[r * width + c] = 1.0;
        }
    }
    for r in height * 5 / 8..height * 7 / 8 {
        for c in width * 5 / 8..width * 7 / 8 {
            v[r * width + c] = 2.0;
        }
    }
    DenseTensor::from_f32(vec![height, width], v).expect("positive size")
}

/// Session-level checks through the [`SegmenterBackend`] interface.
pub fn check_backend(backend: &dyn SegmenterBackend, image: &DenseTensor) -> ConformanceReport {
    let mut report = ConformanceReport::default();
    let (h, w) = match super::image_dims(image) {
        Ok(d) => d,
        Err(e) => {
            report.record("probe image", Err(e.to_string()));
            return report;
        }
    };
    let before = backend.stats();
    let mut session = match backend.open_session("conformance-a", image) {
        Ok(s) => s,
        Err(e) => {
            report.record("open session", Err(e.to_string()));
            return report;
        }
    };
    report.record(
        "session reports image size",
        ensure((session.height(), session.width()) == (h, w), || {
            format!("{}x{} vs {h}x{w}", session.height(), session.width())
        }),
    );

    let boxes = [
        BoxPrompt::full(h, w),
        BoxPrompt::new(h / 4, w / 4, h / 2, w / 2).expect("ordered"),
        BoxPrompt::new(0, 0, 0, 0).expect("ordered"),
    ];
    let mut first = Vec::new();
    let mut outcome = Ok(());
    for bx in &boxes {
        match session.segment(bx) {
            Ok(m) if (m.height(), m.width()) != (h, w) => {
                outcome = Err(format!(
                    "mask {}x{} for {h}x{w} image",
                    m.height(),
                    m.width()
                ));
            }
            Ok(m) => first.push(m),
            Err(e) => outcome = Err(format!("segment {bx}: {e}")),
        }
    }
    report.record("masks cover the image", outcome);

    let mut outcome = Ok(());
    for (bx, m) in boxes.iter().zip(&first) {
        match session.segment(bx) {
            Ok(again) if &again != m => outcome = Err(format!("box {bx} gave two different masks")),
            Err(e) => outcome = Err(e.to_string()),
            _ => {}
        }
    }
    report.record("segment is deterministic", outcome);

    let outside = BoxPrompt::new(0, 0, h, w).expect("ordered");
    report.record(
        "out-of-bounds box rejected",
        ensure(session.segment(&outside).is_err(), || {
            "accepted a box past the image".into()
        }),
    );

    let caps = backend.capabilities();
    let feats = session.features();
    let outcome = match (caps.features, feats) {
        (true, Ok(f)) => ensure(
            (f.height(), f.width(), f.dim()) == (h, w, caps.feature_dim),
            || {
                format!(
                    "features {}x{}x{}, expected {h}x{w}x{}",
                    f.height(),
                    f.width(),
                    f.dim(),
                    caps.feature_dim
                )
            },
        ),
        (true, Err(e)) => Err(format!("advertised features but failed: {e}")),
        (false, Err(Error::Capability(_))) => Ok(()),
        (false, Err(e)) => Err(format!("expected a capability error, got {e}")),
        (false, Ok(_)) => Err("returned features without advertising them".into()),
    };
    report.record("features match capabilities", outcome);
    drop(session);

    let after = backend.stats();
    report.record(
        "one embedding per session",
        ensure(after.embed_calls - before.embed_calls == 1, || {
            format!(
                "{} embed calls for one session",
                after.embed_calls - before.embed_calls
            )
        }),
    );
    report
}

fn reply(worker: &mut WorkerProcess, line: &str) -> Result<Value, String> {
    let raw = worker.request_raw(line).map_err(|e| e.to_string())?;
    serde_json::from_str(&raw).map_err(|e| format!("reply {raw:?} is not JSON: {e}"))
}

fn expect_ok(v: &Value) -> Result<(), String> {
    ensure(v["ok"] == Value::Bool(true), || {
        format!("expected ok, got {v}")
    })
}

fn expect_error(v: &Value) -> Result<(), String> {
    ensure(
        v["ok"] == Value::Bool(false) && v["error"].is_string(),
        || format!("expected an error reply, got {v}"),
    )
}

/// Wire-level checks against a worker started from `command`.
pub fn check_worker(command: &[String]) -> ConformanceReport {
    let mut report = ConformanceReport::default();
    let scratch = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => {
            report.record("scratch directory", Err(e.to_string()));
            return report;
        }
    };
    let mut worker = match WorkerProcess::spawn(command, scratch.path()) {
        Ok(w) => w,
        Err(e) => {
            report.record("worker starts", Err(e.to_string()));
            return report;
        }
    };
    let dir = scratch.path();
    let line = |r: &Request| serde_json::to_string(r).expect("requests serialise");

    let hello = reply(&mut worker, &line(&Request::Handshake));
    let features = hello
        .as_ref()
        .ok()
        .and_then(|v| v["features"].as_bool())
        .unwrap_or(false);
    report.record(
        "handshake",
        hello.and_then(|v| {
            expect_ok(&v)?;
            ensure(v["features"].is_boolean() && v["d_M"].is_u64(), || {
                format!("missing fields in {v}")
            })
        }),
    );

    let mask_out = dir.join("conf_mask.dfgt");
    let seg = |id: &str, bx: [usize; 4]| {
        line(&Request::Segment {
            image_id: id.into(),
            bx,
            out: mask_out.clone(),
        })
    };
    report.record(
        "segment before embed",
        reply(&mut worker, &seg("never-embedded", [0, 0, 1, 1])).and_then(|v| {
            ensure(
                v["ok"] == Value::Bool(false) && v["error"] == ERR_NO_EMBEDDING,
                || format!("expected no_embedding, got {v}"),
            )
        }),
    );
    report.record(
        "malformed request",
        reply(&mut worker, "{not json").and_then(|v| expect_error(&v)),
    );
    report.record(
        "unknown command",
        reply(&mut worker, r#"{"cmd":"dance"}"#).and_then(|v| expect_error(&v)),
    );
    report.record(
        "embed of a missing file",
        reply(
            &mut worker,
            &line(&Request::Embed {
                image: dir.join("missing.dfgt"),
                image_id: "missing".into(),
            }),
        )
        .and_then(|v| expect_error(&v)),
    );

    let image = probe_image(32, 32);
    let image_path = dir.join("conf_image.dfgt");
    let embed = write_file(&image_path, &image)
        .map_err(|e| e.to_string())
        .and_then(|_| {
            reply(
                &mut worker,
                &line(&Request::Embed {
                    image: image_path.clone(),
                    image_id: "probe".into(),
                }),
            )
            .and_then(|v| expect_ok(&v))
        });
    report.record("embed", embed);

    let mut masks = Vec::new();
    let mut outcome = Ok(());
    for _ in 0..2 {
        let step = reply(&mut worker, &seg("probe", [4, 4, 20, 20]))
            .and_then(|v| expect_ok(&v))
            .and_then(|_| crate::tensor::read_file(&mask_out).map_err(|e| e.to_string()))
            .and_then(|t| {
                ensure(t.shape() == [32, 32] && t.as_u8().is_some(), || {
                    format!("mask tensor {:?} {:?}", t.dtype(), t.shape())
                })?;
                Ok(t)
            });
        match step {
            Ok(t) => masks.push(t),
            Err(e) => outcome = Err(e),
        }
    }
    if outcome.is_ok() {
        outcome = ensure(masks.len() == 2 && masks[0] == masks[1], || {
            "repeated segment differs".into()
        });
    }
    report.record("segment writes a deterministic u8 mask", outcome);

    let feat_out = dir.join("conf_features.dfgt");
    let f = reply(
        &mut worker,
        &line(&Request::Features {
            image_id: "probe".into(),
            out: feat_out.clone(),
        }),
    );
    report.record(
        "features or explicit refusal",
        f.and_then(|v| {
            if features {
                expect_ok(&v)?;
                let t = crate::tensor::read_file(&feat_out).map_err(|e| e.to_string())?;
                ensure(t.ndim() == 3 && t.shape()[..2] == [32, 32], || {
                    format!("feature shape {:?}", t.shape())
                })
            } else {
                expect_error(&v)
            }
        }),
    );

    // The counter extension is optional; only judge it when implemented.
    if let Ok(v) = reply(&mut worker, &line(&Request::Stats)) {
        if v["ok"] == Value::Bool(true) {
            report.record(
                "embed once per image",
                ensure(v["embed_calls"] == 1, || format!("counters {v}")),
            );
        }
    }

    let status = worker.shutdown();
    report.record(
        "shutdown",
        ensure(status.is_some_and(|s| s.success()), || {
            format!("exit status {status:?}")
        }),
    );
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::MockBackend;

    #[test]
    fn mock_backend_conforms() {
        let r = check_backend(&MockBackend::new(5), &probe_image(24, 20));
        assert!(r.passed(), "{r}");
        let r = check_backend(&MockBackend::without_features(5), &probe_image(24, 20));
        assert!(r.passed(), "{r}");
    }
}
