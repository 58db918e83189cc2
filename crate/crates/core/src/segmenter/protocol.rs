//! Line-delimited JSON protocol spoken by external segmenter workers.
//!
//! Each request is one JSON object on its own line; the worker answers each
//! with exactly one line. Tensors travel as `.dfgt` files.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SegmenterBackend, SegmenterSession};
use crate::error::{Error, Result};
use crate::mask::BoxPrompt;
use crate::tensor::{read_file, write_file};

pub const ERR_NO_EMBEDDING: &str = "no_embedding";
pub const ERR_NO_FEATURES: &str = "no_features";
pub const ERR_BAD_REQUEST: &str = "bad_request";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
pub enum Request {
    Handshake,
    Embed {
        image: PathBuf,
        image_id: String,
    },
    Segment {
        image_id: String,
        #[serde(rename = "box")]
        bx: [usize; 4],
        out: PathBuf,
    },
    Features {
        image_id: String,
        out: PathBuf,
    },
    /// Call counters; an extension used by conformance checks.
    Stats,
    Shutdown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<bool>,
    #[serde(rename = "d_M", default, skip_serializing_if = "Option::is_none")]
    pub d_m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_calls: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_calls: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_calls: Option<usize>,
}

impl Response {
    pub fn ok() -> Self {
        Self {
            ok: true,
            ..Self::default()
        }
    }

    pub fn error(msg: impl Into<String>) -> Self {
        Self {
            ok: false,
            error: Some(msg.into()),
            ..Self::default()
        }
    }

    /// Converts a negative answer into an error.
    pub fn into_result(self) -> Result<Self> {
        if self.ok {
            Ok(self)
        } else {
            Err(Error::Protocol(
                self.error
                    .unwrap_or_else(|| "unspecified worker error".into()),
            ))
        }
    }
}

pub fn box_from_array(b: [usize; 4]) -> Result<BoxPrompt> {
    BoxPrompt::new(b[0], b[1], b[2], b[3])
}

struct Worker<'b> {
    backend: &'b dyn SegmenterBackend,
    sessions: HashMap<String, Box<dyn SegmenterSession + 'b>>,
}

impl<'b> Worker<'b> {
    fn handle(&mut self, req: Request) -> Result<Response> {
        match req {
            Request::Handshake => {
                let caps = self.backend.capabilities();
                Ok(Response {
                    features: Some(caps.features),
                    d_m: Some(caps.feature_dim),
                    ..Response::ok()
                })
            }
            Request::Embed { image, image_id } => {
                if !self.sessions.contains_key(&image_id) {
                    let t = read_file(&image)?;
                    let s = self.backend.open_session(&image_id, &t)?;
                    self.sessions.insert(image_id, s);
                }
                Ok(Response::ok())
            }
            Request::Segment { image_id, bx, out } => {
                let s = self.session(&image_id)?;
                let mask = s.segment(&box_from_array(bx)?)?;
                write_file(&out, &mask.to_tensor())?;
                Ok(Response::ok())
            }
            Request::Features { image_id, out } => {
                let s = self.session(&image_id)?;
                let f = s.features().map_err(|e| match e {
                    Error::Capability(_) => Error::Protocol(ERR_NO_FEATURES.into()),
                    other => other,
                })?;
                write_file(&out, &f.to_tensor())?;
                Ok(Response::ok())
            }
            Request::Stats => {
                let st = self.backend.stats();
                Ok(Response {
                    embed_calls: Some(st.embed_calls),
                    segment_calls: Some(st.segment_calls),
                    feature_calls: Some(st.feature_calls),
                    ..Response::ok()
                })
            }
            Request::Shutdown => Ok(Response::ok()),
        }
    }

    fn session(&mut self, image_id: &str) -> Result<&mut Box<dyn SegmenterSession + 'b>> {
        self.sessions
            .get_mut(image_id)
            .ok_or_else(|| Error::Protocol(ERR_NO_EMBEDDING.into()))
    }
}

fn error_text(e: &Error) -> String {
    match e {
        Error::Protocol(msg) => msg.clone(),
        other => other.to_string(),
    }
}

/// Answers protocol requests from `input` until shutdown or end of input.
///
/// Malformed or failing requests produce `{"ok":false,...}` answers; only
/// I/O failures on the streams themselves end the loop with an error.
pub fn serve<R: BufRead, W: Write>(
    backend: &dyn SegmenterBackend,
    input: R,
    mut output: W,
) -> Result<()> {
    let mut worker = Worker {
        backend,
        sessions: HashMap::new(),
    };
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (resp, stop) = match serde_json::from_str::<Request>(&line) {
            Ok(Request::Shutdown) => (Response::ok(), true),
            Ok(req) => (
                worker
                    .handle(req)
                    .unwrap_or_else(|e| Response::error(error_text(&e))),
                false,
            ),
            Err(e) => (Response::error(format!("{ERR_BAD_REQUEST}: {e}")), false),
        };
        let text = serde_json::to_string(&resp).map_err(|e| Error::Protocol(e.to_string()))?;
        writeln!(output, "{text}")?;
        output.flush()?;
        if stop {
            break;
        }
    }
    Ok(())
}

/// Scratch-relative path helper for clients.
pub fn scratch_file(dir: &Path, stem: &str, n: u64) -> PathBuf {
    dir.join(format!("{stem}_{n}.dfgt"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::MockBackend;
    use crate::tensor::DenseTensor;

    fn exchange(backend: &MockBackend, lines: &[String]) -> Vec<serde_json::Value> {
        let input = lines.join("\n");
        let mut out = Vec::new();
        serve(backend, input.as_bytes(), &mut out).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn request_wire_format() {
        let r: Request = serde_json::from_str(
            r#"{"cmd":"segment","image_id":"x","box":[0,1,2,3],"out":"/t/m.dfgt"}"#,
        )
        .unwrap();
        assert_eq!(
            r,
            Request::Segment {
                image_id: "x".into(),
                bx: [0, 1, 2, 3],
                out: "/t/m.dfgt".into()
            }
        );
        assert_eq!(
            serde_json::to_string(&Request::Handshake).unwrap(),
            r#"{"cmd":"handshake"}"#
        );
        assert_eq!(
            serde_json::to_string(&Response::error("e")).unwrap(),
            r#"{"ok":false,"error":"e"}"#
        );
    }

    #[test]
    fn serve_session_flow() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.dfgt");
        let t = DenseTensor::from_f32(vec![4, 4], [0.0, 1.0, 1.0, 0.0].repeat(4)).unwrap();
        write_file(&img, &t).unwrap();
        let mask = dir.path().join("m.dfgt");
        let feats = dir.path().join("f.dfgt");
        let backend = MockBackend::new(3);
        let lines = vec![
            r#"{"cmd":"handshake"}"#.to_string(),
            format!(
                r#"{{"cmd":"segment","image_id":"a","box":[0,0,3,3],"out":{:?}}}"#,
                mask
            ),
            "not json".to_string(),
            format!(r#"{{"cmd":"embed","image":{:?},"image_id":"a"}}"#, img),
            format!(r#"{{"cmd":"embed","image":{:?},"image_id":"a"}}"#, img),
            format!(
                r#"{{"cmd":"segment","image_id":"a","box":[0,0,3,1],"out":{:?}}}"#,
                mask
            ),
            format!(r#"{{"cmd":"features","image_id":"a","out":{:?}}}"#, feats),
            r#"{"cmd":"stats"}"#.to_string(),
            r#"{"cmd":"shutdown"}"#.to_string(),
            r#"{"cmd":"handshake"}"#.to_string(),
        ];
        let resp = exchange(&backend, &lines);
        assert_eq!(resp.len(), 9);
        assert_eq!(resp[0]["ok"], true);
        assert_eq!(resp[0]["features"], true);
        assert_eq!(resp[0]["d_M"], 16);
        assert_eq!(resp[1]["error"], ERR_NO_EMBEDDING);
        assert_eq!(resp[2]["ok"], false);
        assert!(resp[3..7].iter().all(|r| r["ok"] == true));
        assert_eq!(resp[7]["embed_calls"], 1);
        let m = read_file(&mask).unwrap();
        assert_eq!(m.shape(), &[4, 4]);
        assert_eq!(m.as_u8().unwrap().iter().filter(|&&x| x == 1).count(), 4);
        assert_eq!(read_file(&feats).unwrap().shape(), &[4, 4, 16]);
    }
}
