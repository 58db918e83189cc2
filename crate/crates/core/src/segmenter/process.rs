//! Segmenter backend that drives external worker processes.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use super::protocol::{Request, Response};
use super::{
    check_box, image_dims, BackendStats, CallCounters, Capabilities, SegmenterBackend,
    SegmenterSession,
};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, BoxPrompt};
use crate::tensor::{read_file, write_file, DenseTensor, FeatureMap};

/// One worker process and its private scratch directory.
pub struct WorkerProcess {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    scratch: PathBuf,
    broken: bool,
}

impl WorkerProcess {
    /// Starts `command` with `--scratch <dir>` appended.
    pub fn spawn(command: &[String], scratch: &Path) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("empty worker command".into()))?;
        std::fs::create_dir_all(scratch).map_err(|e| Error::file(scratch, e))?;
        let mut child = Command::new(program)
            .args(args)
            .arg("--scratch")
            .arg(scratch)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("cannot start worker {program:?}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            child,
            stdin,
            stdout,
            scratch: scratch.to_path_buf(),
            broken: false,
        })
    }

    pub fn scratch(&self) -> &Path {
        &self.scratch
    }

    /// Sends one request and reads its answer line, without interpreting `ok`.
    pub fn request(&mut self, req: &Request) -> Result<Response> {
        let line = serde_json::to_string(req).map_err(|e| Error::Protocol(e.to_string()))?;
        let answer = self.request_raw(&line)?;
        serde_json::from_str(&answer).map_err(|e| {
            self.broken = true;
            Error::Protocol(format!("unparseable worker reply {answer:?}: {e}"))
        })
    }

    /// Sends a raw line and returns the raw answer line.
    pub fn request_raw(&mut self, line: &str) -> Result<String> {
        let result = self.exchange(line);
        if result.is_err() {
            self.broken = true;
        }
        result
    }

    fn exchange(&mut self, line: &str) -> Result<String> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Protocol("worker input already closed".into()))?;
        writeln!(stdin, "{line}")
            .map_err(|e| Error::Protocol(format!("worker write failed: {e}")))?;
        stdin
            .flush()
            .map_err(|e| Error::Protocol(format!("worker write failed: {e}")))?;
        let mut answer = String::new();
        let n = self
            .stdout
            .read_line(&mut answer)
            .map_err(|e| Error::Protocol(format!("worker read failed: {e}")))?;
        if n == 0 {
            return Err(Error::Protocol("worker closed its output".into()));
        }
        Ok(answer.trim_end().to_owned())
    }

    /// Requests shutdown and waits briefly before killing the process.
    pub fn shutdown(mut self) -> Option<std::process::ExitStatus> {
        self.stop()
    }

    fn stop(&mut self) -> Option<std::process::ExitStatus> {
        if let Some(mut stdin) = self.stdin.take() {
            if !self.broken {
                let _ = writeln!(stdin, r#"{{"cmd":"shutdown"}}"#);
                let _ = stdin.flush();
            }
        }
        let deadline = Instant::now() + Duration::from_secs(2);
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return Some(status),
                Ok(None) if Instant::now() < deadline => {
                    std::thread::sleep(Duration::from_millis(5))
                }
                _ => {
                    let _ = self.child.kill();
                    return self.child.wait().ok();
                }
            }
        }
    }
}

impl Drop for WorkerProcess {
    fn drop(&mut self) {
        if self.stdin.is_some() {
            self.stop();
        }
    }
}

struct PoolState {
    idle: Vec<WorkerProcess>,
    live: usize,
    spawned: usize,
}

/// Backend that leases one worker process per session.
pub struct ProcessBackend {
    command: Vec<String>,
    max_workers: usize,
    scratch: tempfile::TempDir,
    pool: Mutex<PoolState>,
    available: Condvar,
    caps: Capabilities,
    counters: CallCounters,
    files: AtomicU64,
}

impl ProcessBackend {
    /// Starts one worker, performs the handshake and allows up to `max_workers`.
    pub fn spawn(command: &[String], max_workers: usize) -> Result<Self> {
        let scratch = tempfile::Builder::new()
            .prefix("promptrefine-")
            .tempdir()
            .map_err(|e| Error::Protocol(format!("cannot create scratch directory: {e}")))?;
        let mut first = WorkerProcess::spawn(command, &scratch.path().join("worker_0"))?;
        let hello = first.request(&Request::Handshake)?.into_result()?;
        let features = hello.features.unwrap_or(false);
        let caps = Capabilities {
            features,
            feature_dim: if features { hello.d_m.unwrap_or(0) } else { 0 },
        };
        log::debug!("worker handshake: {caps:?}");
        Ok(Self {
            command: command.to_vec(),
            max_workers: max_workers.max(1),
            scratch,
            pool: Mutex::new(PoolState {
                idle: vec![first],
                live: 1,
                spawned: 1,
            }),
            available: Condvar::new(),
            caps,
            counters: CallCounters::default(),
            files: AtomicU64::new(0),
        })
    }

    fn checkout(&self) -> Result<WorkerProcess> {
        let mut st = self.pool.lock().expect("pool lock");
        loop {
            if let Some(w) = st.idle.pop() {
                return Ok(w);
            }
            if st.live < self.max_workers {
                st.live += 1;
                st.spawned += 1;
                let dir = self
                    .scratch
                    .path()
                    .join(format!("worker_{}", st.spawned - 1));
                drop(st);
                return WorkerProcess::spawn(&self.command, &dir).inspect_err(|_| {
                    self.pool.lock().expect("pool lock").live -= 1;
                });
            }
            st = self.available.wait(st).expect("pool lock");
        }
    }

    fn checkin(&self, worker: WorkerProcess) {
        let mut st = self.pool.lock().expect("pool lock");
        if worker.broken {
            st.live -= 1;
            drop(st);
            drop(worker);
        } else {
            st.idle.push(worker);
        }
        self.available.notify_one();
    }

    fn next_file(&self, worker: &WorkerProcess, stem: &str) -> PathBuf {
        let n = self.files.fetch_add(1, Ordering::Relaxed);
        super::protocol::scratch_file(worker.scratch(), stem, n)
    }
}

impl SegmenterBackend for ProcessBackend {
    fn capabilities(&self) -> Capabilities {
        self.caps
    }

    fn open_session(
        &self,
        image_id: &str,
        image: &DenseTensor,
    ) -> Result<Box<dyn SegmenterSession + '_>> {
        let (height, width) = image_dims(image)?;
        let mut worker = self.checkout()?;
        let path = self.next_file(&worker, "image");
        let embedded = write_file(&path, image).and_then(|_| {
            worker
                .request(&Request::Embed {
                    image: path.clone(),
                    image_id: image_id.to_owned(),
                })?
                .into_result()
        });
        let _ = std::fs::remove_file(&path);
        if let Err(e) = embedded {
            self.checkin(worker);
            return Err(e);
        }
        self.counters.embed();
        Ok(Box::new(ProcessSession {
            backend: self,
            worker: Some(worker),
            image_id: image_id.to_owned(),
            height,
            width,
            features: None,
        }))
    }

    fn stats(&self) -> BackendStats {
        self.counters.snapshot()
    }
}

struct ProcessSession<'a> {
    backend: &'a ProcessBackend,
    worker: Option<WorkerProcess>,
    image_id: String,
    height: usize,
    width: usize,
    features: Option<Arc<FeatureMap>>,
}

impl ProcessSession<'_> {
    fn worker(&mut self) -> &mut WorkerProcess {
        self.worker
            .as_mut()
            .expect("session holds its worker until dropped")
    }

    /// Sends a request that writes a tensor to `out`, then reads it back.
    fn fetch(&mut self, stem: &str, make: impl FnOnce(PathBuf) -> Request) -> Result<DenseTensor> {
        let backend = self.backend;
        let out = backend.next_file(self.worker(), stem);
        let result = self
            .worker()
            .request(&make(out.clone()))
            .and_then(Response::into_result)
            .and_then(|_| read_file(&out));
        let _ = std::fs::remove_file(&out);
        result
    }
}

impl SegmenterSession for ProcessSession<'_> {
    fn image_id(&self) -> &str {
        &self.image_id
    }

    fn height(&self) -> usize {
        self.height
    }

    fn width(&self) -> usize {
        self.width
    }

    fn segment(&mut self, bx: &BoxPrompt) -> Result<BinaryMask> {
        check_box(bx, self.height, self.width)?;
        let image_id = self.image_id.clone();
        let t = self.fetch("mask", |out| Request::Segment {
            image_id,
            bx: bx.to_array(),
            out,
        })?;
        self.backend.counters.segment();
        let mask = BinaryMask::from_tensor(&t)?;
        if mask.height() != self.height || mask.width() != self.width {
            return Err(Error::Protocol(format!(
                "worker returned a {}x{} mask for a {}x{} image",
                mask.height(),
                mask.width(),
                self.height,
                self.width
            )));
        }
        Ok(mask)
    }

    fn features(&mut self) -> Result<Arc<FeatureMap>> {
        if !self.backend.caps.features {
            return Err(Error::Capability("features"));
        }
        self.backend.counters.features();
        if let Some(f) = &self.features {
            return Ok(f.clone());
        }
        let image_id = self.image_id.clone();
        let t = self.fetch("features", |out| Request::Features { image_id, out })?;
        let f = Arc::new(FeatureMap::from_tensor(t)?);
        if f.height() != self.height || f.width() != self.width {
            return Err(Error::Protocol(
                "worker features do not match the image size".into(),
            ));
        }
        self.features = Some(f.clone());
        Ok(f)
    }
}

impl Drop for ProcessSession<'_> {
    fn drop(&mut self) {
        if let Some(w) = self.worker.take() {
            self.backend.checkin(w);
        }
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        let idle = std::mem::take(&mut self.pool.get_mut().expect("pool lock").idle);
        for w in idle {
            w.shutdown();
        }
    }
}
