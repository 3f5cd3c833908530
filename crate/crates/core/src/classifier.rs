//! Classification oracles.
//!
//! The pipeline only ever needs `p^D`, the probability an oracle assigns to
//! the target class. Two oracles are provided: a deterministic prototype
//! (nearest-template softmax) model and an adapter for an external process
//! speaking a line-oriented stdio protocol:
//!
//! ```text
//! <- READY <C>
//! -> CLASSIFY <absolute-path> <D>
//! <- OK <p1> ... <pC>      | ERR <message>
//! ```
//!
//! Class indices are 1-based throughout, matching the protocol.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{self, Image};

/// Sum tolerance for externally supplied distributions.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    probs: Vec<f64>,
    target: usize,
    /// Set when the vector had to be rescaled to sum to one.
    renormalized: bool,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>, target: usize) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Oracle("empty probability vector".into()));
        }
        if target == 0 || target > probs.len() {
            return Err(Error::Oracle(format!(
                "target class {target} outside 1..={}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Oracle("probability outside [0, 1]".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Oracle(format!("probabilities sum to {sum}")));
        }
        Ok(ClassDistribution {
            probs,
            target,
            renormalized: false,
        })
    }

    /// Accepts vectors whose sum is within [`NORMALIZATION_TOLERANCE`] of one
    /// and rescales them, flagging the result when rescaling was needed.
    pub fn normalized(probs: Vec<f64>, target: usize) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Oracle("probability is negative or not finite".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Oracle(format!(
                "probabilities sum to {sum}, outside tolerance {NORMALIZATION_TOLERANCE}"
            )));
        }
        let renormalized = (sum - 1.0).abs() > 1e-12;
        let probs = if renormalized {
            probs.into_iter().map(|p| (p / sum).min(1.0)).collect()
        } else {
            probs
        };
        let mut dist = ClassDistribution::new(probs, target)?;
        dist.renormalized = renormalized;
        Ok(dist)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn renormalized(&self) -> bool {
        self.renormalized
    }

    /// `p^D`.
    pub fn p_target(&self) -> f64 {
        self.probs[self.target - 1]
    }

    /// 1-based index of the most probable class; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best + 1
    }

    pub fn exceeds(&self, p_th: f64) -> bool {
        self.p_target() > p_th
    }
}

/// Anything that can classify an image.
pub trait Oracle: Send + Sync {
    fn num_classes(&self) -> usize;

    fn classify(&self, img: &Image, target: usize) -> Result<ClassDistribution>;
}

/// Softmax over `-beta * MSE(img, template_k)`.
#[derive(Debug, Clone)]
pub struct PrototypeModel {
    templates: Vec<Image>,
    beta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    beta: f64,
    templates: Vec<PathBuf>,
}

impl PrototypeModel {
    pub fn new(templates: Vec<Image>, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("sharpness must be positive, got {beta}")));
        }
        let first = templates
            .first()
            .ok_or_else(|| Error::Config("prototype model needs at least one template".into()))?;
        for t in &templates[1..] {
            first.check_same_shape(t)?;
        }
        Ok(PrototypeModel { templates, beta })
    }

    /// Loads `{"beta": .., "templates": [paths]}`; template paths are
    /// resolved relative to the model file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let templates = file
            .templates
            .iter()
            .map(|t| imaging::load_raster(dir.join(t)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(templates, file.beta)
    }

    /// Writes the templates next to `path` and a model file referencing them.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().unwrap_or(Path::new("."));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
        let mut names = Vec::new();
        for (i, t) in self.templates.iter().enumerate() {
            let ext = if t.channels() == 1 { "pgm" } else { "ppm" };
            let name = PathBuf::from(format!("{stem}.class{}.{ext}", i + 1));
            imaging::save_raster(dir.join(&name), t)?;
            names.push(name);
        }
        let file = ModelFile {
            beta: self.beta,
            templates: names,
        };
        let text = serde_json::to_string_pretty(&file).expect("model file serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn templates(&self) -> &[Image] {
        &self.templates
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Oracle for PrototypeModel {
    fn num_classes(&self) -> usize {
        self.templates.len()
    }

    fn classify(&self, img: &Image, target: usize) -> Result<ClassDistribution> {
        let first = &self.templates[0];
        if img.width() != first.width() || img.height() != first.height() || img.channels() != first.channels() {
            return Err(Error::Oracle(format!(
                "input {}x{}x{} does not match model resolution {}x{}x{}",
                img.width(),
                img.height(),
                img.channels(),
                first.width(),
                first.height(),
                first.channels()
            )));
        }
        // Squared-error sums are exact integers, so logit differences only
        // depend on the pixels where templates disagree.
        let sse: Vec<u64> = self
            .templates
            .iter()
            .map(|t| {
                t.samples()
                    .iter()
                    .zip(img.samples())
                    .map(|(&a, &b)| {
                        let d = a as i64 - b as i64;
                        (d * d) as u64
                    })
                    .sum()
            })
            .collect();
        let best = *sse.iter().min().expect("at least one template");
        let n = img.samples().len() as f64;
        let weights: Vec<f64> = sse
            .iter()
            .map(|&s| (-self.beta * (s - best) as f64 / n).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let probs = weights.iter().map(|w| w / total).collect();
        ClassDistribution::normalized(probs, target)
    }
}

/// Parses one response line of the stdio protocol.
pub fn parse_response(line: &str, target: usize, classes: usize) -> Result<ClassDistribution> {
    let line = line.trim_end_matches(['\r', '\n']);
    if let Some(msg) = line.strip_prefix("ERR") {
        return Err(Error::Oracle(msg.trim_start().to_string()));
    }
    let rest = line
        .strip_prefix("OK ")
        .ok_or_else(|| Error::Oracle(format!("malformed response line: {line:?}")))?;
    let probs = rest
        .split_ascii_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::Oracle(format!("malformed probability {tok:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if probs.len() != classes {
        return Err(Error::Oracle(format!(
            "expected {classes} probabilities, got {}",
            probs.len()
        )));
    }
    ClassDistribution::normalized(probs, target)
}

struct Connection {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Connection {
    fn read_line(&self, timeout: Duration) -> Result<String> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Oracle(format!("reading oracle output: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::OracleTimeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Oracle("oracle process closed its output".into())),
        }
    }
}

/// External classifier process. Requests are serialized through a mutex.
pub struct ExternalOracle {
    conn: Mutex<Connection>,
    classes: usize,
    timeout: Duration,
    scratch: tempfile::TempDir,
    counter: AtomicU64,
}

impl ExternalOracle {
    /// Spawns `command` through `sh -c` and waits for the `READY <C>` line.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Oracle(format!("spawning {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        let mut conn = Connection {
            child,
            stdin,
            lines: rx,
        };
        let handshake = conn.read_line(timeout).and_then(|ready| {
            ready
                .trim_end()
                .strip_prefix("READY ")
                .and_then(|c| c.parse::<usize>().ok())
                .filter(|&c| c > 0)
                .ok_or_else(|| Error::Oracle(format!("bad handshake line: {:?}", ready.trim_end())))
        });
        let classes = match handshake {
            Ok(c) => c,
            Err(e) => {
                let _ = conn.child.kill();
                let _ = conn.child.wait();
                return Err(e);
            }
        };
        let scratch = tempfile::tempdir().map_err(|e| Error::Oracle(format!("creating scratch directory: {e}")))?;
        Ok(ExternalOracle {
            conn: Mutex::new(conn),
            classes,
            timeout,
            scratch,
            counter: AtomicU64::new(0),
        })
    }

    /// Sends an already-written raster path. Useful when the caller manages
    /// image files itself.
    pub fn classify_path(&self, path: &Path, target: usize) -> Result<ClassDistribution> {
        let conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let mut stdin = &conn.stdin;
        writeln!(stdin, "CLASSIFY {} {target}", path.display())
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::Oracle(format!("writing request: {e}")))?;
        let line = conn.read_line(self.timeout)?;
        parse_response(&line, target, self.classes)
    }
}

impl Oracle for ExternalOracle {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn classify(&self, img: &Image, target: usize) -> Result<ClassDistribution> {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let ext = if img.channels() == 1 { "pgm" } else { "ppm" };
        let path = self.scratch.path().join(format!("request-{n}.{ext}"));
        imaging::save_raster(&path, img)?;
        let path = std::path::absolute(&path).map_err(|e| Error::io(&path, e))?;
        let result = self.classify_path(&path, target);
        let _ = std::fs::remove_file(&path);
        result
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        if let Ok(conn) = self.conn.get_mut() {
            let _ = conn.child.kill();
            let _ = conn.child.wait();
        }
    }
}
