use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::AssdMode;
use crate::postprocess::Connectivity;
use crate::search::{Profile, SearchConfig};
use crate::segmenter::BackendSpec;

/// Whether largest-component filtering runs per slice or per volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CpScope {
    #[default]
    Slice,
    Volume,
}

impl FromStr for CpScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "slice" => Ok(CpScope::Slice),
            "volume" => Ok(CpScope::Volume),
            other => Err(Error::Config(format!(
                "cp_scope must be slice or volume, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub profile: Profile,
    pub search: SearchConfig,
    pub backend: Option<BackendSpec>,
    pub output_dir: Option<PathBuf>,
    pub parallelism: usize,
    pub use_cp: bool,
    pub cp_scope: CpScope,
    pub connectivity: Connectivity,
    pub assd_mode: AssdMode,
    pub retrain_lr: f64,
    pub retrain_epochs: usize,
    pub retrain_weight_decay: f64,
    pub retrain_batch_size: usize,
    pub retrain_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Abdominal)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        Self {
            dataset_root: None,
            profile,
            search: SearchConfig::for_profile(profile),
            backend: None,
            output_dir: None,
            parallelism: 1,
            use_cp: true,
            cp_scope: CpScope::Slice,
            connectivity: Connectivity::Four,
            assd_mode: AssdMode::PerSlice,
            retrain_lr: 1e-4,
            retrain_epochs: 5,
            retrain_weight_decay: 5e-4,
            retrain_batch_size: 16,
            retrain_seed: 0,
        }
    }

    /// Parses `key = value` lines. The profile is applied first, then every
    /// other key overrides its defaults.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_profile(text, None)
    }

    /// Like [`RunConfig::parse`], with `profile` taking the place of any
    /// profile line in the text.
    pub fn parse_with_profile(text: &str, profile: Option<Profile>) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got {line:?}",
                    n + 1
                ))
            })?;
            let key = key.trim().to_owned();
            if !seen.insert(key.clone()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key}",
                    n + 1
                )));
            }
            pairs.push((key, value.trim().to_owned()));
        }
        let profile = match (profile, pairs.iter().find(|(k, _)| k == "profile")) {
            (Some(p), _) => p,
            (None, Some((_, v))) => v.parse()?,
            (None, None) => Profile::Abdominal,
        };
        let mut cfg = Self::for_profile(profile);
        for (k, v) in pairs.iter().filter(|(k, _)| k != "profile") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text)
    }

    /// Switches profile, resetting the search hyperparameters to its defaults.
    pub fn apply_profile(&mut self, profile: Profile) {
        self.profile = profile;
        self.search = SearchConfig {
            use_mbs: self.search.use_mbs,
            ..SearchConfig::for_profile(profile)
        };
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.search;
        match key {
            "dataset_root" => self.dataset_root = Some(PathBuf::from(value)),
            "profile" => self.apply_profile(value.parse()?),
            "backend" => self.backend = Some(value.parse()?),
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "parallelism" => self.parallelism = parse(key, value)?,
            "p_delta" => s.p_delta = parse(key, value)?,
            "tau_f" => s.tau_f = parse(key, value)?,
            "r" => s.r = parse(key, value)?,
            "margin_m" => s.margin_m = parse(key, value)?,
            "tau_delta" => s.tau_delta = parse(key, value)?,
            "tau_div" => s.tau_div = parse(key, value)?,
            "tau_max" => s.tau_max = parse(key, value)?,
            "n_artificial" => s.n_artificial = parse(key, value)?,
            "max_iters" => s.max_iters = parse(key, value)?,
            "use_mbs" => s.use_mbs = parse_bool(key, value)?,
            "use_cp" => self.use_cp = parse_bool(key, value)?,
            "cp_scope" => self.cp_scope = value.parse()?,
            "connectivity" => self.connectivity = value.parse()?,
            "assd_mode" => self.assd_mode = value.parse()?,
            "retrain_lr" => self.retrain_lr = parse(key, value)?,
            "retrain_epochs" => self.retrain_epochs = parse(key, value)?,
            "retrain_weight_decay" => self.retrain_weight_decay = parse(key, value)?,
            "retrain_batch_size" => self.retrain_batch_size = parse(key, value)?,
            "retrain_seed" => self.retrain_seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.backend.is_none() {
            return Err(Error::Config("no segmenter backend configured".into()));
        }
        if self.dataset_root.is_none() {
            return Err(Error::Config("no dataset_root configured".into()));
        }
        if self.output_dir.is_none() {
            return Err(Error::Config("no output_dir configured".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if !(self.retrain_lr >= 0.0 && self.retrain_lr.is_finite()) {
            return Err(Error::Config(format!(
                "retrain_lr must be >= 0, got {}",
                self.retrain_lr
            )));
        }
        if self.retrain_batch_size == 0 {
            return Err(Error::Config(
                "retrain_batch_size must be at least 1".into(),
            ));
        }
        self.search.validate()
    }
}

impl fmt::Display for RunConfig {
    /// Renders the configuration in the same `key = value` format it parses.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.search;
        if let Some(p) = &self.dataset_root {
            writeln!(f, "dataset_root = {}", p.display())?;
        }
        writeln!(f, "profile = {}", self.profile)?;
        match &self.backend {
            Some(BackendSpec::Mock { seed }) => writeln!(f, "backend = mock:{seed}")?,
            Some(BackendSpec::Process { command }) => {
                writeln!(f, "backend = proc:{}", command.join(" "))?
            }
            None => {}
        }
        if let Some(p) = &self.output_dir {
            writeln!(f, "output_dir = {}", p.display())?;
        }
        writeln!(f, "parallelism = {}", self.parallelism)?;
        writeln!(f, "p_delta = {}", s.p_delta)?;
        writeln!(f, "tau_f = {}", s.tau_f)?;
        writeln!(f, "r = {}", s.r)?;
        writeln!(f, "margin_m = {}", s.margin_m)?;
        writeln!(f, "tau_delta = {}", s.tau_delta)?;
        writeln!(f, "tau_div = {}", s.tau_div)?;
        writeln!(f, "tau_max = {}", s.tau_max)?;
        writeln!(f, "n_artificial = {}", s.n_artificial)?;
        writeln!(f, "max_iters = {}", s.max_iters)?;
        writeln!(f, "use_mbs = {}", s.use_mbs)?;
        writeln!(f, "use_cp = {}", self.use_cp)?;
        writeln!(
            f,
            "cp_scope = {}",
            match self.cp_scope {
                CpScope::Slice => "slice",
                CpScope::Volume => "volume",
            }
        )?;
        writeln!(
            f,
            "connectivity = {}",
            match self.connectivity {
                Connectivity::Four => 4,
                Connectivity::Eight => 8,
            }
        )?;
        writeln!(
            f,
            "assd_mode = {}",
            match self.assd_mode {
                AssdMode::PerSlice => "slice",
                AssdMode::Volume => "volume",
            }
        )?;
        writeln!(f, "retrain_lr = {}", self.retrain_lr)?;
        writeln!(f, "retrain_epochs = {}", self.retrain_epochs)?;
        writeln!(f, "retrain_weight_decay = {}", self.retrain_weight_decay)?;
        writeln!(f, "retrain_batch_size = {}", self.retrain_batch_size)?;
        writeln!(f, "retrain_seed = {}", self.retrain_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_then_overrides() {
        let cfg = RunConfig::parse(
            "# run\ntau_max = 0.33\nprofile = prostate\nbackend = mock:4  # inline\nuse_mbs = false\nconnectivity = 8\n",
        )
        .unwrap();
        assert_eq!(cfg.profile, Profile::Prostate);
        assert_eq!(cfg.search.tau_max, 0.33);
        assert!(!cfg.search.use_mbs);
        assert_eq!(cfg.connectivity, Connectivity::Eight);
        assert_eq!(cfg.backend, Some(BackendSpec::Mock { seed: 4 }));
        let p = RunConfig::parse("profile = prostate").unwrap();
        assert_eq!(p.search.tau_max, 0.30);
        let a =
            RunConfig::parse_with_profile("profile = prostate\nr = 3", Some(Profile::Abdominal))
                .unwrap();
        assert_eq!(
            (a.profile, a.search.tau_max, a.search.r),
            (Profile::Abdominal, 0.35, 3)
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("nonsense").is_err());
        assert!(RunConfig::parse("colour = red").is_err());
        assert!(RunConfig::parse("r = 1\nr = 2").is_err());
        assert!(RunConfig::parse("r = -1").is_err());
        assert!(RunConfig::parse("use_cp = maybe").is_err());
    }

    #[test]
    fn validation_requires_backend() {
        let mut cfg = RunConfig::parse("dataset_root = d\noutput_dir = o").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("backend")));
        cfg.backend = Some(BackendSpec::Mock { seed: 0 });
        cfg.validate().unwrap();
        cfg.search.tau_f = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn display_round_trips() {
        let mut cfg = RunConfig::parse(
            "dataset_root = d\noutput_dir = o\nbackend = proc:worker --x 1\ncp_scope = volume",
        )
        .unwrap();
        cfg.search.tau_delta = 30.0;
        assert_eq!(RunConfig::parse(&cfg.to_string()).unwrap(), cfg);
    }
}
