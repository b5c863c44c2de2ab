//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spectral::BankConfig;
use crate::topics::EmConfig;
use crate::wavenet::Activation;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub k_topics: usize,
    pub em_max_iters: usize,
    pub em_tol: f64,
    pub fold_in_iters: usize,
    pub user_ratio: f64,
    pub job_ratio: f64,
    pub kmeans_max_iters: usize,
    pub transitions: bool,
    pub cheb_order: usize,
    pub interp_degree: usize,
    pub scales: usize,
    pub max_kappa_gmax: f64,
    pub power_iters: usize,
    pub hidden: usize,
    pub emb_dim: usize,
    pub layers: usize,
    pub activation: Activation,
    pub window: usize,
    pub use_wavelet: bool,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub k: usize,
    pub min_prefix: usize,
    pub test_frac: f64,
    pub val_frac: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            k_topics: 32,
            em_max_iters: 200,
            em_tol: 1e-6,
            fold_in_iters: crate::topics::DEFAULT_FOLD_IN_ITERS,
            user_ratio: 1000.0,
            job_ratio: 500.0,
            kmeans_max_iters: 100,
            transitions: true,
            cheb_order: crate::spectral::DEFAULT_ORDER,
            interp_degree: crate::spectral::DEFAULT_INTERP_DEGREE,
            scales: 4,
            max_kappa_gmax: 4.0,
            power_iters: 100,
            hidden: 128,
            emb_dim: 128,
            layers: 1,
            activation: Activation::Relu,
            window: 20,
            use_wavelet: true,
            lr: 1e-3,
            epochs: 100,
            batch_size: 64,
            patience: 20,
            k: 10,
            min_prefix: 2,
            test_frac: 0.2,
            val_frac: 0.2,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("expected a boolean, got `{value}`"))),
    }
}

impl RunConfig {
    /// Set one field by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "k_topics" => self.k_topics = parse(key, value)?,
            "em_max_iters" => self.em_max_iters = parse(key, value)?,
            "em_tol" => self.em_tol = parse(key, value)?,
            "fold_in_iters" => self.fold_in_iters = parse(key, value)?,
            "user_ratio" => self.user_ratio = parse(key, value)?,
            "job_ratio" => self.job_ratio = parse(key, value)?,
            "kmeans_max_iters" => self.kmeans_max_iters = parse(key, value)?,
            "transitions" => self.transitions = parse_bool(key, value)?,
            "cheb_order" => self.cheb_order = parse(key, value)?,
            "interp_degree" => self.interp_degree = parse(key, value)?,
            "scales" => self.scales = parse(key, value)?,
            "max_kappa_gmax" => self.max_kappa_gmax = parse(key, value)?,
            "power_iters" => self.power_iters = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "emb_dim" => self.emb_dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "activation" => {
                self.activation = Activation::parse(value.trim())
                    .ok_or_else(|| Error::config(key, format!("unknown activation `{value}`")))?
            }
            "window" => self.window = parse(key, value)?,
            "use_wavelet" => self.use_wavelet = parse_bool(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "min_prefix" => self.min_prefix = parse(key, value)?,
            "test_frac" => self.test_frac = parse(key, value)?,
            "val_frac" => self.val_frac = parse(key, value)?,
            _ => return Err(Error::config(key, "unknown configuration key")),
        }
        Ok(())
    }

    /// Ordered `(key, value)` pairs of every field.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("k_topics", self.k_topics.to_string()),
            ("em_max_iters", self.em_max_iters.to_string()),
            ("em_tol", self.em_tol.to_string()),
            ("fold_in_iters", self.fold_in_iters.to_string()),
            ("user_ratio", self.user_ratio.to_string()),
            ("job_ratio", self.job_ratio.to_string()),
            ("kmeans_max_iters", self.kmeans_max_iters.to_string()),
            ("transitions", self.transitions.to_string()),
            ("cheb_order", self.cheb_order.to_string()),
            ("interp_degree", self.interp_degree.to_string()),
            ("scales", self.scales.to_string()),
            ("max_kappa_gmax", self.max_kappa_gmax.to_string()),
            ("power_iters", self.power_iters.to_string()),
            ("hidden", self.hidden.to_string()),
            ("emb_dim", self.emb_dim.to_string()),
            ("layers", self.layers.to_string()),
            ("activation", self.activation.as_str().to_string()),
            ("window", self.window.to_string()),
            ("use_wavelet", self.use_wavelet.to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("patience", self.patience.to_string()),
            ("k", self.k.to_string()),
            ("min_prefix", self.min_prefix.to_string()),
            ("test_frac", self.test_frac.to_string()),
            ("val_frac", self.val_frac.to_string()),
        ]
    }

    /// Parse `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    /// Canonical text: one `key = value` line per field in declaration order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_topics", self.k_topics),
            ("em_max_iters", self.em_max_iters),
            ("kmeans_max_iters", self.kmeans_max_iters),
            ("interp_degree", self.interp_degree),
            ("scales", self.scales),
            ("hidden", self.hidden),
            ("emb_dim", self.emb_dim),
            ("layers", self.layers),
            ("window", self.window),
            ("batch_size", self.batch_size),
            ("k", self.k),
            ("min_prefix", self.min_prefix),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.cheb_order > self.interp_degree {
            return Err(Error::config("cheb_order", "must not exceed interp_degree"));
        }
        for (name, v) in [("user_ratio", self.user_ratio), ("job_ratio", self.job_ratio)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if !(self.em_tol >= 0.0) {
            return Err(Error::config("em_tol", "must be non-negative"));
        }
        if !(self.max_kappa_gmax > 0.0) || !self.max_kappa_gmax.is_finite() {
            return Err(Error::config("max_kappa_gmax", "must be positive"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr", "must be non-negative"));
        }
        for (name, v) in [("test_frac", self.test_frac), ("val_frac", self.val_frac)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(name, "must be in [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn em(&self) -> EmConfig {
        EmConfig {
            n_topics: self.k_topics,
            max_iters: self.em_max_iters,
            tol: self.em_tol,
            seed: self.seed,
        }
    }

    pub fn bank(&self) -> BankConfig {
        BankConfig {
            scales: self.scales,
            order: self.cheb_order,
            interp_degree: self.interp_degree,
            max_kappa_gmax: self.max_kappa_gmax,
            power_iters: self.power_iters,
        }
    }
}
