//! Run configuration.
//!
//! Flat `key=value` text files; `#` starts a comment line, blank lines are
//! skipped, and later assignments win. Every key has a default, so an empty
//! file is a valid configuration.

use crate::error::{Error, Result};
use crate::metascheme::EmbeddingMode;
use crate::model::Hyperparams;
use crate::scalar::Scalar;
use crate::trainer::TrainConfig;
use std::path::Path;

/// Which test items enter clustering evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalScope {
    /// Items not revealed as labeled during training.
    Unlabeled,
    /// Every item.
    All,
}

/// Which representation clustering evaluation runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalRepr {
    /// Normalized combinatorial embedding.
    Pi,
    /// Raw encoder output.
    Z,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub n_classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub separation: f64,
    pub noise_sigma: f64,
    pub seen_fraction: f64,
    pub labeled_fraction: f64,
    pub m_sets: usize,
    pub k_per_set: usize,
    /// Coordinates sampled per meta-class subspace; 0 picks the default of
    /// ceil(d1 / 4).
    pub q_coords: usize,
    pub embedding_mode: EmbeddingMode,
    pub d2: usize,
    pub hidden: usize,
    pub lambda: f64,
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub steps: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub aug_sigma: f64,
    pub aug_dropout: f64,
    pub eval_scope: EvalScope,
    pub eval_repr: EvalRepr,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            n_classes: 10,
            dim: 64,
            n_per_class: 50,
            separation: 10.0,
            noise_sigma: 1.0,
            seen_fraction: 0.75,
            labeled_fraction: 0.5,
            m_sets: 6,
            k_per_set: 4,
            q_coords: 0,
            embedding_mode: EmbeddingMode::ClassifierWeights,
            d2: 12,
            hidden: 128,
            lambda: 10.0,
            tau: 0.1,
            gamma: 0.8,
            alpha: 1.0,
            beta: 1.0,
            steps: 2000,
            batch_labeled: 64,
            batch_unlabeled: 64,
            lr: 1e-3,
            weight_decay: 1e-4,
            aug_sigma: 0.05,
            aug_dropout: 0.1,
            eval_scope: EvalScope::Unlabeled,
            eval_repr: EvalRepr::Pi,
            kmeans_restarts: 8,
            seed: 7,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, at: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| {
        Error::Config(format!("{at}: bad value {value:?} for key `{key}`"))
    })
}

impl Config {
    pub fn d1(&self) -> usize {
        self.m_sets * self.d2
    }

    pub fn q_effective(&self) -> usize {
        if self.q_coords == 0 {
            self.d1().div_ceil(4)
        } else {
            self.q_coords
        }
    }

    pub fn hyperparams<T: Scalar>(&self) -> Hyperparams<T> {
        Hyperparams {
            lambda: T::from_f64_near(self.lambda),
            tau: T::from_f64_near(self.tau),
            gamma: T::from_f64_near(self.gamma),
            alpha: T::from_f64_near(self.alpha),
            beta: T::from_f64_near(self.beta),
        }
    }

    pub fn train_config<T: Scalar>(&self) -> TrainConfig<T> {
        TrainConfig {
            steps: self.steps,
            batch_labeled: self.batch_labeled,
            batch_unlabeled: self.batch_unlabeled,
            lr: T::from_f64_near(self.lr),
            weight_decay: T::from_f64_near(self.weight_decay),
            aug_sigma: T::from_f64_near(self.aug_sigma),
            aug_dropout: T::from_f64_near(self.aug_dropout),
            seed: self.seed,
        }
    }

    fn set_key(&mut self, key: &str, value: &str, at: &str) -> Result<()> {
        match key {
            "n_classes" => self.n_classes = parse_num(key, value, at)?,
            "dim" => self.dim = parse_num(key, value, at)?,
            "n_per_class" => self.n_per_class = parse_num(key, value, at)?,
            "separation" => self.separation = parse_num(key, value, at)?,
            "noise_sigma" => self.noise_sigma = parse_num(key, value, at)?,
            "seen_fraction" => self.seen_fraction = parse_num(key, value, at)?,
            "labeled_fraction" => self.labeled_fraction = parse_num(key, value, at)?,
            "m_sets" => self.m_sets = parse_num(key, value, at)?,
            "k_per_set" => self.k_per_set = parse_num(key, value, at)?,
            "q_coords" => self.q_coords = parse_num(key, value, at)?,
            "embedding_mode" => {
                self.embedding_mode = match value.trim() {
                    "classifier" => EmbeddingMode::ClassifierWeights,
                    "means" => EmbeddingMode::ClassMeans,
                    other => {
                        return Err(Error::Config(format!(
                            "{at}: embedding_mode must be `classifier` or `means`, got {other:?}"
                        )))
                    }
                }
            }
            "d2" => self.d2 = parse_num(key, value, at)?,
            "hidden" => self.hidden = parse_num(key, value, at)?,
            "lambda" => self.lambda = parse_num(key, value, at)?,
            "tau" => self.tau = parse_num(key, value, at)?,
            "gamma" => self.gamma = parse_num(key, value, at)?,
            "alpha" => self.alpha = parse_num(key, value, at)?,
            "beta" => self.beta = parse_num(key, value, at)?,
            "steps" => self.steps = parse_num(key, value, at)?,
            "batch_labeled" => self.batch_labeled = parse_num(key, value, at)?,
            "batch_unlabeled" => self.batch_unlabeled = parse_num(key, value, at)?,
            "lr" => self.lr = parse_num(key, value, at)?,
            "weight_decay" => self.weight_decay = parse_num(key, value, at)?,
            "aug_sigma" => self.aug_sigma = parse_num(key, value, at)?,
            "aug_dropout" => self.aug_dropout = parse_num(key, value, at)?,
            "eval_scope" => {
                self.eval_scope = match value.trim() {
                    "unlabeled" => EvalScope::Unlabeled,
                    "all" => EvalScope::All,
                    other => {
                        return Err(Error::Config(format!(
                            "{at}: eval_scope must be `unlabeled` or `all`, got {other:?}"
                        )))
                    }
                }
            }
            "eval_repr" => {
                self.eval_repr = match value.trim() {
                    "pi" => EvalRepr::Pi,
                    "z" => EvalRepr::Z,
                    other => {
                        return Err(Error::Config(format!(
                            "{at}: eval_repr must be `pi` or `z`, got {other:?}"
                        )))
                    }
                }
            }
            "kmeans_restarts" => self.kmeans_restarts = parse_num(key, value, at)?,
            "seed" => self.seed = parse_num(key, value, at)?,
            other => return Err(Error::Config(format!("{at}: unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies one `key=value` assignment, as given on a command line.
    pub fn apply_set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!("override {assignment:?} is not of the form key=value"))
        })?;
        self.set_key(key.trim(), value, &format!("override {:?}", assignment))
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = format!("{source}:{}", lineno + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{at}: expected key=value, got {line:?}")))?;
            cfg.set_key(key.trim(), value, &at)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_classes", self.n_classes),
            ("dim", self.dim),
            ("n_per_class", self.n_per_class),
            ("m_sets", self.m_sets),
            ("k_per_set", self.k_per_set),
            ("d2", self.d2),
            ("hidden", self.hidden),
            ("batch_labeled", self.batch_labeled),
            ("kmeans_restarts", self.kmeans_restarts),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config("separation must be nonnegative and finite".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be nonnegative and finite".into()));
        }
        if !(0.0..=1.0).contains(&self.seen_fraction) {
            return Err(Error::Config("seen_fraction must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return Err(Error::Config("labeled_fraction must be in [0, 1]".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be positive and finite".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config("tau must be positive and finite".into()));
        }
        if !(self.gamma > -1.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must be in (-1, 1]".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("alpha must be nonnegative and finite".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("beta must be nonnegative and finite".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive and finite".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be nonnegative and finite".into()));
        }
        if !(self.aug_sigma >= 0.0 && self.aug_sigma.is_finite()) {
            return Err(Error::Config("aug_sigma must be nonnegative and finite".into()));
        }
        if !(0.0..1.0).contains(&self.aug_dropout) {
            return Err(Error::Config("aug_dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_q_auto_follows_d1() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.d1(), 72);
        assert_eq!(cfg.q_effective(), 18);
    }

    #[test]
    fn explicit_q_wins_over_auto() {
        let cfg = Config::parse("q_coords=5", "test").unwrap();
        assert_eq!(cfg.q_effective(), 5);
    }

    #[test]
    fn file_text_overrides_defaults() {
        let text = "\n# experiment shrunk for tests\nn_classes = 4\nsteps=100\n\nembedding_mode = means\neval_scope=all\neval_repr = z\nlr = 0.01\n";
        let cfg = Config::parse(text, "cfg").unwrap();
        assert_eq!(cfg.n_classes, 4);
        assert_eq!(cfg.steps, 100);
        assert_eq!(cfg.embedding_mode, EmbeddingMode::ClassMeans);
        assert_eq!(cfg.eval_scope, EvalScope::All);
        assert_eq!(cfg.eval_repr, EvalRepr::Z);
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.dim, 64);
    }

    #[test]
    fn unknown_keys_and_malformed_lines_are_reported_with_location() {
        let err = Config::parse("frobnicate=1", "cfg").unwrap_err();
        assert!(err.to_string().contains("frobnicate"), "{err}");
        let err = Config::parse("steps\n", "cfg").unwrap_err();
        assert!(err.to_string().contains("cfg:1"), "{err}");
        let err = Config::parse("\nsteps=abc", "cfg").unwrap_err();
        assert!(err.to_string().contains("cfg:2"), "{err}");
    }

    #[test]
    fn apply_set_matches_file_semantics() {
        let mut cfg = Config::default();
        cfg.apply_set("gamma=0.5").unwrap();
        assert_eq!(cfg.gamma, 0.5);
        assert!(cfg.apply_set("gamma").is_err());
        assert!(cfg.apply_set("nope=1").is_err());
    }

    #[test]
    fn range_checks_reject_out_of_domain_values() {
        for bad in ["gamma=-1", "tau=0", "aug_dropout=1", "seen_fraction=1.5", "m_sets=0", "lr=0"] {
            let err = Config::parse(bad, "cfg").unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{bad}: {err}");
        }
        // Closed upper bound for gamma.
        assert!(Config::parse("gamma=1", "cfg").is_ok());
    }

    #[test]
    fn load_reads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "seed=99\nk_per_set=8\n").unwrap();
        let cfg = Config::load(&path).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.k_per_set, 8);
        assert!(Config::load(&dir.path().join("missing.cfg")).is_err());
    }
}
