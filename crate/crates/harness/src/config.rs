//! Experiment configuration: `key = value` lines, `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pcvox_core::{Error, Result};
use pcvox_learn::{SurrogateConfig, Upsampling, VoxNetConfig};

use crate::synth::{ShapeKind, SynthSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub depth: u8,
    pub shapes: Vec<ShapeKind>,
    pub density: f64,
    pub min_size: f64,
    pub max_size: f64,
    pub train_clouds: usize,
    pub test_clouds: usize,
    pub batch_size: usize,
    pub lr_decay_every: usize,
    pub surrogate_channels: usize,
    pub coarse_levels: u8,
    pub surrogate_epochs: usize,
    pub surrogate_lr: f64,
    pub voxnet_channels: usize,
    pub voxnet_blocks: usize,
    pub voxnet_epochs: usize,
    pub voxnet_lr: f64,
    /// Training clouds used for the voxelization network (a prefix of the
    /// surrogate's training set).
    pub voxnet_train_clouds: usize,
    pub lambdas: Vec<f64>,
    pub scales: Vec<f64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            depth: 8,
            shapes: ShapeKind::ALL.to_vec(),
            density: 2.0,
            min_size: 12.0,
            max_size: 24.0,
            train_clouds: 200,
            test_clouds: 20,
            batch_size: 8,
            lr_decay_every: 5,
            surrogate_channels: 32,
            coarse_levels: 2,
            surrogate_epochs: 10,
            surrogate_lr: 1e-4,
            voxnet_channels: 32,
            voxnet_blocks: 2,
            voxnet_epochs: 30,
            voxnet_lr: 1e-4,
            voxnet_train_clouds: 16,
            lambdas: vec![0.5, 1.0, 2.0, 4.0],
            scales: vec![1.0, 0.5, 0.25, 0.125],
            out_dir: PathBuf::from("out"),
        }
    }
}

fn list<T: std::str::FromStr>(v: &str) -> Option<Vec<T>> {
    v.split(',').map(|s| s.trim().parse().ok()).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "depth",
        "shapes",
        "density",
        "min_size",
        "max_size",
        "train_clouds",
        "test_clouds",
        "batch_size",
        "lr_decay_every",
        "surrogate_channels",
        "coarse_levels",
        "surrogate_epochs",
        "surrogate_lr",
        "voxnet_channels",
        "voxnet_blocks",
        "voxnet_epochs",
        "voxnet_lr",
        "voxnet_train_clouds",
        "lambdas",
        "scales",
        "out_dir",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = || Error::Config(format!("bad value {v:?} for {key}"));
        macro_rules! p {
            ($f:expr) => {
                $f = v.parse().map_err(|_| bad())?
            };
        }
        match key {
            "seed" => p!(self.seed),
            "depth" => p!(self.depth),
            "shapes" => self.shapes = list(v).ok_or_else(bad)?,
            "density" => p!(self.density),
            "min_size" => p!(self.min_size),
            "max_size" => p!(self.max_size),
            "train_clouds" => p!(self.train_clouds),
            "test_clouds" => p!(self.test_clouds),
            "batch_size" => p!(self.batch_size),
            "lr_decay_every" => p!(self.lr_decay_every),
            "surrogate_channels" => p!(self.surrogate_channels),
            "coarse_levels" => p!(self.coarse_levels),
            "surrogate_epochs" => p!(self.surrogate_epochs),
            "surrogate_lr" => p!(self.surrogate_lr),
            "voxnet_channels" => p!(self.voxnet_channels),
            "voxnet_blocks" => p!(self.voxnet_blocks),
            "voxnet_epochs" => p!(self.voxnet_epochs),
            "voxnet_lr" => p!(self.voxnet_lr),
            "voxnet_train_clouds" => p!(self.voxnet_train_clouds),
            "lambdas" => self.lambdas = list(v).ok_or_else(bad)?,
            "scales" => self.scales = list(v).ok_or_else(bad)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "depth" => self.depth.to_string(),
            "shapes" => join(&self.shapes),
            "density" => self.density.to_string(),
            "min_size" => self.min_size.to_string(),
            "max_size" => self.max_size.to_string(),
            "train_clouds" => self.train_clouds.to_string(),
            "test_clouds" => self.test_clouds.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr_decay_every" => self.lr_decay_every.to_string(),
            "surrogate_channels" => self.surrogate_channels.to_string(),
            "coarse_levels" => self.coarse_levels.to_string(),
            "surrogate_epochs" => self.surrogate_epochs.to_string(),
            "surrogate_lr" => self.surrogate_lr.to_string(),
            "voxnet_channels" => self.voxnet_channels.to_string(),
            "voxnet_blocks" => self.voxnet_blocks.to_string(),
            "voxnet_epochs" => self.voxnet_epochs.to_string(),
            "voxnet_lr" => self.voxnet_lr.to_string(),
            "voxnet_train_clouds" => self.voxnet_train_clouds.to_string(),
            "lambdas" => join(&self.lambdas),
            "scales" => join(&self.scales),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("every key has a value"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return fail("lambdas must be a nonempty list of finite, non-negative values");
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return fail("scales must lie in (0, 1]");
        }
        if !(1..=16).contains(&self.depth) {
            return fail("depth must lie in 1..=16");
        }
        Ok(())
    }

    pub fn synth_spec(&self, count: usize) -> SynthSpec {
        SynthSpec {
            shapes: self.shapes.clone(),
            count,
            depth: self.depth,
            density: self.density,
            min_size: self.min_size,
            max_size: self.max_size,
        }
    }

    pub fn surrogate(&self) -> SurrogateConfig {
        SurrogateConfig { channels: self.surrogate_channels, coarse_levels: self.coarse_levels, seed: self.seed }
    }

    pub fn voxnet(&self) -> VoxNetConfig {
        VoxNetConfig {
            channels: self.voxnet_channels,
            blocks: self.voxnet_blocks,
            upsampling: Upsampling::BackLoaded,
            seed: self.seed.wrapping_add(1),
        }
    }

    /// Seeds of the training and held-out datasets.
    pub fn dataset_seeds(&self) -> (u64, u64) {
        (self.seed.wrapping_mul(2).wrapping_add(17), self.seed.wrapping_mul(2).wrapping_add(18))
    }
}
