//! Run configuration as `key = value` text.
//!
//! Lines starting with `#` are comments. Every key has a default, so an
//! empty file is a valid configuration. Values given on the command line
//! with `--set key=value` override the file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use dcdnn_core::dataset::{ExtractConfig, Tiling};
use dcdnn_core::evaluator::{lambda_from_qp, CostModel};
use dcdnn_core::fcnet::{default_hidden_dim, InitScheme, DEFAULT_DEPTH, DEFAULT_MOMENTUM, DEFAULT_REF_LINES, DEFAULT_WEIGHT_DECAY};
use dcdnn_core::split::{SplitConfig, DEFAULT_KAPPA};
use dcdnn_core::trainer::{NetShape, Schedule, TrainOptions, TrainerConfig};

use crate::error::{io_at, Error, Result};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "DCDNN_CONFIG";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub ref_lines: usize,
    pub tiling: String,
    /// `None` picks the tiling's natural PU size.
    pub pu_size: Option<usize>,
    /// `None` steps by the PU size.
    pub stride: Option<usize>,
    pub filter: bool,
    pub hidden_dims: [usize; 4],
    pub depth: usize,
    pub init: InitScheme,
    pub modes: usize,
    pub kappa: f64,
    pub perturb_bias: bool,
    pub perturb_slopes: bool,
    pub pretrain: Schedule,
    pub recursive: Schedule,
    pub rounds: usize,
    pub stop_threshold: f64,
    pub batch_small: usize,
    pub batch_large: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub split_seed: u64,
    pub qp: f64,
    pub lambda: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            ref_lines: DEFAULT_REF_LINES,
            tiling: "uniform-8".into(),
            pu_size: None,
            stride: None,
            filter: true,
            hidden_dims: [4, 8, 16, 32].map(|n| default_hidden_dim(n).expect("standard size")),
            depth: DEFAULT_DEPTH,
            init: InitScheme::FanInScaled,
            modes: 2,
            kappa: DEFAULT_KAPPA,
            perturb_bias: false,
            perturb_slopes: false,
            pretrain: Schedule::PRETRAIN,
            recursive: Schedule::RECURSIVE,
            rounds: 8,
            stop_threshold: 0.97,
            batch_small: 128,
            batch_large: 64,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            seed: 1,
            split_seed: 2,
            qp: 32.0,
            lambda: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad value {value:?} for {key}, expected on/off"))),
    }
}

fn parse_auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn on_off(v: bool) -> String {
    if v { "on" } else { "off" }.into()
}

fn auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".into(), T::to_string)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "ref_lines" => self.ref_lines = parse(key, v)?,
            "tiling" => {
                Tiling::parse(v).map_err(|e| Error::Config(format!("tiling: {e}")))?;
                self.tiling = v.into();
            }
            "pu_size" => self.pu_size = parse_auto(key, v)?,
            "stride" => self.stride = parse_auto(key, v)?,
            "filter" => self.filter = parse_bool(key, v)?,
            "hidden_4" => self.hidden_dims[0] = parse(key, v)?,
            "hidden_8" => self.hidden_dims[1] = parse(key, v)?,
            "hidden_16" => self.hidden_dims[2] = parse(key, v)?,
            "hidden_32" => self.hidden_dims[3] = parse(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "init" => {
                self.init = match v {
                    "fan-in" => InitScheme::FanInScaled,
                    "unit" => InitScheme::UnitGaussian,
                    _ => return Err(Error::Config(format!("bad init {v:?}, expected fan-in or unit"))),
                }
            }
            "modes" => self.modes = parse(key, v)?,
            "kappa" => self.kappa = parse(key, v)?,
            "perturb_bias" => self.perturb_bias = parse_bool(key, v)?,
            "perturb_slopes" => self.perturb_slopes = parse_bool(key, v)?,
            "pretrain_epochs" => self.pretrain.epochs = parse(key, v)?,
            "pretrain_lr_start" => self.pretrain.lr_start = parse(key, v)?,
            "pretrain_lr_floor" => self.pretrain.lr_floor = parse(key, v)?,
            "pretrain_step" => self.pretrain.step = parse(key, v)?,
            "recursive_epochs" => self.recursive.epochs = parse(key, v)?,
            "recursive_lr_start" => self.recursive.lr_start = parse(key, v)?,
            "recursive_lr_floor" => self.recursive.lr_floor = parse(key, v)?,
            "recursive_step" => self.recursive.step = parse(key, v)?,
            "rounds" => self.rounds = parse(key, v)?,
            "stop_threshold" => self.stop_threshold = parse(key, v)?,
            "batch_small" => self.batch_small = parse(key, v)?,
            "batch_large" => self.batch_large = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "split_seed" => self.split_seed = parse(key, v)?,
            "qp" => self.qp = parse(key, v)?,
            "lambda" => self.lambda = parse_auto(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let init = match self.init {
            InitScheme::FanInScaled => "fan-in",
            InitScheme::UnitGaussian => "unit",
        };
        vec![
            ("ref_lines", self.ref_lines.to_string()),
            ("tiling", self.tiling.clone()),
            ("pu_size", auto(&self.pu_size)),
            ("stride", auto(&self.stride)),
            ("filter", on_off(self.filter)),
            ("hidden_4", self.hidden_dims[0].to_string()),
            ("hidden_8", self.hidden_dims[1].to_string()),
            ("hidden_16", self.hidden_dims[2].to_string()),
            ("hidden_32", self.hidden_dims[3].to_string()),
            ("depth", self.depth.to_string()),
            ("init", init.into()),
            ("modes", self.modes.to_string()),
            ("kappa", self.kappa.to_string()),
            ("perturb_bias", on_off(self.perturb_bias)),
            ("perturb_slopes", on_off(self.perturb_slopes)),
            ("pretrain_epochs", self.pretrain.epochs.to_string()),
            ("pretrain_lr_start", self.pretrain.lr_start.to_string()),
            ("pretrain_lr_floor", self.pretrain.lr_floor.to_string()),
            ("pretrain_step", self.pretrain.step.to_string()),
            ("recursive_epochs", self.recursive.epochs.to_string()),
            ("recursive_lr_start", self.recursive.lr_start.to_string()),
            ("recursive_lr_floor", self.recursive.lr_floor.to_string()),
            ("recursive_step", self.recursive.step.to_string()),
            ("rounds", self.rounds.to_string()),
            ("stop_threshold", self.stop_threshold.to_string()),
            ("batch_small", self.batch_small.to_string()),
            ("batch_large", self.batch_large.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("seed", self.seed.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("qp", self.qp.to_string()),
            ("lambda", auto(&self.lambda)),
        ]
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            self.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        Self::parse_text(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").expect("writing to a String");
        }
        out
    }

    pub fn extract_config(&self) -> Result<ExtractConfig> {
        let tiling = Tiling::parse(&self.tiling)?;
        let pu_size = match (self.pu_size, &tiling) {
            (Some(p), _) => p,
            (None, Tiling::Mixed64) => 64,
            (None, Tiling::Uniform(n)) => *n,
            (None, Tiling::Custom(_)) => return Err(Error::Config("custom tilings need an explicit pu_size".into())),
        };
        let cfg = ExtractConfig {
            ref_lines: self.ref_lines,
            pu_size,
            tiling,
            stride: self.stride.unwrap_or(pu_size),
            filter: self.filter,
        };
        cfg.tiling.tus(cfg.pu_size)?;
        Ok(cfg)
    }

    pub fn trainer_config(&self) -> Result<TrainerConfig> {
        let cfg = TrainerConfig {
            modes: self.modes,
            shape: NetShape {
                ref_lines: self.ref_lines,
                depth: self.depth,
                init: self.init,
                hidden_dims: self.hidden_dims,
            },
            pretrain: self.pretrain,
            recursive: self.recursive,
            rounds: self.rounds,
            stop_threshold: self.stop_threshold,
            split: self.split_config(),
            options: TrainOptions {
                batch_small: self.batch_small,
                batch_large: self.batch_large,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
            },
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            kappa: self.kappa,
            seed: self.split_seed,
            perturb_bias: self.perturb_bias,
            perturb_slopes: self.perturb_slopes,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| lambda_from_qp(self.qp))
    }

    pub fn cost_model(&self, modes: usize) -> Result<CostModel> {
        Ok(CostModel::new(self.lambda(), modes)?)
    }
}
