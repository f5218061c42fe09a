//! Line-oriented `key = value` configuration, plus the arch file format.
//!
//! Unknown keys are rejected so typos fail loudly; `--set key=value` flags
//! override file values. Defaults mirror the reference training setup:
//! L = 20, jitter 1e-3, prior white noise 0.1, inducing noise 0.1, momentum
//! 0.9, weight decay 1e-4.

use std::path::{Path, PathBuf};

use funcvi::cnngp::{ArchSpec, ConvSpec, Layer};
use funcvi::error::{FvError, Result};
use funcvi::fvi::{LikelihoodKind, TrainConfig};
use funcvi::tasks::TaskSetup;

#[derive(Clone, Debug)]
pub struct Config {
    pub task: String,
    pub likelihood: LikelihoodKind,
    pub arch: Option<PathBuf>,
    pub rank: usize,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mc_samples: usize,
    pub cls_samples: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub jitter: f64,
    pub noise_var: f64,
    pub inducing_noise_var: f64,
    pub prior_mean: f64,
    pub weight_var: f64,
    pub bias_var: f64,
    pub data_scale: bool,
    pub grad_clip: Option<f64>,
    pub n_train: usize,
    pub seed: u64,
    pub data_seed: u64,
    pub init_seed: u64,
    pub out_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            task: "regression1d".into(),
            likelihood: LikelihoodKind::Gaussian,
            arch: None,
            rank: 20,
            hidden: 12,
            lr: 1e-3,
            epochs: 100,
            batch_size: 4,
            mc_samples: 10,
            cls_samples: 32,
            momentum: 0.9,
            weight_decay: 1e-4,
            jitter: 1e-3,
            noise_var: 0.1,
            inducing_noise_var: 0.1,
            prior_mean: 0.5,
            weight_var: 0.2,
            bias_var: 0.08,
            data_scale: true,
            grad_clip: None,
            n_train: 128,
            seed: 0,
            data_seed: 1,
            init_seed: 1,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            FvError::Parse(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Config::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                FvError::Parse(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| FvError::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| FvError::Parse(format!("override '{s}' is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parse_f64 = |v: &str| -> Result<f64> {
            v.parse().map_err(|_| FvError::Parse(format!("bad number '{v}'")))
        };
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse().map_err(|_| FvError::Parse(format!("bad integer '{v}'")))
        };
        let parse_u64 = |v: &str| -> Result<u64> {
            v.parse().map_err(|_| FvError::Parse(format!("bad integer '{v}'")))
        };
        match key {
            "task" => self.task = value.to_string(),
            "likelihood" => {
                self.likelihood = match value {
                    "gaussian" => LikelihoodKind::Gaussian,
                    "laplace" => LikelihoodKind::Laplace,
                    "berhu" => LikelihoodKind::BerHu,
                    "boltzmann" => LikelihoodKind::Boltzmann,
                    other => {
                        return Err(FvError::Parse(format!("unknown likelihood '{other}'")))
                    }
                }
            }
            "arch" => self.arch = Some(PathBuf::from(value)),
            "l" => self.rank = parse_usize(value)?,
            "hidden" => self.hidden = parse_usize(value)?,
            "lr" => self.lr = parse_f64(value)?,
            "epochs" => self.epochs = parse_usize(value)?,
            "batch_size" => self.batch_size = parse_usize(value)?,
            "mc_samples" => self.mc_samples = parse_usize(value)?,
            "cls_samples" => self.cls_samples = parse_usize(value)?,
            "momentum" => self.momentum = parse_f64(value)?,
            "weight_decay" => self.weight_decay = parse_f64(value)?,
            "jitter" => self.jitter = parse_f64(value)?,
            "noise_var" => self.noise_var = parse_f64(value)?,
            "inducing_noise_var" => self.inducing_noise_var = parse_f64(value)?,
            "prior_mean" => self.prior_mean = parse_f64(value)?,
            "weight_var" => self.weight_var = parse_f64(value)?,
            "bias_var" => self.bias_var = parse_f64(value)?,
            "data_scale" => {
                self.data_scale = match value {
                    "true" | "1" | "on" => true,
                    "false" | "0" | "off" => false,
                    other => return Err(FvError::Parse(format!("bad bool '{other}'"))),
                }
            }
            "grad_clip" => {
                self.grad_clip = match value {
                    "none" => None,
                    v => Some(parse_f64(v)?),
                }
            }
            "n_train" => self.n_train = parse_usize(value)?,
            "seed" => self.seed = parse_u64(value)?,
            "data_seed" => self.data_seed = parse_u64(value)?,
            "init_seed" => self.init_seed = parse_u64(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(FvError::Parse(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Output directory, honoring the FUNCVI_OUT_DIR environment override.
    pub fn resolved_out_dir(&self) -> PathBuf {
        match std::env::var_os("FUNCVI_OUT_DIR") {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => self.out_dir.clone(),
        }
    }

    pub fn task_setup(&self) -> TaskSetup {
        TaskSetup {
            task: self.task.clone(),
            n_train: self.n_train,
            hidden: self.hidden,
            rank: self.rank,
            prior_mean: self.prior_mean,
            noise_var: self.noise_var,
            weight_var: self.weight_var,
            bias_var: self.bias_var,
            data_seed: self.data_seed,
            init_seed: self.init_seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            mc_samples: self.mc_samples,
            cls_samples: self.cls_samples,
            epochs: self.epochs,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            jitter: self.jitter,
            inducing_noise_var: self.inducing_noise_var,
            data_scale: self.data_scale,
            grad_clip: self.grad_clip,
            likelihood: self.likelihood,
            seed: self.seed,
        }
    }

    /// Prior architecture: parsed from the arch file when configured,
    /// otherwise the default interpolation stack at the task resolution.
    pub fn arch_spec(&self) -> Result<ArchSpec> {
        match &self.arch {
            Some(path) => {
                let mut arch = parse_arch_file(path)?;
                arch.prior_mean = self.prior_mean;
                arch.noise_var = self.noise_var;
                arch.validate()?;
                Ok(arch)
            }
            None => self.task_setup().default_arch(),
        }
    }

    /// Canonical `key = value` listing of the effective configuration.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let lk = match self.likelihood {
            LikelihoodKind::Gaussian => "gaussian",
            LikelihoodKind::Laplace => "laplace",
            LikelihoodKind::BerHu => "berhu",
            LikelihoodKind::Boltzmann => "boltzmann",
        };
        s.push_str(&format!("task = {}\n", self.task));
        s.push_str(&format!("likelihood = {lk}\n"));
        if let Some(a) = &self.arch {
            s.push_str(&format!("arch = {}\n", a.display()));
        }
        s.push_str(&format!("l = {}\n", self.rank));
        s.push_str(&format!("hidden = {}\n", self.hidden));
        s.push_str(&format!("lr = {}\n", self.lr));
        s.push_str(&format!("epochs = {}\n", self.epochs));
        s.push_str(&format!("batch_size = {}\n", self.batch_size));
        s.push_str(&format!("mc_samples = {}\n", self.mc_samples));
        s.push_str(&format!("cls_samples = {}\n", self.cls_samples));
        s.push_str(&format!("momentum = {}\n", self.momentum));
        s.push_str(&format!("weight_decay = {}\n", self.weight_decay));
        s.push_str(&format!("jitter = {}\n", self.jitter));
        s.push_str(&format!("noise_var = {}\n", self.noise_var));
        s.push_str(&format!("inducing_noise_var = {}\n", self.inducing_noise_var));
        s.push_str(&format!("prior_mean = {}\n", self.prior_mean));
        s.push_str(&format!("weight_var = {}\n", self.weight_var));
        s.push_str(&format!("bias_var = {}\n", self.bias_var));
        s.push_str(&format!("data_scale = {}\n", self.data_scale));
        match self.grad_clip {
            Some(c) => s.push_str(&format!("grad_clip = {c}\n")),
            None => s.push_str("grad_clip = none\n"),
        }
        s.push_str(&format!("n_train = {}\n", self.n_train));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("data_seed = {}\n", self.data_seed));
        s.push_str(&format!("init_seed = {}\n", self.init_seed));
        s.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        s
    }
}

/// Arch file: `input = C,H,W` plus ordered `layer = ...` lines
/// (`conv KxK sS pP wVAR bVAR`, `relu`, `upsample HxW`). Prior mean and
/// noise come from the main config.
pub fn parse_arch_file(path: &Path) -> Result<ArchSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| FvError::Parse(format!("cannot read arch file {}: {e}", path.display())))?;
    let mut in_shape: Option<(usize, usize, usize)> = None;
    let mut layers = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            FvError::Parse(format!("arch line {}: expected key = value", lineno + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "input" => {
                let dims: Vec<usize> = v
                    .split(',')
                    .map(|d| {
                        d.trim()
                            .parse()
                            .map_err(|_| FvError::Parse(format!("bad input dim '{d}'")))
                    })
                    .collect::<Result<_>>()?;
                if dims.len() != 3 {
                    return Err(FvError::Parse("input wants C,H,W".into()));
                }
                in_shape = Some((dims[0], dims[1], dims[2]));
            }
            "layer" => layers.push(parse_layer(v, lineno + 1)?),
            other => return Err(FvError::Parse(format!("unknown arch key '{other}'"))),
        }
    }
    let (c, h, w) =
        in_shape.ok_or_else(|| FvError::Parse("arch file is missing 'input = C,H,W'".into()))?;
    Ok(ArchSpec {
        layers,
        in_channels: c,
        in_h: h,
        in_w: w,
        prior_mean: 0.0,
        noise_var: 0.0,
    })
}

fn parse_layer(spec: &str, lineno: usize) -> Result<Layer> {
    let toks: Vec<&str> = spec.split_whitespace().collect();
    let bad = |msg: &str| FvError::Parse(format!("arch line {lineno}: {msg}"));
    let parse_pair = |tok: &str| -> Result<(usize, usize)> {
        let (a, b) = tok
            .split_once('x')
            .ok_or_else(|| bad(&format!("expected AxB, got '{tok}'")))?;
        Ok((
            a.parse().map_err(|_| bad(&format!("bad dim '{a}'")))?,
            b.parse().map_err(|_| bad(&format!("bad dim '{b}'")))?,
        ))
    };
    match toks.as_slice() {
        ["relu"] => Ok(Layer::Relu),
        ["upsample", dims] => {
            let (th, tw) = parse_pair(dims)?;
            Ok(Layer::NearestUpsample { th, tw })
        }
        ["conv", dims, rest @ ..] => {
            let (kh, kw) = parse_pair(dims)?;
            let mut stride = 1usize;
            let mut pad = 1usize;
            let mut weight_var = 0.2;
            let mut bias_var = 0.08;
            for tok in rest {
                let (tag, val) = tok.split_at(1);
                match tag {
                    "s" => stride = val.parse().map_err(|_| bad("bad stride"))?,
                    "p" => pad = val.parse().map_err(|_| bad("bad padding"))?,
                    "w" => weight_var = val.parse().map_err(|_| bad("bad weight var"))?,
                    "b" => bias_var = val.parse().map_err(|_| bad("bad bias var"))?,
                    _ => return Err(bad(&format!("unknown conv token '{tok}'"))),
                }
            }
            Ok(Layer::Conv(ConvSpec {
                kh,
                kw,
                stride,
                pad,
                weight_var,
                bias_var,
            }))
        }
        _ => Err(bad(&format!("unknown layer '{spec}'"))),
    }
}
