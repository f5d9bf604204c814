//! Flat `key=value` run configuration. Every key is also a command-line flag.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};
use gdiff_core::flow::FlowConfig;
use gdiff_core::net::NetConfig;
use gdiff_core::synth::{SynthConfig, Template};
use gdiff_core::temporal::EncoderConfig;

use crate::error::CliError;

/// `(key, default, help)`; keys without a default are required when read.
pub const KEYS: &[(&str, Option<&str>, &str)] = &[
    ("seed", None, "master RNG seed"),
    ("template", Some("HUMANOID13"), "skeleton template: CHAIN(n) or HUMANOID13"),
    ("data", None, "dataset directory"),
    ("out", None, "output path"),
    ("model", None, "model parameter file"),
    ("encoder", None, "parameter file holding the frozen encoder (enc.*)"),
    ("gen", None, "directory of generated clips"),
    ("gt", None, "directory of ground-truth clips"),
    ("frames", Some("64"), "clip length in frames"),
    ("fps", Some("15"), "frame rate"),
    ("n_clips", Some("256"), "number of synthetic clips"),
    ("n_styles", Some("4"), "number of styles"),
    ("period_min", Some("10"), "shortest beat period in frames"),
    ("period_max", Some("18"), "longest beat period in frames"),
    ("hidden", Some("128"), "generator channel width"),
    ("blocks", Some("4"), "residual blocks per region"),
    ("style_dim", Some("16"), "style embedding size"),
    ("time_dim", Some("16"), "flow-time embedding size"),
    ("steps", Some("3000"), "total optimizer steps"),
    ("batch_size", Some("8"), "clips per step"),
    ("lr", Some("1e-4"), "Adam learning rate"),
    ("lambda_pos", Some("1"), "position loss weight"),
    ("lambda_j", Some("1"), "joint structure loss weight"),
    ("lambda_s", Some("1"), "skeleton structure loss weight"),
    ("lambda_m", Some("0.1"), "temporal structure loss weight"),
    ("sample_steps", Some("20"), "Euler steps when sampling"),
    ("enc_hidden", Some("32"), "encoder channel width"),
    ("enc_latent", Some("64"), "encoder latent size per scale"),
    ("vae_steps", Some("300"), "encoder pre-training steps"),
    ("vae_lr", Some("1e-3"), "encoder pre-training learning rate"),
    ("vae_beta", Some("1e-3"), "KL weight during encoder pre-training"),
    ("sigma", Some("3"), "BeatAlign kernel width in frames"),
    ("n_stream", Some("5"), "clips per stream"),
    ("log_every", Some("10"), "loss CSV row interval"),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|k| k.0 == key)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected key=value", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::usage(format!("config line {}: {}", i + 1, e.message)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !known(key) {
            return Err(CliError::usage(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, &value.to_string()).expect("known key");
        self
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        debug_assert!(known(key), "{key}");
        self.values.get(key).map(String::as_str).or_else(|| KEYS.iter().find(|k| k.0 == key).and_then(|k| k.1))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.raw(key).ok_or_else(|| CliError::usage(format!("missing required config key `{key}`")))?;
        v.parse().map_err(|_| CliError::usage(format!("invalid value `{v}` for `{key}`")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.get::<String>(key).map(PathBuf::from)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("seed")
    }

    pub fn template(&self) -> Result<Template, CliError> {
        let t: String = self.get("template")?;
        t.parse().map_err(CliError::from)
    }

    pub fn synth(&self) -> Result<SynthConfig, CliError> {
        Ok(SynthConfig {
            template: self.template()?,
            frames: self.get("frames")?,
            fps: self.get("fps")?,
            n_clips: self.get("n_clips")?,
            n_styles: self.get("n_styles")?,
            period_range: (self.get("period_min")?, self.get("period_max")?),
            seed: self.seed()?,
        })
    }

    pub fn flow(&self) -> Result<FlowConfig, CliError> {
        Ok(FlowConfig {
            sample_steps: self.get("sample_steps")?,
            lambda_pos: self.get("lambda_pos")?,
            lambda_j: self.get("lambda_j")?,
            lambda_s: self.get("lambda_s")?,
            lambda_m: self.get("lambda_m")?,
            lr: self.get("lr")?,
            batch_size: self.get("batch_size")?,
            seed: self.seed()?,
        })
    }

    pub fn net(&self, joints: usize, hand_joints: Vec<usize>, n_styles: usize) -> Result<NetConfig, CliError> {
        Ok(NetConfig {
            hidden: self.get("hidden")?,
            blocks: self.get("blocks")?,
            style_dim: self.get("style_dim")?,
            time_dim: self.get("time_dim")?,
            ..NetConfig::new(joints, hand_joints, n_styles)
        })
    }

    pub fn encoder(&self, channels: usize) -> Result<EncoderConfig, CliError> {
        Ok(EncoderConfig {
            hidden: self.get("enc_hidden")?,
            latent: self.get("enc_latent")?,
            ..EncoderConfig::new(channels)
        })
    }
}

/// `--config FILE` plus one `--key VALUE` flag per config key; flags win.
#[derive(Clone, Debug, Default)]
pub struct ConfigArgs {
    pub file: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.file {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

impl FromArgMatches for ConfigArgs {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = ConfigArgs { file: m.get_one::<PathBuf>("config").cloned(), overrides: Vec::new() };
        for (key, _, _) in KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                out.overrides.push((key.to_string(), v.clone()));
            }
        }
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = ConfigArgs::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ConfigArgs {
    fn augment_args(cmd: Command) -> Command {
        let cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key=value run configuration"),
        );
        KEYS.iter().fold(cmd, |cmd, (key, default, help)| {
            let help = match default {
                Some(d) => format!("{help} [default: {d}]"),
                None => help.to_string(),
            };
            cmd.arg(Arg::new(*key).long(flag(key)).value_name("VALUE").help(help))
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}
