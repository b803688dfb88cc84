//! Flat `key = value` run configuration.
//!
//! Every key has an embedded default. A config file (one `key = value` per
//! line, `#` comments) overrides the defaults, and `--set key=value` flags
//! override the file. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ebm3d::evalkit::{Difficulty, EvalMode};
use ebm3d::synthscene::SynthConfig;
use ebm3d::{Error, NetDims, NoiseModel, PoolConfig, RefineConfig, Result, TrainConfig};

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("timing", "true"),
    // synthetic scenes
    ("synth.n_scenes", "100"),
    ("synth.n_val", "auto"),
    ("synth.width", "128"),
    ("synth.length", "128"),
    ("synth.channels", "16"),
    ("synth.res", "0.25"),
    ("synth.cars_min", "1"),
    ("synth.cars_max", "6"),
    ("synth.margin", "2"),
    ("synth.h_range", "1.4,1.8"),
    ("synth.w_range", "1.5,1.9"),
    ("synth.l_range", "3.4,4.6"),
    ("synth.cz_jitter", "0.02"),
    ("synth.det_sigma", "0.25,0.25,0.1,0.08,0.08,0.15,0.1"),
    ("synth.feature_noise", "0.05"),
    ("synth.symmetric_rendering", "false"),
    ("synth.max_retries", "200"),
    // network
    ("net.grid_w", "4"),
    ("net.grid_l", "7"),
    ("net.enc_width", "16"),
    ("net.hidden", "256"),
    // noise model
    ("noise.sigma3", "0.25,0.25,0.125,0.125,0.125,0.125,0.0625"),
    ("noise.scales", "0.25,0.5,1"),
    ("noise.beta", "none"),
    // training
    ("train.num_noise", "256"),
    ("train.lr", "0.001"),
    ("train.batch_size", "8"),
    ("train.epochs", "4"),
    ("train.steps_per_epoch", "all"),
    ("train.precision", "f64"),
    // refinement
    ("refine.iterations", "10"),
    ("refine.lambda", "0.0002"),
    ("refine.eta", "0.5"),
    ("refine.split", "val"),
    ("refine.trace", "false"),
    // evaluation
    ("eval.modes", "3d,bev"),
    ("eval.thresholds", "0.7,0.75,0.8,0.85,0.9"),
    ("eval.difficulties", "all"),
    ("eval.class", "Car"),
    // analyses
    ("sweep.ts", "0,1,2,4,8,10,16,32,64"),
    ("scan.scene", "0"),
    ("scan.detection", "0"),
    ("scan.points", "101"),
    ("scan.source", "det"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn cfg_err(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {what}"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown config key {key:?}"))),
        }
    }

    /// Applies a `key=value` assignment.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line).map_err(|e| Error::Parse { line: n + 1, msg: e.to_string() })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("no default for {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse().map_err(|_| cfg_err(key, v, std::any::type_name::<T>()))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(cfg_err(key, v, "a boolean")),
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.raw(key);
        v.split(',')
            .map(|s| s.trim().parse().map_err(|_| cfg_err(key, v, "a comma-separated list")))
            .collect()
    }

    fn get_array<const N: usize>(&self, key: &str) -> Result<[f64; N]> {
        let v = self.get_list::<f64>(key)?;
        v.try_into().map_err(|_| cfg_err(key, self.raw(key), &format!("{N} comma-separated numbers")))
    }

    /// `None` for the keyword `none_word`, otherwise a parsed value.
    fn get_opt<T: FromStr>(&self, key: &str, none_word: &str) -> Result<Option<T>> {
        if self.raw(key) == none_word {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn timing(&self) -> Result<bool> {
        self.get_bool("timing")
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let c = SynthConfig {
            width: self.get("synth.width")?,
            length: self.get("synth.length")?,
            channels: self.get("synth.channels")?,
            res: self.get("synth.res")?,
            center: [0.0, 0.0],
            cars_min: self.get("synth.cars_min")?,
            cars_max: self.get("synth.cars_max")?,
            margin: self.get("synth.margin")?,
            h_range: self.get_array("synth.h_range")?,
            w_range: self.get_array("synth.w_range")?,
            l_range: self.get_array("synth.l_range")?,
            cz_jitter: self.get("synth.cz_jitter")?,
            det_sigma: self.get_array("synth.det_sigma")?,
            feature_noise: self.get("synth.feature_noise")?,
            symmetric_rendering: self.get_bool("synth.symmetric_rendering")?,
            max_retries: self.get("synth.max_retries")?,
            seed: self.seed()?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn n_scenes(&self) -> Result<u64> {
        self.get("synth.n_scenes")
    }

    pub fn n_val(&self) -> Result<Option<u64>> {
        self.get_opt("synth.n_val", "auto")
    }

    pub fn net_dims(&self, channels: usize) -> Result<NetDims> {
        let d = NetDims {
            pool: PoolConfig::new(self.get("net.grid_w")?, self.get("net.grid_l")?)?,
            channels,
            enc_width: self.get("net.enc_width")?,
            hidden: self.get("net.hidden")?,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn noise<T: ebm3d::Real>(&self) -> Result<NoiseModel<T>> {
        let sigma3: [f64; 7] = self.get_array("noise.sigma3")?;
        let scales = self.get_list::<f64>("noise.scales")?;
        let beta = self.get_opt::<f64>("noise.beta", "none")?;
        let sigma = scales.iter().map(|s| sigma3.map(|v| T::lit(v * s))).collect();
        NoiseModel::new(sigma, beta.map(T::lit))
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let c = TrainConfig {
            num_noise: self.get("train.num_noise")?,
            lr: self.get("train.lr")?,
            batch_size: self.get("train.batch_size")?,
            epochs: self.get("train.epochs")?,
            steps_per_epoch: self.get_opt("train.steps_per_epoch", "all")?,
            seed: self.seed()?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn precision(&self) -> Result<Precision> {
        match self.raw("train.precision") {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            v => Err(cfg_err("train.precision", v, "f32 or f64")),
        }
    }

    pub fn refine(&self) -> Result<RefineConfig> {
        RefineConfig::new(self.get("refine.iterations")?, self.get("refine.lambda")?, self.get("refine.eta")?)
    }

    pub fn eval_modes(&self) -> Result<Vec<EvalMode>> {
        self.get_list("eval.modes")
    }

    pub fn thresholds(&self) -> Result<Vec<f64>> {
        let t = self.get_list::<f64>("eval.thresholds")?;
        if t.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(cfg_err("eval.thresholds", self.raw("eval.thresholds"), "values in [0, 1]"));
        }
        Ok(t)
    }

    pub fn difficulties(&self) -> Result<Vec<Difficulty>> {
        self.get_list("eval.difficulties")
    }

    /// One line per key, `key = value`.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Single-line summary for CSV comment headers.
    pub fn header(&self, command: &str) -> String {
        let kv: Vec<String> = self.values.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("ebm3d {} command={command} {}", ebm3d::VERSION, kv.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}
