//! Key-value run configuration: a plain text file of `dotted.key = value`
//! lines plus command-line overrides. Every key must be consumed by the
//! subcommand; leftovers are config errors so typos never pass silently.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use pelt_core::estimate::PmlParams;
use pelt_core::model::AcquisitionConfig;
use pelt_core::unmix::{TieBreak, UnmixParams};
use pelt_core::{Error, Result};

#[derive(Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    read: RefCell<Vec<String>>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!(
                        "{}:{}: expected key = value",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        for ov in overrides {
            let (k, v) = ov.split_once('=').ok_or_else(|| {
                Error::Config(format!("override '{ov}': expected key=value"))
            })?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(RunConfig { values, read: RefCell::new(Vec::new()) })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let v = self.values.get(key).map(String::as_str);
        if v.is_some() {
            self.read.borrow_mut().push(key.to_string());
        }
        v
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    pub fn require_str(&self, key: &str) -> Result<String> {
        self.raw(key)
            .map(str::to_string)
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            None => Ok(default),
            Some("inf") => Ok(f64::INFINITY),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("key '{key}': '{v}' is not a number"))),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("key '{key}': '{v}' is not an integer"))),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_u64(key, default as u64)? as usize)
    }

    /// Comma-separated list of reals; 'inf' allowed.
    pub fn get_f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    let s = s.trim();
                    if s == "inf" {
                        Ok(f64::INFINITY)
                    } else {
                        s.parse().map_err(|_| {
                            Error::Config(format!("key '{key}': '{s}' is not a number"))
                        })
                    }
                })
                .collect(),
        }
    }

    pub fn get_usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        Error::Config(format!("key '{key}': '{s}' is not an integer"))
                    })
                })
                .collect(),
        }
    }

    /// Errors if any configured key was never consumed.
    pub fn finish(&self) -> Result<()> {
        let read = self.read.borrow();
        let unknown: Vec<&String> = self
            .values
            .keys()
            .filter(|k| !read.iter().any(|r| r == *k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown config keys: {}",
                unknown
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    }

    // -- typed bundles ------------------------------------------------------

    pub fn acquisition(&self) -> Result<AcquisitionConfig> {
        let std = AcquisitionConfig::standard();
        let config = AcquisitionConfig {
            t_r_ps: self.get_f64("acquisition.t_r_ps", std.t_r_ps)?,
            t_p_ps: self.get_f64("acquisition.t_p_ps", std.t_p_ps)?,
            pulse_sigma_ps: self.get_f64("acquisition.pulse_sigma_ps", std.pulse_sigma_ps)?,
            t_wind_ps: self.get_f64("acquisition.t_wind_ps", std.t_wind_ps)?,
            n_r: self.get_u64("acquisition.n_r", u64::from(std.n_r))? as u32,
            eta: self.get_f64("acquisition.eta", std.eta)?,
            s_total: self.get_f64("acquisition.s_total", std.s_total)?,
            b_total: self.get_f64("acquisition.b_total", std.b_total)?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn unmix_params(&self, seed: u64) -> Result<UnmixParams> {
        let def = UnmixParams::default();
        let tie = match self.get_str("unmix.tie_break", "random").as_str() {
            "random" => TieBreak::SeededRandom,
            "earliest" => TieBreak::Earliest,
            other => {
                return Err(Error::Config(format!(
                    "unmix.tie_break must be 'random' or 'earliest', got '{other}'"
                )))
            }
        };
        let params = UnmixParams {
            tau_fa: self.get_f64("unmix.tau_fa", def.tau_fa)?,
            tau_sp: self.get_f64("unmix.tau_sp", def.tau_sp)?,
            d_sp_max: self.get_u64("unmix.d_sp_max", u64::from(def.d_sp_max))? as u32,
            tie_break: tie,
            seed,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn pml_params(&self) -> Result<PmlParams> {
        let def = PmlParams::default();
        let params = PmlParams {
            beta_alpha: self.get_f64("pml.beta_alpha", def.beta_alpha)?,
            beta_z: self.get_f64("pml.beta_z", def.beta_z)?,
            max_iters: self.get_usize("pml.max_iters", def.max_iters)?,
            rel_tol: self.get_f64("pml.rel_tol", def.rel_tol)?,
            depth_grid_step_ps: self
                .get_f64("pml.depth_grid_step_ps", def.depth_grid_step_ps)?,
        };
        params.validate()?;
        Ok(params)
    }
}
