//! Flat key-value campaign configuration.
//!
//! All angles are radians; values carrying a degree marker are rejected.
//! Unknown keys are rejected so typos fail loudly instead of silently
//! falling back to defaults.

use std::path::{Path, PathBuf};

use needlets::{Error, Result};

#[derive(Clone, Debug)]
pub struct CampaignConfig {
    pub bandwidth: f64,
    pub alpha: f64,
    pub amplitude: f64,
    pub spectrum_file: Option<PathBuf>,
    pub l_max: usize,
    pub scales: Vec<u32>,
    pub scale: u32,
    pub replicates: usize,
    pub seed: u64,
    pub level: f64,
    pub weights: String,
    pub mask_file: Option<PathBuf>,
    pub resolution: usize,
    pub decay_exponent: u32,
    pub pair_cap: usize,
    pub workers: Option<usize>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            bandwidth: 2.0,
            alpha: 3.0,
            amplitude: 1.0,
            spectrum_file: None,
            l_max: 64,
            scales: vec![2, 4],
            scale: 5,
            replicates: 200,
            seed: 42,
            level: 0.05,
            weights: "gof".to_string(),
            mask_file: None,
            resolution: needlets::window::DEFAULT_TABLE_RESOLUTION,
            decay_exponent: 3,
            pair_cap: needlets::needlet::PAIR_CAP,
            workers: None,
        }
    }
}

fn reject_degrees(key: &str, value: &str) -> Result<()> {
    let v = value.to_ascii_lowercase();
    if v.contains("deg") || v.ends_with('\u{00b0}') {
        return Err(Error::Parse(format!(
            "{key}: degrees are not accepted, express angles in radians"
        )));
    }
    Ok(())
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    reject_degrees(key, value)?;
    value
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("{key}: bad number {value:?}: {e}")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|e| Error::Parse(format!("{key}: bad integer {value:?}: {e}")))
}

impl CampaignConfig {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = CampaignConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim();
            match key.as_str() {
                "b" | "bandwidth" => cfg.bandwidth = parse_f64(&key, value)?,
                "alpha" => cfg.alpha = parse_f64(&key, value)?,
                "amplitude" => cfg.amplitude = parse_f64(&key, value)?,
                "spectrum_file" => cfg.spectrum_file = Some(PathBuf::from(value)),
                "l_max" => cfg.l_max = parse_usize(&key, value)?,
                "scales" => {
                    cfg.scales = value
                        .split(',')
                        .map(|s| {
                            s.trim()
                                .parse::<u32>()
                                .map_err(|e| Error::Parse(format!("scales: bad entry {s:?}: {e}")))
                        })
                        .collect::<Result<Vec<u32>>>()?;
                    if cfg.scales.is_empty() {
                        return Err(Error::Parse("scales: empty list".into()));
                    }
                }
                "scale" => cfg.scale = parse_usize(&key, value)? as u32,
                "replicates" => cfg.replicates = parse_usize(&key, value)?,
                "seed" => {
                    cfg.seed = value
                        .parse::<u64>()
                        .map_err(|e| Error::Parse(format!("seed: bad integer {value:?}: {e}")))?
                }
                "level" => cfg.level = parse_f64(&key, value)?,
                "weights" => cfg.weights = value.to_string(),
                "mask_file" => cfg.mask_file = Some(PathBuf::from(value)),
                "resolution" => cfg.resolution = parse_usize(&key, value)?,
                "decay_exponent" | "m" => cfg.decay_exponent = parse_usize(&key, value)? as u32,
                "pair_cap" => cfg.pair_cap = parse_usize(&key, value)?,
                "workers" => cfg.workers = Some(parse_usize(&key, value)?),
                other => {
                    return Err(Error::Parse(format!("unknown configuration key {other:?}")));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 1.0) {
            return Err(Error::invalid(format!(
                "bandwidth must satisfy B > 1, got {}",
                self.bandwidth
            )));
        }
        if self.replicates < 1 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        if !(0.0 < self.level && self.level < 1.0) {
            return Err(Error::invalid("level must lie in (0, 1)"));
        }
        if self.weights != "gof" {
            return Err(Error::invalid(format!(
                "unknown weight preset {:?} (available: gof)",
                self.weights
            )));
        }
        for &j in &self.scales {
            self.check_scale_support(j)?;
        }
        Ok(())
    }

    /// Every referenced scale must keep its window inside the configured
    /// degree budget.
    pub fn check_scale_support(&self, j: u32) -> Result<()> {
        let upper = self.bandwidth.powi(j as i32 + 1);
        if upper > self.l_max as f64 {
            return Err(Error::invalid(format!(
                "scale {j}: window upper support B^(j+1) = {upper:.1} exceeds l_max {}",
                self.l_max
            )));
        }
        Ok(())
    }

    /// The spectrum named by the configuration: an explicit table file or
    /// the power law.
    pub fn load_spectrum(&self) -> Result<needlets::PowerSpectrum> {
        match &self.spectrum_file {
            Some(path) => {
                let file = std::fs::File::open(path)?;
                let spectrum = needlets::PowerSpectrum::read_from(std::io::BufReader::new(file))?;
                if spectrum.l_max() < self.l_max {
                    return Err(Error::invalid(format!(
                        "spectrum file covers l_max {} but the configuration needs {}",
                        spectrum.l_max(),
                        self.l_max
                    )));
                }
                Ok(spectrum)
            }
            None => needlets::PowerSpectrum::power_law(self.alpha, self.amplitude, self.l_max),
        }
    }

    pub fn load_mask(&self) -> Result<needlets::SkyMask> {
        match &self.mask_file {
            Some(path) => {
                let file = std::fs::File::open(path)?;
                needlets::SkyMask::read_from(std::io::BufReader::new(file))
            }
            None => Ok(needlets::SkyMask::empty()),
        }
    }

    /// Key-value echo for the manifest, stable order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("b".into(), format!("{}", self.bandwidth)),
            ("alpha".into(), format!("{}", self.alpha)),
            ("amplitude".into(), format!("{}", self.amplitude)),
            ("l_max".into(), format!("{}", self.l_max)),
            (
                "scales".into(),
                self.scales
                    .iter()
                    .map(|j| j.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("scale".into(), format!("{}", self.scale)),
            ("replicates".into(), format!("{}", self.replicates)),
            ("seed".into(), format!("{}", self.seed)),
            ("level".into(), format!("{}", self.level)),
            ("weights".into(), self.weights.clone()),
            ("resolution".into(), format!("{}", self.resolution)),
            ("decay_exponent".into(), format!("{}", self.decay_exponent)),
            ("pair_cap".into(), format!("{}", self.pair_cap)),
        ];
        if let Some(p) = &self.spectrum_file {
            kv.push(("spectrum_file".into(), p.display().to_string()));
        }
        if let Some(p) = &self.mask_file {
            kv.push(("mask_file".into(), p.display().to_string()));
        }
        kv
    }
}
