//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are checked
//! against [`KNOWN_KEYS`] so that typos fail loudly. The original text is kept
//! so reports can echo it verbatim.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Every accepted key with a one-line description.
pub const KNOWN_KEYS: &[(&str, &str)] = &[
    ("bits", "bits per symbol M: 2, 4, 6 or 8"),
    ("snr_db", "comma-separated per-layer SNR points in dB"),
    ("channel", "iid | correlated"),
    ("correlation_length", "AR(1) correlation length in REs (correlated channel)"),
    ("blocks", "transport blocks per SNR point"),
    ("res_per_block", "resource elements per block"),
    ("coding", "uncoded | ldpc"),
    ("alist", "parity-check matrix for ldpc coding"),
    ("ldpc_max_iter", "min-sum iteration cap"),
    ("ldpc_alpha", "min-sum normalization factor"),
    ("seed", "base seed of the block streams"),
    ("policy", "static:<1-5> | dynamic:<model path> | genie"),
    ("max_block_errors", "stop an SNR point once this many block errors are seen (0 = never)"),
    ("features", "number of top-ranked features fed to the network"),
    ("mifs_beta", "redundancy weight of the feature ranking"),
    ("mifs_bins", "equal-frequency bins per feature"),
    ("n_max", "per-class sample cap after merging"),
    ("merge", "class merge rule <from>:<to>, or none"),
    ("resample_seed", "seed of the per-class subsampling and holdout split"),
    ("holdout", "fraction of processed samples held out for reporting"),
    ("hidden", "hidden units"),
    ("activation", "first-stage activation: sigmoid | pwl"),
    ("retrain_activation", "retrained activation: sigmoid | pwl"),
    ("max_iter", "optimizer iteration cap"),
    ("grad_tol", "optimizer gradient-norm tolerance"),
    ("init_seed", "weight initialization seed"),
    ("gamma", "under-estimation threshold for margin calibration"),
    ("grid_step", "margin sweep step"),
    ("warm_start", "retrain from the first-stage weights: true | false"),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    source: String,
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(path, i + 1, format!("expected key = value, got '{line}'")));
            };
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.iter().any(|(known, _)| *known == k) {
                return Err(Error::parse(path, i + 1, format!("unknown key '{k}'")));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::parse(path, i + 1, format!("duplicate key '{k}'")));
            }
        }
        Ok(Config {
            source: text.to_string(),
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Verbatim file contents.
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Parsed entries, including command-line overrides.
    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KNOWN_KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("unknown key '{key}'")));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'"))),
        }
    }

    pub fn get_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.entries.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Config(format!("{key}: bad number '{}'", t.trim())))
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_types() {
        let text = "# sweep\nbits = 4\nsnr_db = 10, 12.5 ,15\n\nseed=7\n";
        let c = Config::parse(text, Path::new("c")).unwrap();
        assert_eq!(c.get("bits", 8usize).unwrap(), 4);
        assert_eq!(c.get("blocks", 2000usize).unwrap(), 2000);
        assert_eq!(c.get_list("snr_db", &[]).unwrap(), vec![10.0, 12.5, 15.0]);
        assert_eq!(c.source(), text);
        assert!(c.get::<usize>("snr_db", 0).is_err());
    }

    #[test]
    fn rejects_typos_duplicates_and_garbage() {
        let p = Path::new("c");
        assert!(matches!(Config::parse("bitz = 4", p), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Config::parse("bits = 4\nbits = 8", p), Err(Error::Parse { line: 2, .. })));
        assert!(Config::parse("bits 4", p).is_err());
        let mut c = Config::default();
        assert!(c.set("nope", "1").is_err());
        c.set("gamma", "0.02").unwrap();
        assert_eq!(c.get("gamma", 0.01).unwrap(), 0.02);
    }
}
