use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::str::FromStr;

use anyhow::anyhow;
use tdif_core::relfeat::{load_key_values, FeatureParams};

use crate::Failure;

pub const SEED_ENV: &str = "TDIF_SEED";

const FEATURE_KEYS: [&str; 6] = ["k1", "b", "mu", "lambda_r", "ordered_window", "unordered_window"];

/// Values from a `key = value` config file. They take precedence over flags.
#[derive(Debug, Default)]
pub struct Overrides {
    values: HashMap<String, String>,
    used: BTreeSet<String>,
}

impl Overrides {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let values = match path {
            Some(p) => load_key_values(p).map_err(|e| Failure::Usage(anyhow!("config {}: {e}", p.display())))?,
            None => HashMap::new(),
        };
        Ok(Self {
            values,
            used: BTreeSet::new(),
        })
    }

    /// Replace `slot` with the config value for `key`, if there is one.
    pub fn apply<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<(), Failure> {
        if let Some(v) = self.values.get(key) {
            *slot = v
                .parse()
                .map_err(|_| Failure::Usage(anyhow!("config key {key}: cannot parse {v:?}")))?;
            self.used.insert(key.to_string());
        }
        Ok(())
    }

    pub fn features(&mut self) -> Result<FeatureParams, Failure> {
        let mut params = FeatureParams::default();
        params.apply(&self.values).map_err(|e| Failure::Usage(e.into()))?;
        for k in FEATURE_KEYS {
            if self.values.contains_key(k) {
                self.used.insert(k.to_string());
            }
        }
        Ok(params)
    }

    /// Seed precedence: config file, then the flag, then `TDIF_SEED`, then 0.
    pub fn seed(&mut self, flag: Option<u64>) -> Result<u64, Failure> {
        let mut seed = flag;
        if seed.is_none() {
            if let Ok(v) = std::env::var(SEED_ENV) {
                seed = Some(
                    v.trim()
                        .parse()
                        .map_err(|_| Failure::Usage(anyhow!("{SEED_ENV}: cannot parse {v:?}")))?,
                );
            }
        }
        let mut seed = seed.unwrap_or(0);
        self.apply("seed", &mut seed)?;
        Ok(seed)
    }

    pub fn warn_unused(&self) {
        for k in self.values.keys().filter(|k| !self.used.contains(*k)) {
            log::warn!("config key {k} is not used by this command");
        }
    }
}
