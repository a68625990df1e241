use std::path::Path;

use nhhmm::sampler::RunConfig;
use nhhmm::PriorConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// The JSON configuration document: sampler fields at the top level plus the
/// prior and the baseline regression lags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FileConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    pub prior: PriorConfig,
    /// Autoregressive lags appended to the pool by `fit`.
    pub ar_lags: usize,
    /// Lags of the baseline linear regression in `replicate`.
    pub lr_lags: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self, width: usize) -> CliResult<()> {
        self.run.validate()?;
        self.prior.validate(width)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

/// Command-line overrides of the sweep schedule.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SweepOverrides {
    /// Total sweeps, burn-in included.
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
}

impl SweepOverrides {
    pub fn apply(&self, run: &mut RunConfig) {
        if let Some(v) = self.sweeps {
            run.sweeps = v;
        }
        if let Some(v) = self.burn_in {
            run.burn_in = v;
        }
        if let Some(v) = self.thin {
            run.thin = v;
        }
        if let Some(v) = self.chains {
            run.n_chains = v;
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
