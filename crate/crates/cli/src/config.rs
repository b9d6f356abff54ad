use std::path::{Path, PathBuf};

use emucal_core::design::PipelineConfig;
use emucal_core::experiments::{MeasurementSet, NoiseLevels, StudyConfig};
use emucal_core::forward::TOY_TRUTH;
use emucal_core::gp::FitOptions;
use emucal_core::mcmc::McmcConfig;
use emucal_core::rng::derive_seed;
use emucal_core::GaussianSummary;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    /// Five-parameter tissue model with 45 outputs.
    #[default]
    Mms,
    /// Two-parameter cubic test function observed at three locations.
    Toy,
}

/// One JSON document drives every subcommand. Each section's own `seed` is
/// overwritten with a value derived from `master_seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub problem: Problem,
    pub design: PipelineConfig,
    pub emulation: EmulationSection,
    pub calibration: CalibrationSection,
    pub mcmc: McmcConfig,
    pub experiments: StudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: PathBuf::from("out"),
            problem: Problem::default(),
            design: PipelineConfig::default(),
            emulation: EmulationSection::default(),
            calibration: CalibrationSection::default(),
            mcmc: McmcConfig::default(),
            experiments: StudyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulationSection {
    /// Directory holding the design CSVs; defaults to the output directory.
    pub ensemble_dir: Option<PathBuf>,
    /// Smallest acceptable held-out R² for any output.
    pub r2_floor: f64,
    /// Tissue emulators are fitted on log parameters and log outputs; the
    /// toy problem ignores the log flags.
    pub fit: FitOptions,
    /// Training points for the toy problem.
    pub toy_training_size: usize,
    /// Held-out points used to score the toy emulators.
    pub toy_validation_size: usize,
}

impl Default for EmulationSection {
    fn default() -> Self {
        Self {
            ensemble_dir: None,
            r2_floor: 0.95,
            fit: FitOptions { log_inputs: true, log_outputs: true, ..FitOptions::default() },
            toy_training_size: 50,
            toy_validation_size: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Emulator bank; defaults to `bank.json` in the output directory.
    pub bank: Option<PathBuf>,
    /// Observation document (`y`, `noise_cov`, `labels`). Without one, a
    /// synthetic observation is generated.
    pub observations: Option<PathBuf>,
    pub synthetic: SyntheticSection,
    pub ensemble_size: usize,
    pub iterations: usize,
    /// Pseudo-dynamics step per parameter. Defaults to 0.5% of each range for
    /// the tissue model and zero for the toy problem.
    pub sigma_theta: Option<Vec<f64>>,
    /// Initial ensemble distribution. Defaults to the moments of the
    /// emulator training inputs (tissue) or N(0, I) (toy).
    pub initial: Option<GaussianSummary>,
    pub record_trajectory: bool,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            bank: None,
            observations: None,
            synthetic: SyntheticSection::default(),
            ensemble_size: 500,
            iterations: 50,
            sigma_theta: None,
            initial: None,
            record_trajectory: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    /// Design point used as the truth; defaults to the first validation point.
    pub truth_id: Option<usize>,
    pub measurement_set: MeasurementSet,
    pub noise: NoiseLevels,
    pub toy_truth: [f64; 2],
    pub toy_noise_sd: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            truth_id: None,
            measurement_set: MeasurementSet::S1S2Apd,
            noise: NoiseLevels::default(),
            toy_truth: TOY_TRUTH,
            toy_noise_sd: 0.05,
        }
    }
}

mod section {
    pub const DESIGN: u64 = 1;
    pub const EMULATION: u64 = 2;
    pub const CALIBRATION: u64 = 3;
    pub const MCMC: u64 = 4;
    pub const STUDY: u64 = 5;
}

impl RunConfig {
    /// Parse a config document. Errors carry the line and column.
    pub fn from_json_str(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Push `master_seed` into every section.
    pub fn resolve_seeds(&mut self) {
        let m = self.master_seed;
        self.design.seed = derive_seed(m, &[section::DESIGN]);
        self.emulation.fit.seed = derive_seed(m, &[section::EMULATION]);
        self.mcmc.seed = derive_seed(m, &[section::MCMC]);
        self.experiments.seed = derive_seed(m, &[section::STUDY]);
    }

    pub fn calibration_seed(&self) -> u64 {
        derive_seed(self.master_seed, &[section::CALIBRATION])
    }

    /// Check that every explicitly referenced input file exists.
    pub fn check_paths(&self) -> Result<(), CliError> {
        let explicit = [
            self.emulation.ensemble_dir.as_ref(),
            self.calibration.bank.as_ref(),
            self.calibration.observations.as_ref(),
        ];
        for p in explicit.into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Config(format!("referenced path {} does not exist", p.display())));
            }
        }
        if !(self.emulation.r2_floor.is_finite() && self.emulation.r2_floor <= 1.0) {
            return Err(CliError::Config(format!("r2_floor must be a finite value ≤ 1, got {}", self.emulation.r2_floor)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded. The output
    /// directory is left out so a run can be replayed elsewhere.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn ensemble_dir(&self) -> PathBuf {
        self.emulation.ensemble_dir.clone().unwrap_or_else(|| self.output_dir.clone())
    }

    pub fn bank_path(&self) -> PathBuf {
        self.calibration.bank.clone().unwrap_or_else(|| self.output_dir.join(crate::files::BANK))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_json_str("{}").unwrap();
        assert_eq!(c.design.initial_size, 350);
        assert_eq!(c.emulation.r2_floor, 0.95);
        assert_eq!(c.calibration.ensemble_size, 500);
        assert_eq!(c.mcmc.n_chains, 10);
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let err = RunConfig::from_json_str("{\n  \"master_seed\": 1,\n  \"emulation\": { \"r2_flor\": 0.9 }\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("r2_flor"), "{msg}");
    }

    #[test]
    fn hash_tracks_content_and_seed() {
        let mut a = RunConfig::default();
        a.resolve_seeds();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.master_seed = 1;
        b.resolve_seeds();
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.design.seed, b.design.seed);
    }
}
