//! Sweep configuration file: a flat, versioned key-value (TOML) document.
//! Command-line flags override file values; unknown keys are rejected.

use serde::{Deserialize, Serialize};

use rcm_core::experiments::{SweepConfig, SweepQuantity};
use rcm_core::lattice_env::DistributionSpec;
use rcm_core::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub version: u32,
    /// `conductance`, `spectral`, `diffusion:i,j`, or `potential`.
    pub quantity: String,
    pub d: usize,
    pub n_list: Vec<usize>,
    /// Distribution in flag syntax, e.g. `uniform-elliptic:2`.
    pub dist: String,
    /// Killing potential law, required for `potential`.
    pub pot_dist: Option<String>,
    pub samples: usize,
    pub master_seed: u64,
    pub tol: f64,
    pub output_dir: Option<String>,
}

impl SweepFile {
    pub fn parse(body: &str) -> Result<Self> {
        let file: SweepFile =
            toml::from_str(body).map_err(|e| Error::format(format!("config: {e}")))?;
        if file.version != CONFIG_VERSION {
            return Err(Error::format(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                file.version
            )));
        }
        Ok(file)
    }

    pub fn serialize(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format(format!("config: {e}")))
    }

    pub fn to_sweep_config(&self) -> Result<SweepConfig> {
        let config = SweepConfig {
            quantity: parse_quantity(&self.quantity)?,
            d: self.d,
            n_list: self.n_list.clone(),
            dist: parse_dist(&self.dist)?,
            pot_dist: self.pot_dist.as_deref().map(parse_dist).transpose()?,
            samples: self.samples,
            master_seed: self.master_seed,
            tol: self.tol,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Parse `kind:args` distribution syntax:
/// `constant:c`, `uniform-elliptic:kappa`, `two-point:p,lo,hi`,
/// `power-low-tail:gamma,kappa`.
pub fn parse_dist(s: &str) -> Result<DistributionSpec> {
    let (kind, args) = s
        .split_once(':')
        .ok_or_else(|| Error::parameter(format!("distribution '{s}' must be kind:args")))?;
    let nums: Vec<f64> = args
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::parameter(format!("bad number '{p}' in distribution '{s}'")))
        })
        .collect::<Result<_>>()?;
    let need = |k: usize| -> Result<()> {
        if nums.len() != k {
            return Err(Error::parameter(format!(
                "distribution '{kind}' takes {k} parameter(s), got {}",
                nums.len()
            )));
        }
        Ok(())
    };
    match kind {
        "constant" => {
            need(1)?;
            Ok(DistributionSpec::Constant { c: nums[0] })
        }
        "uniform-elliptic" => {
            need(1)?;
            Ok(DistributionSpec::UniformElliptic { kappa: nums[0] })
        }
        "two-point" => {
            need(3)?;
            Ok(DistributionSpec::TwoPoint { p: nums[0], lo: nums[1], hi: nums[2] })
        }
        "power-low-tail" => {
            need(2)?;
            Ok(DistributionSpec::PowerLowTail { gamma: nums[0], kappa: nums[1] })
        }
        other => Err(Error::parameter(format!("unknown distribution kind '{other}'"))),
    }
}

pub fn parse_quantity(s: &str) -> Result<SweepQuantity> {
    match s {
        "conductance" | "effective_conductance" => Ok(SweepQuantity::EffectiveConductance),
        "spectral" | "spectral_statistic" => Ok(SweepQuantity::SpectralStatistic),
        "potential" | "potential_statistic" => Ok(SweepQuantity::PotentialStatistic),
        other => {
            if let Some(rest) = other.strip_prefix("diffusion:") {
                let (i, j) = rest
                    .split_once(',')
                    .ok_or_else(|| Error::parameter("diffusion quantity is diffusion:i,j"))?;
                let i = i.trim().parse().map_err(|_| Error::parameter("bad diffusion index"))?;
                let j = j.trim().parse().map_err(|_| Error::parameter("bad diffusion index"))?;
                Ok(SweepQuantity::DiffusionEntry { i, j })
            } else if other == "diffusion" {
                Ok(SweepQuantity::DiffusionEntry { i: 0, j: 0 })
            } else {
                Err(Error::parameter(format!("unknown quantity '{other}'")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
version = 1
quantity = "conductance"
d = 3
n_list = [4, 8]
dist = "two-point:0.5,0.5,2"
samples = 10
master_seed = 7
tol = 1e-10
"#;

    #[test]
    fn round_trips() {
        let file = SweepFile::parse(SAMPLE).unwrap();
        let body = file.serialize().unwrap();
        let again = SweepFile::parse(&body).unwrap();
        assert_eq!(file, again);
        assert!(file.to_sweep_config().is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        let body = format!("{SAMPLE}\nbogus_key = 3\n");
        assert!(SweepFile::parse(&body).is_err());
    }

    #[test]
    fn version_checked() {
        let body = SAMPLE.replace("version = 1", "version = 2");
        assert!(SweepFile::parse(&body).is_err());
    }

    #[test]
    fn dist_syntax() {
        assert_eq!(
            parse_dist("constant:1").unwrap(),
            DistributionSpec::Constant { c: 1.0 }
        );
        assert_eq!(
            parse_dist("uniform-elliptic:2").unwrap(),
            DistributionSpec::UniformElliptic { kappa: 2.0 }
        );
        assert_eq!(
            parse_dist("two-point:0.5,0.5,2").unwrap(),
            DistributionSpec::TwoPoint { p: 0.5, lo: 0.5, hi: 2.0 }
        );
        assert_eq!(
            parse_dist("power-low-tail:0.8,1").unwrap(),
            DistributionSpec::PowerLowTail { gamma: 0.8, kappa: 1.0 }
        );
        assert!(parse_dist("gaussian:1").is_err());
        assert!(parse_dist("constant").is_err());
    }

    #[test]
    fn quantity_syntax() {
        assert_eq!(parse_quantity("conductance").unwrap(), SweepQuantity::EffectiveConductance);
        assert_eq!(
            parse_quantity("diffusion:1,0").unwrap(),
            SweepQuantity::DiffusionEntry { i: 1, j: 0 }
        );
        assert!(parse_quantity("entropy").is_err());
    }
}
