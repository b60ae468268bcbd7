//! Declarative run configurations, one per CLI subcommand.
//!
//! Configs are TOML documents. Unknown keys are rejected; every optional key
//! has a default, so the resolved config can always be echoed in full.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::control::{
    Congestion, ControlKind, ControlLaw, Penalty, DEFAULT_DELTA_REG, DEFAULT_U_MAX,
};
use crate::error::{Error, Result};
use crate::geometry::{Domain, Point};
use crate::girsanov::{EstimationMode, FixedPointConfig};
use crate::sticky_sde::{InitialLaw, SchemeParams};

/// Reads and parses a TOML config file.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
}

fn default_seed() -> u64 {
    1
}

fn default_u_max() -> f64 {
    DEFAULT_U_MAX
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawName {
    None,
    Constant,
    LqTrack,
    MeanFieldLq,
    Corridor,
}

/// Control law section. Which keys are required depends on `law`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub law: LawName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_boundary: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<Penalty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_reg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<f64>,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            law: LawName::None,
            value: None,
            target: None,
            c_f: None,
            c_boundary: None,
            penalty: None,
            delta_reg: None,
            sign: None,
            u_max: DEFAULT_U_MAX,
        }
    }
}

impl ControlConfig {
    fn require<T: Copy>(v: Option<T>, key: &str, law: &str) -> Result<T> {
        v.ok_or_else(|| Error::Config(format!("missing key control.{key} (required by law {law})")))
    }

    /// Fills in optional defaults so the echoed config is complete.
    pub fn resolved(mut self) -> Self {
        if self.law == LawName::Corridor {
            self.c_f.get_or_insert(1.0);
            self.penalty.get_or_insert(Penalty::H1);
            self.delta_reg.get_or_insert(DEFAULT_DELTA_REG);
            self.sign.get_or_insert(-1.0);
        }
        self
    }

    pub fn to_law(&self) -> Result<ControlLaw> {
        let c = self.resolved();
        let law = match c.law {
            LawName::None => ControlLaw::none(),
            LawName::Constant => ControlLaw::constant(Self::require(c.value, "value", "constant")?),
            LawName::LqTrack => {
                ControlLaw::lq_track(Self::require(c.target, "target", "lq_track")?)
            }
            LawName::MeanFieldLq => ControlLaw::mean_field_lq(),
            LawName::Corridor => {
                let congestion = Congestion {
                    c_f: c.c_f.unwrap_or(1.0),
                    c_boundary: Self::require(c.c_boundary, "c_boundary", "corridor")?,
                    penalty: c.penalty.unwrap_or(Penalty::H1),
                    delta_reg: c.delta_reg.unwrap_or(DEFAULT_DELTA_REG),
                };
                let mut law = ControlLaw::corridor(
                    Self::require(c.target, "target", "corridor")?,
                    congestion,
                );
                if let ControlKind::Corridor { sign, .. } = &mut law.kind {
                    *sign = c.sign.unwrap_or(-1.0);
                }
                law
            }
        }
        .with_u_max(c.u_max);
        law.validate()?;
        Ok(law)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardConfig {
    pub mode: EstimationMode,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub n_particles: usize,
    pub fresh_noise: bool,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            mode: EstimationMode::DirectParticle,
            tolerance: 1e-4,
            max_iterations: 50,
            n_particles: 4000,
            fresh_noise: false,
        }
    }
}

impl PicardConfig {
    pub fn to_fixed_point(&self) -> Result<FixedPointConfig> {
        let fp = FixedPointConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            fresh_noise: self.fresh_noise,
            ..FixedPointConfig::new(self.mode, self.n_particles)
        };
        fp.validate()
            .map_err(|e| Error::Config(format!("picard: {e}")))?;
        Ok(fp)
    }
}

/// Shared validation of a domain, scheme and initial law.
fn check_setup(domain: &Domain, scheme: &SchemeParams, initial: &InitialLaw) -> Result<()> {
    domain.validate()?;
    scheme.validate_for(domain)?;
    initial.validate(domain)?;
    Ok(())
}

fn default_particles() -> usize {
    1000
}

fn default_record_every() -> usize {
    1
}

/// `simulate`: one ensemble with recorded trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub domain: Domain,
    pub scheme: SchemeParams,
    pub initial: InitialLaw,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default = "default_particles")]
    pub n_particles: usize,
    /// Record every k-th grid point of each trajectory.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Fixed-point solve for measure-dependent laws.
    #[serde(default)]
    pub picard: PicardConfig,
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        check_setup(&self.domain, &self.scheme, &self.initial)?;
        self.control.to_law()?;
        self.picard.to_fixed_point()?;
        if self.n_particles == 0 {
            return Err(Error::Config("n_particles must be > 0".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be > 0".into()));
        }
        Ok(())
    }
}

/// `validate-occupation`: boundary occupation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccupationConfig {
    pub seed: u64,
    pub gammas: Vec<f64>,
    pub shapes: Vec<Domain>,
    pub dt: f64,
    pub epsilon: f64,
    pub horizon: f64,
    pub n_particles: usize,
}

impl Default for OccupationConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            gammas: vec![0.1, 0.5, 2.0],
            shapes: vec![
                Domain::Interval { length: 1.0 },
                Domain::Disk {
                    center: [0.0, 0.0],
                    radius: 1.0,
                },
            ],
            dt: 1e-4,
            epsilon: 1e-2,
            horizon: 20.0,
            n_particles: 10_000,
        }
    }
}

impl OccupationConfig {
    pub fn scheme(&self, gamma: f64) -> SchemeParams {
        SchemeParams {
            dt: self.dt,
            epsilon: self.epsilon,
            gamma,
            horizon: self.horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() || self.shapes.is_empty() {
            return Err(Error::Config("gammas and shapes must be non-empty".into()));
        }
        if self.n_particles == 0 {
            return Err(Error::Config("n_particles must be > 0".into()));
        }
        for &g in &self.gammas {
            if !(g > 0.0) {
                return Err(Error::Config(format!("gammas: {g} is not > 0")));
            }
            for shape in &self.shapes {
                shape.validate()?;
                self.scheme(g).validate_for(shape)?;
            }
        }
        Ok(())
    }
}

/// Named shape with unit size, for the `--shape` flag.
pub fn unit_shape(name: &str) -> Result<Domain> {
    match name {
        "interval" => Domain::interval(1.0),
        "disk" => Domain::disk([0.0, 0.0], 1.0),
        "corridor" => Ok(crate::experiments::CorridorConfig::default().domain()?),
        other => Err(Error::Config(format!(
            "unknown shape {other:?} (expected interval, disk or corridor)"
        ))),
    }
}

fn default_lq_particles() -> usize {
    10_000
}

/// `lq`: tracking control toward a fixed target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub domain: Domain,
    pub scheme: SchemeParams,
    pub initial: InitialLaw,
    pub target: Point,
    #[serde(default = "default_lq_particles")]
    pub n_particles: usize,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
}

impl LqConfig {
    pub fn validate(&self) -> Result<()> {
        check_setup(&self.domain, &self.scheme, &self.initial)?;
        ControlLaw::lq_track(self.target)
            .with_u_max(self.u_max)
            .validate()?;
        if self.n_particles < 2 {
            return Err(Error::Config("n_particles must be >= 2".into()));
        }
        Ok(())
    }
}

/// `mflq`: mean-field LQ fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MflqConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub domain: Domain,
    pub scheme: SchemeParams,
    pub initial: InitialLaw,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
}

impl MflqConfig {
    pub fn validate(&self) -> Result<()> {
        check_setup(&self.domain, &self.scheme, &self.initial)?;
        ControlLaw::mean_field_lq()
            .with_u_max(self.u_max)
            .validate()?;
        self.picard.to_fixed_point()?;
        Ok(())
    }
}

fn default_chaos_ns() -> Vec<usize> {
    vec![10, 100, 1000]
}

fn default_reference() -> usize {
    4000
}

fn default_replications() -> usize {
    5
}

/// `chaos`: propagation-of-chaos study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub domain: Domain,
    pub scheme: SchemeParams,
    pub initial: InitialLaw,
    pub control: ControlConfig,
    #[serde(default = "default_chaos_ns")]
    pub ns: Vec<usize>,
    #[serde(default = "default_reference")]
    pub n_reference: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
}

impl ChaosConfig {
    pub fn validate(&self) -> Result<()> {
        check_setup(&self.domain, &self.scheme, &self.initial)?;
        self.control.to_law()?;
        if !self.initial.is_nonatomic() {
            return Err(Error::Config(
                "initial: the chaos study needs a nonatomic law".into(),
            ));
        }
        if self.ns.is_empty() || self.ns.contains(&0) {
            return Err(Error::Config("ns must be non-empty and positive".into()));
        }
        if self.n_reference < 2 || self.replications == 0 {
            return Err(Error::Config(
                "n_reference must be >= 2 and replications >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `check-estimators`: weighted-reference against direct estimates of the
/// coordinate means at the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub domain: Domain,
    pub scheme: SchemeParams,
    pub initial: InitialLaw,
    pub control: ControlConfig,
    #[serde(default = "default_lq_particles")]
    pub n_particles: usize,
    #[serde(default)]
    pub picard: PicardConfig,
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        check_setup(&self.domain, &self.scheme, &self.initial)?;
        self.control.to_law()?;
        self.picard.to_fixed_point()?;
        if self.n_particles < 2 {
            return Err(Error::Config("n_particles must be >= 2".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::CorridorConfig;

    const SIM: &str = r#"
seed = 3
[domain]
shape = "disk"
center = [0.0, 0.0]
radius = 1.0
[scheme]
dt = 1e-3
epsilon = 2e-2
gamma = 0.5
horizon = 0.1
[initial]
kind = "point"
at = [0.2, 0.0]
[control]
law = "lq_track"
target = [0.0, 0.0]
"#;

    #[test]
    fn simulate_config_parses_with_defaults() {
        let c: SimulateConfig = parse(SIM).unwrap();
        c.validate().unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.n_particles, 1000);
        assert_eq!(
            c.control.to_law().unwrap(),
            ControlLaw::lq_track([0.0, 0.0])
        );
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = SIM.replace("seed = 3", "seed = 3\nspeed = 1");
        let err = parse::<SimulateConfig>(&text).unwrap_err();
        assert!(
            matches!(&err, Error::Config(m) if m.contains("speed")),
            "{err}"
        );
    }

    #[test]
    fn missing_required_key_is_reported() {
        let text = SIM.replace("gamma = 0.5\n", "");
        let err = parse::<SimulateConfig>(&text).unwrap_err();
        assert!(
            matches!(&err, Error::Config(m) if m.contains("gamma")),
            "{err}"
        );
        let text = SIM.replace("target = [0.0, 0.0]\n", "");
        let c: SimulateConfig = parse(&text).unwrap();
        let err = c.control.to_law().unwrap_err();
        assert!(
            matches!(&err, Error::Config(m) if m.contains("control.target")),
            "{err}"
        );
    }

    #[test]
    fn corridor_config_defaults_round_trip() {
        let c: CorridorConfig = parse("").unwrap();
        assert_eq!(c, CorridorConfig::default());
        let c: CorridorConfig = parse("penalty = \"h2\"\nrealizations = 10").unwrap();
        assert_eq!(c.penalty, Penalty::H2);
        assert_eq!(c.realizations, 10);
        let text = toml::to_string(&CorridorConfig::default()).unwrap();
        assert_eq!(
            parse::<CorridorConfig>(&text).unwrap(),
            CorridorConfig::default()
        );
    }

    #[test]
    fn corridor_control_defaults() {
        let c: ControlConfig =
            parse("law = \"corridor\"\ntarget = [10.0, 0.0]\nc_boundary = 0.5").unwrap();
        let law = c.to_law().unwrap();
        match law.kind {
            ControlKind::Corridor {
                sign, congestion, ..
            } => {
                assert_eq!(sign, -1.0);
                assert_eq!(congestion.penalty, Penalty::H1);
                assert_eq!(congestion.c_f, 1.0);
            }
            _ => panic!("wrong kind"),
        }
        assert_eq!(c.resolved().delta_reg, Some(DEFAULT_DELTA_REG));
    }

    #[test]
    fn occupation_defaults_validate() {
        let c: OccupationConfig = parse("").unwrap();
        c.validate().unwrap();
        let c: OccupationConfig = parse("gammas = [0.0]").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(unit_shape("square").is_err());
    }
}
