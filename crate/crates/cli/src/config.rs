//! Scenario configuration. One TOML file per run; unknown keys are rejected.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Deserialize;
use shpgr_core::dynamics::PotentialField;
use shpgr_core::geometry::{Chart, MetricField, SpacetimePoint, Vec4};
use shpgr_core::transport::TransportMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Geodesic,
    Transport,
    Holonomy,
    SpinVerify,
    Induce,
    Evolve,
    Epr,
    Cover,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Geodesic => "geodesic",
            Experiment::Transport => "transport",
            Experiment::Holonomy => "holonomy",
            Experiment::SpinVerify => "spin-verify",
            Experiment::Induce => "induce",
            Experiment::Evolve => "evolve",
            Experiment::Epr => "epr",
            Experiment::Cover => "cover",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub metric: Option<MetricConfig>,
    pub geodesic: Option<GeodesicConfig>,
    pub transport: Option<TransportConfig>,
    pub holonomy: Option<HolonomyConfig>,
    #[serde(rename = "spin-verify")]
    pub spin_verify: Option<SpinVerifyConfig>,
    pub induce: Option<InduceConfig>,
    pub evolve: Option<EvolveConfig>,
    pub epr: Option<EprConfig>,
    pub cover: Option<CoverConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MetricConfig {
    Minkowski {},
    MinkowskiSpherical {},
    Schwarzschild { mass: f64 },
    SphereSlice { radius: f64 },
    SinWarp { amplitude: f64 },
    TanhWarp { amplitude: f64 },
}

impl MetricConfig {
    pub fn build(&self) -> Result<MetricField, String> {
        let m = match *self {
            MetricConfig::Minkowski {} => Ok(MetricField::minkowski()),
            MetricConfig::MinkowskiSpherical {} => Ok(MetricField::minkowski_spherical()),
            MetricConfig::Schwarzschild { mass } => MetricField::schwarzschild(mass),
            MetricConfig::SphereSlice { radius } => MetricField::sphere_slice(radius),
            MetricConfig::SinWarp { amplitude } => MetricField::sin_warp(amplitude),
            MetricConfig::TanhWarp { amplitude } => MetricField::tanh_warp(amplitude),
        };
        m.map_err(|e| format!("metric: {e}"))
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialConfig {
    Zero {},
    Harmonic { kappa: f64, axis: usize, center: f64 },
    /// `V = amplitude (1 − cos x¹)`, periodic in `x¹`.
    Cosine { amplitude: f64 },
}

impl PotentialConfig {
    pub fn build(&self) -> Result<PotentialField, String> {
        match *self {
            PotentialConfig::Zero {} => Ok(PotentialField::Zero),
            PotentialConfig::Harmonic { kappa, axis, center } => {
                if axis > 3 {
                    return Err(format!("potential.axis = {axis}, expected 0..=3"));
                }
                Ok(PotentialField::Harmonic { kappa, axis, center })
            }
            PotentialConfig::Cosine { amplitude } => Ok(PotentialField::custom(move |x| amplitude * (1.0 - x[1].cos()))),
        }
    }
}

fn default_zero_potential() -> PotentialConfig {
    PotentialConfig::Zero {}
}

fn default_mass() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeConfig {
    Reduced,
    Full,
}

impl From<ModeConfig> for TransportMode {
    fn from(m: ModeConfig) -> Self {
        match m {
            ModeConfig::Reduced => TransportMode::Reduced,
            ModeConfig::Full => TransportMode::Full,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicConfig {
    pub position: [f64; 4],
    pub velocity: [f64; 4],
    #[serde(default = "default_mass")]
    pub mass: f64,
    #[serde(default = "default_zero_potential")]
    pub potential: PotentialConfig,
    pub dtau: f64,
    pub steps: usize,
    pub hamiltonian_tolerance: f64,
    /// When set, `max |x¹ − x¹(0)|` must stay below this value.
    pub radius_tolerance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    pub r: f64,
    pub theta: f64,
    #[serde(default)]
    pub phi_start: f64,
    pub phi_end: f64,
    pub a: f64,
    pub c: f64,
    /// Initial `S_r`; defaults to the closed-form initial value.
    pub s_r: Option<f64>,
    pub mode: ModeConfig,
    pub steps: usize,
    pub rows: usize,
    pub tolerance: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolonomyConfig {
    pub r: f64,
    pub theta: f64,
    #[serde(default = "default_turns")]
    pub turns: f64,
    pub mode: ModeConfig,
    pub steps: usize,
    pub tolerance: f64,
}

fn default_turns() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinVerifyConfig {
    pub n: [f64; 4],
    pub momentum: [f64; 4],
    /// Extra random inducing vectors drawn from the run seed.
    #[serde(default)]
    pub random_draws: usize,
    pub tolerance: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InduceConfig {
    pub n: [f64; 4],
    #[serde(default)]
    pub rapidity: f64,
    #[serde(default = "default_axis")]
    pub boost_direction: [f64; 3],
    #[serde(default)]
    pub angle: f64,
    #[serde(default = "default_axis")]
    pub rotation_axis: [f64; 3],
    pub tolerance: f64,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverConfig {
    ConjugateGradient,
    DenseLu,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketConfig {
    pub center: f64,
    pub width: f64,
    pub k_x: f64,
    pub k_t: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    pub n_t: usize,
    pub n_x: usize,
    pub t_length: f64,
    pub x_length: f64,
    #[serde(default)]
    pub t_origin: f64,
    #[serde(default)]
    pub x_origin: f64,
    #[serde(default = "default_mass")]
    pub mass: f64,
    #[serde(default = "default_zero_potential")]
    pub potential: PotentialConfig,
    pub packet: PacketConfig,
    pub dtau: f64,
    pub steps: usize,
    #[serde(default = "default_solver")]
    pub solver: SolverConfig,
    pub norm_tolerance: f64,
    pub hermiticity_tolerance: f64,
}

fn default_solver() -> SolverConfig {
    SolverConfig::ConjugateGradient
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LegsConfig {
    Geodesic { velocity_1: [f64; 4], velocity_2: [f64; 4], length: f64 },
    /// Counter-rotating circular geodesics in the equatorial plane of Schwarzschild.
    Circular { sweep: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EprConfig {
    pub formation: [f64; 4],
    pub n: [f64; 4],
    pub legs: LegsConfig,
    pub steps: usize,
    /// Analyzer angles for particle 2 in the x–z plane; particle 1 stays at angle 0.
    pub angles: Vec<f64>,
    /// CHSH settings `[a, a′, b, b′]` in the x–z plane.
    pub chsh: [f64; 4],
    pub samples: usize,
    pub sigma_limit: f64,
    pub chsh_tolerance: f64,
    /// Tolerance for `E(a, a) = −cos α` on circular legs.
    #[serde(default = "default_holonomy_tol")]
    pub holonomy_tolerance: f64,
}

fn default_holonomy_tol() -> f64 {
    1e-6
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub point: [f64; 4],
    pub n: [f64; 4],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    #[serde(default)]
    pub periodic: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverConfig {
    pub seeds: Vec<SeedConfig>,
    pub base: [f64; 4],
    pub axis_a: AxisConfig,
    pub axis_b: AxisConfig,
    pub resolution: f64,
    pub fan_count: usize,
    pub fan_plane: [usize; 2],
    pub speed: f64,
    pub length: f64,
    pub steps: usize,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn load(path: &Path) -> Result<(ScenarioConfig, String), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let cfg: ScenarioConfig = toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    Ok((cfg, text))
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError(format!("{name} must be positive and finite, got {v}")))
    }
}

fn nonzero(name: &str, v: usize) -> Result<(), ConfigError> {
    if v == 0 {
        Err(ConfigError(format!("{name} must be ≥ 1")))
    } else {
        Ok(())
    }
}

fn in_domain(name: &str, metric: &MetricField, coords: [f64; 4]) -> Result<(), ConfigError> {
    let x = SpacetimePoint::new(metric.chart(), Vec4::from(coords));
    metric.check_domain(&x).map_err(|e| ConfigError(format!("{name}: {e}")))
}

fn spherical_circle(metric: &MetricField, r: f64, theta: f64) -> Result<(), ConfigError> {
    if metric.chart() != Chart::Spherical {
        return Err(ConfigError("this experiment needs a metric in the spherical chart".into()));
    }
    in_domain("circle", metric, [0.0, r, theta, 0.0])
}

impl ScenarioConfig {
    pub fn metric(&self) -> Result<MetricField, ConfigError> {
        self.metric
            .as_ref()
            .ok_or_else(|| ConfigError(format!("experiment {} needs a [metric] table", self.experiment.name())))?
            .build()
            .map_err(ConfigError)
    }

    /// Checks that exactly the matching parameter table is present and that
    /// physical parameters respect the chart-domain guards.
    pub fn validate(&self, subcommand: Experiment) -> Result<(), ConfigError> {
        if self.experiment != subcommand {
            return Err(ConfigError(format!(
                "config declares experiment = \"{}\" but subcommand is {}",
                self.experiment.name(),
                subcommand.name()
            )));
        }
        let present = [
            (Experiment::Geodesic, self.geodesic.is_some()),
            (Experiment::Transport, self.transport.is_some()),
            (Experiment::Holonomy, self.holonomy.is_some()),
            (Experiment::SpinVerify, self.spin_verify.is_some()),
            (Experiment::Induce, self.induce.is_some()),
            (Experiment::Evolve, self.evolve.is_some()),
            (Experiment::Epr, self.epr.is_some()),
            (Experiment::Cover, self.cover.is_some()),
        ];
        for (e, p) in present {
            if p != (e == self.experiment) {
                let why = if p { "unexpected" } else { "missing" };
                return Err(ConfigError(format!("{why} [{}] table for experiment {}", e.name(), self.experiment.name())));
            }
        }
        match self.experiment {
            Experiment::Geodesic => {
                let g = self.geodesic.as_ref().unwrap();
                let m = self.metric()?;
                in_domain("geodesic.position", &m, g.position)?;
                positive("geodesic.dtau", g.dtau)?;
                positive("geodesic.mass", g.mass)?;
                positive("geodesic.hamiltonian_tolerance", g.hamiltonian_tolerance)?;
                g.potential.build().map_err(ConfigError)?;
                nonzero("geodesic.steps", g.steps)
            }
            Experiment::Transport => {
                let t = self.transport.as_ref().unwrap();
                spherical_circle(&self.metric()?, t.r, t.theta)?;
                positive("transport.tolerance", t.tolerance)?;
                nonzero("transport.steps", t.steps)?;
                nonzero("transport.rows", t.rows)
            }
            Experiment::Holonomy => {
                let h = self.holonomy.as_ref().unwrap();
                spherical_circle(&self.metric()?, h.r, h.theta)?;
                positive("holonomy.turns", h.turns)?;
                positive("holonomy.tolerance", h.tolerance)?;
                nonzero("holonomy.steps", h.steps)
            }
            Experiment::SpinVerify => positive("spin-verify.tolerance", self.spin_verify.as_ref().unwrap().tolerance),
            Experiment::Induce => positive("induce.tolerance", self.induce.as_ref().unwrap().tolerance),
            Experiment::Evolve => {
                let e = self.evolve.as_ref().unwrap();
                let m = self.metric()?;
                if m.chart() != Chart::Cartesian {
                    return Err(ConfigError("evolve needs a metric in the Cartesian chart".into()));
                }
                positive("evolve.t_length", e.t_length)?;
                positive("evolve.x_length", e.x_length)?;
                positive("evolve.dtau", e.dtau)?;
                positive("evolve.mass", e.mass)?;
                positive("evolve.packet.width", e.packet.width)?;
                positive("evolve.norm_tolerance", e.norm_tolerance)?;
                positive("evolve.hermiticity_tolerance", e.hermiticity_tolerance)?;
                e.potential.build().map_err(ConfigError)?;
                if e.n_t < 3 || e.n_x < 3 {
                    return Err(ConfigError("evolve.n_t and evolve.n_x must be ≥ 3".into()));
                }
                nonzero("evolve.steps", e.steps)
            }
            Experiment::Epr => {
                let e = self.epr.as_ref().unwrap();
                let m = self.metric()?;
                in_domain("epr.formation", &m, e.formation)?;
                nonzero("epr.steps", e.steps)?;
                nonzero("epr.samples", e.samples)?;
                positive("epr.sigma_limit", e.sigma_limit)?;
                positive("epr.chsh_tolerance", e.chsh_tolerance)?;
                match e.legs {
                    LegsConfig::Geodesic { length, .. } => positive("epr.legs.length", length),
                    LegsConfig::Circular { sweep } => {
                        if !matches!(self.metric, Some(MetricConfig::Schwarzschild { .. })) {
                            return Err(ConfigError("circular legs need the schwarzschild metric".into()));
                        }
                        if e.formation[2] != std::f64::consts::FRAC_PI_2 {
                            return Err(ConfigError("circular legs need formation θ = π/2".into()));
                        }
                        positive("epr.legs.sweep", sweep)
                    }
                }
            }
            Experiment::Cover => {
                let c = self.cover.as_ref().unwrap();
                let m = self.metric()?;
                if c.seeds.is_empty() {
                    return Err(ConfigError("cover.seeds must not be empty".into()));
                }
                for (i, s) in c.seeds.iter().enumerate() {
                    in_domain(&format!("cover.seeds[{i}].point"), &m, s.point)?;
                }
                for (name, a) in [("cover.axis_a", &c.axis_a), ("cover.axis_b", &c.axis_b)] {
                    if a.index > 3 {
                        return Err(ConfigError(format!("{name}.index must be 0..=3")));
                    }
                    nonzero(&format!("{name}.count"), a.count)?;
                }
                if c.fan_plane.iter().any(|&k| k > 2) || c.fan_plane[0] == c.fan_plane[1] {
                    return Err(ConfigError("cover.fan_plane must name two distinct spatial axes 0..=2".into()));
                }
                positive("cover.resolution", c.resolution)?;
                positive("cover.length", c.length)?;
                nonzero("cover.fan_count", c.fan_count)?;
                nonzero("cover.steps", c.steps)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> std::result::Result<ScenarioConfig, toml::de::Error> {
        toml::from_str(text)
    }

    #[test]
    fn metric_tables_reject_stray_parameters() {
        let err = parse("experiment = \"holonomy\"\n[metric]\nname = \"schwarzschild\"\nmass = 1.0\nradius = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("radius"));
        assert!(parse("experiment = \"holonomy\"\n[metric]\nname = \"minkowski\"\nmass = 1.0\n").is_err());
    }

    #[test]
    fn missing_and_extra_tables_are_rejected() {
        let cfg = parse("experiment = \"induce\"\n").unwrap();
        assert!(cfg.validate(Experiment::Induce).unwrap_err().0.contains("missing [induce]"));
        let cfg = parse(
            "experiment = \"induce\"\n[induce]\nn = [1.0, 0.0, 0.0, 0.0]\ntolerance = 1e-10\n\
             [spin-verify]\nn = [1.0, 0.0, 0.0, 0.0]\nmomentum = [0.0, 0.0, 0.0, 0.0]\ntolerance = 1e-10\n",
        )
        .unwrap();
        assert!(cfg.validate(Experiment::Induce).unwrap_err().0.contains("unexpected [spin-verify]"));
    }

    #[test]
    fn chart_domain_is_checked_at_load() {
        let cfg = parse(
            "experiment = \"geodesic\"\n[metric]\nname = \"schwarzschild\"\nmass = 1.0\n\
             [geodesic]\nposition = [0.0, 6.0, 0.0, 0.0]\nvelocity = [1.0, 0.0, 0.0, 0.0]\n\
             dtau = 0.1\nsteps = 10\nhamiltonian_tolerance = 1e-8\n",
        )
        .unwrap();
        assert!(cfg.validate(Experiment::Geodesic).unwrap_err().0.contains("geodesic.position"));
    }

    #[test]
    fn evolve_needs_a_cartesian_metric() {
        let cfg = parse(
            "experiment = \"evolve\"\n[metric]\nname = \"minkowski-spherical\"\n[evolve]\nn_t = 8\nn_x = 8\n\
             t_length = 1.0\nx_length = 1.0\npacket = { center = 0.5, width = 0.1, k_x = 0.0, k_t = 0.0 }\n\
             dtau = 0.01\nsteps = 1\nnorm_tolerance = 1e-10\nhermiticity_tolerance = 1e-10\n",
        )
        .unwrap();
        assert!(cfg.validate(Experiment::Evolve).unwrap_err().0.contains("Cartesian"));
    }

    #[test]
    fn potentials_build() {
        let v = PotentialConfig::Cosine { amplitude: 0.5 }.build().unwrap();
        assert!((v.value(&Vec4::new(0.0, std::f64::consts::PI, 0.0, 0.0)) - 1.0).abs() < 1e-15);
        assert!(PotentialConfig::Harmonic { kappa: 1.0, axis: 4, center: 0.0 }.build().is_err());
    }
}
