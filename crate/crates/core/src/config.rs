//! Declarative TOML run configuration.
//!
//! Syntax errors map to [`Error::ConfigParse`]; structural and semantic
//! problems map to [`Error::SchemaViolation`] with the offending field path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ChainModel;
use crate::robustness::{BoundaryParameter, PerturbationSpec};

/// Version of every CSV and JSON layout written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Spectrum,
    #[default]
    Evolve,
    Sweep,
}

/// A mode reference: an edge label (`"left"`, `"right"`) or a 1-based index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetRef {
    Index(usize),
    Label(String),
}

/// A real number or a `[re, im]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexValue {
    Real(f64),
    Pair([f64; 2]),
}

impl ComplexValue {
    pub fn to_c64(self) -> crate::C64 {
        match self {
            ComplexValue::Real(x) => crate::C64::new(x, 0.0),
            ComplexValue::Pair([re, im]) => crate::C64::new(re, im),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialModeConfig {
    /// `C_j = D_j = 1/√(2N)`
    UniformBoth,
    /// `D_j = 1/√N`, `C_j = 0`
    UniformCreation,
    /// `C_j = 1/√N`, `D_j = 0`
    UniformAnnihilation,
    SingleSite {
        site: usize,
        #[serde(default = "zero")]
        c: ComplexValue,
        #[serde(default = "zero")]
        d: ComplexValue,
    },
    Explicit {
        c: Vec<ComplexValue>,
        d: Vec<ComplexValue>,
    },
}

fn zero() -> ComplexValue {
    ComplexValue::Real(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquareWaveConfig {
    pub amplitudes: Vec<f64>,
    #[serde(default)]
    pub min_dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawConfig {
    PMatrix {
        #[serde(default)]
        control_sites: Option<Vec<usize>>,
        gains: Vec<f64>,
        target: TargetRef,
        #[serde(default)]
        square_wave: Option<SquareWaveConfig>,
    },
    Overlap {
        #[serde(default)]
        control_sites: Option<Vec<usize>>,
        gains: Vec<f64>,
        target: TargetRef,
        #[serde(default)]
        square_wave: Option<SquareWaveConfig>,
    },
    DualTarget {
        #[serde(default)]
        control_sites: Option<Vec<usize>>,
        gains: Vec<f64>,
        keep: TargetRef,
        suppress: TargetRef,
        #[serde(default)]
        square_wave: Option<SquareWaveConfig>,
    },
    Implicit {
        #[serde(default)]
        control_site: Option<usize>,
        gain: f64,
        target: TargetRef,
        theta_slope: f64,
    },
}

impl LawConfig {
    /// Control sites, defaulting to both chain ends (site 1 only for the
    /// implicit law).
    pub fn control_sites(&self, sites: usize) -> Vec<usize> {
        match self {
            LawConfig::PMatrix { control_sites, .. }
            | LawConfig::Overlap { control_sites, .. }
            | LawConfig::DualTarget { control_sites, .. } => {
                control_sites.clone().unwrap_or_else(|| vec![1, sites])
            }
            LawConfig::Implicit { control_site, .. } => vec![control_site.unwrap_or(1)],
        }
    }

    /// The reference whose occupation is this law's fidelity by default.
    pub fn primary_target(&self) -> &TargetRef {
        match self {
            LawConfig::PMatrix { target, .. } | LawConfig::Overlap { target, .. } | LawConfig::Implicit { target, .. } => {
                target
            }
            LawConfig::DualTarget { keep, .. } => keep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub stop_fidelity: Option<f64>,
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    InitialMode,
    ControlScale,
    NeighborLeakage,
    BoundaryParam,
    BulkNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeConfig {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

/// Where sweep runs stop: a fixed time, or `"clean_stop"` for the time at
/// which the unperturbed run reaches `integrator.stop_fidelity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Horizon {
    Time(f64),
    Named(String),
}

impl Default for Horizon {
    fn default() -> Self {
        Horizon::Named("clean_stop".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub name: String,
    pub perturbation: SweepAxis,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub range: Option<RangeConfig>,
    /// Boundary parameter for `boundary_param` sweeps.
    #[serde(default)]
    pub which: Option<BoundaryParameter>,
    /// Pinned site for `initial_mode` sweeps (random per run when absent).
    #[serde(default)]
    pub site: Option<usize>,
    #[serde(default = "default_noise_range")]
    pub noise_range: [f64; 2],
    #[serde(default = "one")]
    pub runs_per_point: usize,
    #[serde(default)]
    pub horizon: Horizon,
    /// Replaces the run's initial mode for this sweep only.
    #[serde(default)]
    pub initial_mode: Option<InitialModeConfig>,
}

fn default_noise_range() -> [f64; 2] {
    [-0.02, 0.02]
}

impl SweepConfig {
    fn values(&self, path: &str) -> Result<Vec<f64>> {
        let values = match (&self.values, &self.range) {
            (Some(v), None) => v.clone(),
            (None, Some(r)) => {
                if !(r.step > 0.0) || !(r.stop >= r.start) || !r.start.is_finite() || !r.stop.is_finite() {
                    return Err(Error::schema(format!("{path}.range"), "need start <= stop and step > 0"));
                }
                let n = ((r.stop - r.start) / r.step + 1e-9).floor() as usize + 1;
                (0..n).map(|i| r.start + i as f64 * r.step).collect()
            }
            (Some(_), Some(_)) => {
                return Err(Error::schema(path, "give either `values` or `range`, not both"));
            }
            (None, None) => return Err(Error::schema(format!("{path}.values"), "sweep axis is missing")),
        };
        if values.is_empty() {
            return Err(Error::schema(format!("{path}.values"), "sweep axis is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema(format!("{path}.values"), "sweep values must be finite"));
        }
        Ok(values)
    }

    /// The perturbation at every axis point.
    pub fn axis(&self, path: &str) -> Result<Vec<PerturbationSpec>> {
        let values = self.values(path)?;
        values
            .iter()
            .map(|&v| {
                Ok(match self.perturbation {
                    SweepAxis::InitialMode => PerturbationSpec::InitialMode {
                        strength: v,
                        site: self.site,
                    },
                    SweepAxis::ControlScale => PerturbationSpec::ControlScale { delta: v },
                    SweepAxis::NeighborLeakage => PerturbationSpec::NeighborLeakage { delta: v },
                    SweepAxis::BoundaryParam => PerturbationSpec::BoundaryParam {
                        delta: v,
                        which: self
                            .which
                            .ok_or_else(|| Error::schema(format!("{path}.which"), "boundary sweeps need `which`"))?,
                    },
                    SweepAxis::BulkNoise => {
                        if v < 1.0 || v.fract() != 0.0 {
                            return Err(Error::schema(
                                format!("{path}.values"),
                                "bulk noise counts must be positive integers",
                            ));
                        }
                        PerturbationSpec::BulkChemicalNoise {
                            count: v as usize,
                            range: (self.noise_range[0], self.noise_range[1]),
                        }
                    }
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Also write SVG line charts next to the CSV files.
    #[serde(default)]
    pub svg: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub kind: RunKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    pub model: ChainModel,
    #[serde(default)]
    pub initial_mode: Option<InitialModeConfig>,
    #[serde(default)]
    pub law: Option<LawConfig>,
    #[serde(default)]
    pub integrator: Option<IntegratorConfig>,
    /// Fidelity targets; defaults to the law's primary target.
    #[serde(default)]
    pub fidelity: Option<Vec<TargetRef>>,
    #[serde(default)]
    pub perturbations: Vec<PerturbationSpec>,
    #[serde(default)]
    pub sweeps: Vec<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Command-line overrides applied on top of a parsed config.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub record_every: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_as(text, None)
    }

    /// Parse and validate, with `kind` replacing the file's run kind when given.
    pub fn parse_as(text: &str, kind: Option<RunKind>) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        let mut cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::schema(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        if let Some(k) = kind {
            cfg.kind = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_path_as(path, None)
    }

    pub fn from_path_as(path: &std::path::Path, kind: Option<RunKind>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigParse(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_as(&text, kind)
    }

    pub fn apply(&mut self, o: Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.workers {
            self.workers = Some(w);
        }
        if let Some(m) = o.record_every {
            match &mut self.integrator {
                Some(i) => i.record_every = m,
                None => return Err(Error::schema("integrator", "--record-every needs an integrator section")),
            }
        }
        self.validate()
    }

    pub fn integrator(&self) -> Result<&IntegratorConfig> {
        self.integrator
            .as_ref()
            .ok_or_else(|| Error::schema("integrator", "section is required for this run kind"))
    }

    pub fn law(&self) -> Result<&LawConfig> {
        self.law
            .as_ref()
            .ok_or_else(|| Error::schema("law", "section is required for this run kind"))
    }

    pub fn initial_mode(&self) -> Result<&InitialModeConfig> {
        self.initial_mode
            .as_ref()
            .ok_or_else(|| Error::schema("initial_mode", "section is required for this run kind"))
    }

    /// Configuration as a JSON value, embedded in every output file.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let model = match &self.model {
            ChainModel::Kitaev(p) => p.validate(),
            ChainModel::Ssh(p) => p.validate(),
        };
        model.map_err(|e| Error::schema("model", e.to_string()))?;
        if self.workers == Some(0) {
            return Err(Error::schema("workers", "must be at least 1"));
        }
        if self.kind == RunKind::Spectrum {
            return Ok(());
        }
        self.initial_mode()?;
        let law = self.law()?;
        let integ = self.integrator()?;
        if !(integ.dt > 0.0) || !integ.dt.is_finite() {
            return Err(Error::schema("integrator.dt", "must be positive"));
        }
        if !(integ.t_end > 0.0) || !integ.t_end.is_finite() {
            return Err(Error::schema("integrator.t_end", "must be positive"));
        }
        if integ.record_every == 0 {
            return Err(Error::schema("integrator.record_every", "must be at least 1"));
        }
        if let Some(s) = integ.stop_fidelity {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::schema("integrator.stop_fidelity", "must be positive"));
            }
        }
        let sites = law.control_sites(self.model.sites());
        let gains = match law {
            LawConfig::PMatrix { gains, .. } | LawConfig::Overlap { gains, .. } | LawConfig::DualTarget { gains, .. } => {
                gains.len()
            }
            LawConfig::Implicit { .. } => 1,
        };
        if sites.len() != gains {
            return Err(Error::schema(
                "law.gains",
                format!("{gains} gains given for {} control sites", sites.len()),
            ));
        }
        for t in self.fidelity.iter().flatten().chain(std::iter::once(law.primary_target())) {
            if let TargetRef::Label(l) = t {
                if l != "left" && l != "right" {
                    return Err(Error::schema("target", format!("unknown edge label `{l}`")));
                }
            }
        }
        if self.fidelity.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::schema("fidelity", "needs at least one target"));
        }
        if self.kind == RunKind::Sweep {
            if self.sweeps.is_empty() {
                return Err(Error::schema("sweeps", "a sweep run needs at least one [[sweeps]] entry"));
            }
            for (i, s) in self.sweeps.iter().enumerate() {
                let path = format!("sweeps[{i}]");
                s.axis(&path)?;
                if s.runs_per_point == 0 {
                    return Err(Error::schema(format!("{path}.runs_per_point"), "must be at least 1"));
                }
                match &s.horizon {
                    Horizon::Time(t) if !(*t > 0.0) => {
                        return Err(Error::schema(format!("{path}.horizon"), "must be positive"));
                    }
                    Horizon::Named(n) if n != "clean_stop" => {
                        return Err(Error::schema(
                            format!("{path}.horizon"),
                            "expected a time or \"clean_stop\"",
                        ));
                    }
                    Horizon::Named(_) if integ.stop_fidelity.is_none() => {
                        return Err(Error::schema(
                            "integrator.stop_fidelity",
                            "a clean_stop horizon needs a stop fidelity",
                        ));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 3
[model]
kind = "kitaev"
sites = 30
hopping = 2.0
pairing = 1.0
chemical_potential = 2.0

[initial_mode]
preset = "uniform_annihilation"

[law]
kind = "p_matrix"
gains = [10.0, 10.0]
target = "right"

[integrator]
dt = 0.005
t_end = 10.0
"#;

    #[test]
    fn parses_minimal_evolve_config() {
        let cfg = RunConfig::parse(BASE).unwrap();
        assert_eq!(cfg.kind, RunKind::Evolve);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.law().unwrap().control_sites(30), vec![1, 30]);
        assert_eq!(cfg.integrator().unwrap().record_every, 1);
        assert_eq!(cfg.law().unwrap().primary_target(), &TargetRef::Label("right".into()));
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::parse(BASE).unwrap();
        let back: RunConfig = serde_json::from_value(cfg.echo()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn syntax_error_is_parse_error() {
        assert!(matches!(RunConfig::parse("seed = = 1"), Err(Error::ConfigParse(_))));
    }

    #[test]
    fn schema_errors_carry_paths() {
        let bad = BASE.replace("dt = 0.005", "dt = \"fast\"");
        match RunConfig::parse(&bad) {
            Err(Error::SchemaViolation { path, .. }) => assert_eq!(path, "integrator.dt"),
            other => panic!("{other:?}"),
        }
        let bad = BASE.replace("dt = 0.005", "dt = -1.0");
        match RunConfig::parse(&bad) {
            Err(Error::SchemaViolation { path, .. }) => assert_eq!(path, "integrator.dt"),
            other => panic!("{other:?}"),
        }
        let bad = BASE.replace("seed = 3", "seed = 3\ncolour = 1");
        assert!(matches!(RunConfig::parse(&bad), Err(Error::SchemaViolation { .. })));
        let bad = BASE.replace("gains = [10.0, 10.0]", "gains = [10.0]");
        assert!(matches!(RunConfig::parse(&bad), Err(Error::SchemaViolation { .. })));
        let bad = BASE.replace("\"right\"", "\"middle\"");
        assert!(matches!(RunConfig::parse(&bad), Err(Error::SchemaViolation { .. })));
    }

    #[test]
    fn spectrum_only_needs_model() {
        let cfg = RunConfig::parse("kind = \"spectrum\"\n[model]\nkind = \"ssh\"\nsites = 21\nhopping = 1.0\ndimerization = 0.3\nchemical_potential = 2.0\n").unwrap();
        assert_eq!(cfg.model.sites(), 21);
        assert!(RunConfig::parse("kind = \"evolve\"\n[model]\nkind = \"ssh\"\nsites = 21\nhopping = 1.0\ndimerization = 0.3\nchemical_potential = 2.0\n").is_err());
    }

    #[test]
    fn sweep_axes() {
        let text = format!(
            "{}\nkind_placeholder\n[[sweeps]]\nname = \"noise\"\nperturbation = \"bulk_noise\"\nrange = {{ start = 1.0, stop = 20.0, step = 1.0 }}\nruns_per_point = 30\nhorizon = 100.0\n",
            BASE
        )
        .replace("seed = 3", "seed = 3\nkind = \"sweep\"")
        .replace("kind_placeholder\n", "");
        let cfg = RunConfig::parse(&text).unwrap();
        let axis = cfg.sweeps[0].axis("sweeps[0]").unwrap();
        assert_eq!(axis.len(), 20);
        assert_eq!(
            axis[19],
            PerturbationSpec::BulkChemicalNoise {
                count: 20,
                range: (-0.02, 0.02)
            }
        );
        let empty = text.replace("range = { start = 1.0, stop = 20.0, step = 1.0 }", "values = []");
        match RunConfig::parse(&empty) {
            Err(Error::SchemaViolation { path, .. }) => assert_eq!(path, "sweeps[0].values"),
            other => panic!("{other:?}"),
        }
        let clean = text.replace("horizon = 100.0\n", "");
        assert!(RunConfig::parse(&clean).is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = RunConfig::parse(BASE).unwrap();
        cfg.apply(Overrides {
            seed: Some(9),
            workers: Some(2),
            record_every: Some(50),
        })
        .unwrap();
        assert_eq!((cfg.seed, cfg.workers, cfg.integrator().unwrap().record_every), (9, Some(2), 50));
        assert!(cfg
            .apply(Overrides {
                record_every: Some(0),
                ..Default::default()
            })
            .is_err());
    }

    #[test]
    fn initial_mode_variants() {
        let t = BASE.replace(
            "preset = \"uniform_annihilation\"",
            "preset = \"single_site\"\nsite = 2\nc = 1.0954451150103321\nd = [0.4472135954999579, 0.0]",
        );
        let cfg = RunConfig::parse(&t).unwrap();
        match cfg.initial_mode().unwrap() {
            InitialModeConfig::SingleSite { site, c, d } => {
                assert_eq!(*site, 2);
                assert_eq!(c.to_c64().re, 1.0954451150103321);
                assert_eq!(d.to_c64().re, 0.4472135954999579);
            }
            other => panic!("{other:?}"),
        }
    }
}
