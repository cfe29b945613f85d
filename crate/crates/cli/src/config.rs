//! Run configuration: one TOML file per experiment.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sbpdiff::sbp::{SbpOrder, SecondDerivConstruction};
use sbpdiff::solver::TimeStepRule;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Also integrate with `α = 0` and write the result as the companion run.
    #[serde(default)]
    pub companion: bool,
    pub grid: GridSection,
    #[serde(default)]
    pub operator: OperatorSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub boundary: BoundarySection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default)]
    pub maps: MapsSection,
    #[serde(default)]
    pub cg: CgSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converge: Option<ConvergeSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "one")]
    pub length: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderName {
    #[default]
    Order2,
    Order4,
}

impl From<OrderName> for SbpOrder {
    fn from(o: OrderName) -> Self {
        match o {
            OrderName::Order2 => SbpOrder::Order2,
            OrderName::Order4 => SbpOrder::Order4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstructionName {
    #[default]
    Wide,
    Narrow,
}

impl From<ConstructionName> for SecondDerivConstruction {
    fn from(c: ConstructionName) -> Self {
        match c {
            ConstructionName::Wide => SecondDerivConstruction::WideFullyCompatible,
            ConstructionName::Narrow => SecondDerivConstruction::NarrowCompatible,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    #[serde(default)]
    pub order: OrderName,
    #[serde(default)]
    pub construction: ConstructionName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaSpec {
    Constant(f64),
    PerNode(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    #[serde(default = "default_kappa_perp")]
    pub kappa_perp: KappaSpec,
    #[serde(default = "one")]
    pub kappa_par: f64,
    #[serde(default = "minus_one")]
    pub alpha: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        Self {
            kappa_perp: default_kappa_perp(),
            kappa_par: 1.0,
            alpha: -1.0,
        }
    }
}

/// Neumann data `κ ∂u/∂x` at each end; both zero is the no-flux condition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    #[serde(default)]
    pub left: f64,
    #[serde(default)]
    pub right: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSpec {
    Fixed { dt: f64 },
    Dx {},
    DxSquaredOver { divisor: f64 },
}

impl From<StepSpec> for TimeStepRule {
    fn from(s: StepSpec) -> Self {
        match s {
            StepSpec::Fixed { dt } => TimeStepRule::Fixed(dt),
            StepSpec::Dx {} => TimeStepRule::Dx,
            StepSpec::DxSquaredOver { divisor } => TimeStepRule::DxSquaredOver(divisor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub final_time: f64,
    pub step: StepSpec,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            final_time: 1.0,
            step: StepSpec::Dx {},
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `exp(−(x − center)² / width)`
    Gaussian {
        #[serde(default = "half")]
        center: f64,
        #[serde(default = "default_width")]
        width: f64,
    },
    F1 {},
    F2 {},
    Uniform {
        value: f64,
    },
    /// `node,value` rows in the map file format.
    Tabulated {
        path: PathBuf,
    },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Gaussian {
            center: 0.5,
            width: 0.02,
        }
    }
}

/// A field-line map: `identity`, `f1`, `f2`, `reflect` (`x ↦ L − x`),
/// `random`, `random(<seed>)` or `tabulated:<path>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MapSpec {
    Identity,
    F1,
    F2,
    Reflect,
    Random(Option<u64>),
    Tabulated(PathBuf),
}

impl FromStr for MapSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if let Some(path) = s.strip_prefix("tabulated:") {
            if path.trim().is_empty() {
                return Err("tabulated map needs a path, e.g. tabulated:maps/fwd.csv".into());
            }
            return Ok(MapSpec::Tabulated(PathBuf::from(path.trim())));
        }
        if let Some(rest) = s.strip_prefix("random(") {
            let seed = rest
                .strip_suffix(')')
                .and_then(|v| v.trim().parse::<u64>().ok())
                .ok_or_else(|| format!("bad random map spec {s:?}, expected random(<seed>)"))?;
            return Ok(MapSpec::Random(Some(seed)));
        }
        match s {
            "identity" => Ok(MapSpec::Identity),
            "f1" => Ok(MapSpec::F1),
            "f2" => Ok(MapSpec::F2),
            "reflect" => Ok(MapSpec::Reflect),
            "random" => Ok(MapSpec::Random(None)),
            other => Err(format!(
                "unknown map {other:?} (expected identity, f1, f2, reflect, random, random(<seed>) or tabulated:<path>)"
            )),
        }
    }
}

impl TryFrom<String> for MapSpec {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl fmt::Display for MapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapSpec::Identity => f.write_str("identity"),
            MapSpec::F1 => f.write_str("f1"),
            MapSpec::F2 => f.write_str("f2"),
            MapSpec::Reflect => f.write_str("reflect"),
            MapSpec::Random(None) => f.write_str("random"),
            MapSpec::Random(Some(s)) => write!(f, "random({s})"),
            MapSpec::Tabulated(p) => write!(f, "tabulated:{}", p.display()),
        }
    }
}

impl From<MapSpec> for String {
    fn from(m: MapSpec) -> Self {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapsSection {
    #[serde(default = "identity_map")]
    pub forward: MapSpec,
    #[serde(default = "identity_map")]
    pub backward: MapSpec,
    /// Seed for `random` maps without an explicit one; the backward map uses `seed + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for MapsSection {
    fn default() -> Self {
        Self {
            forward: MapSpec::Identity,
            backward: MapSpec::Identity,
            seed: None,
        }
    }
}

impl MapsSection {
    /// Seeds actually used by the forward and backward maps (`None` when not random).
    pub fn resolved_seeds(&self) -> (Option<u64>, Option<u64>) {
        let base = self.seed.unwrap_or(0);
        let pick = |spec: &MapSpec, offset: u64| match spec {
            MapSpec::Random(Some(s)) => Some(*s),
            MapSpec::Random(None) => Some(base + offset),
            _ => None,
        };
        (pick(&self.forward, 0), pick(&self.backward, 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgSection {
    #[serde(default = "default_cg_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub jacobi: bool,
}

impl Default for CgSection {
    fn default() -> Self {
        Self {
            tol: default_cg_tol(),
            max_iter: None,
            jacobi: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeSection {
    /// Strictly increasing node counts.
    pub grids: Vec<usize>,
    #[serde(default = "default_converge_time")]
    pub final_time: f64,
    /// `Δt = Δx² / divisor`
    #[serde(default = "default_divisor")]
    pub divisor: f64,
    #[serde(default = "one")]
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Defaults to `{0, T/4, T/2, 3T/4, T}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_times: Option<Vec<f64>>,
    /// Random vectors per sampled definiteness check in `verify`.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            snapshot_times: None,
            samples: default_samples(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn minus_one() -> f64 {
    -1.0
}
fn half() -> f64 {
    0.5
}
fn default_width() -> f64 {
    0.02
}
fn default_kappa_perp() -> KappaSpec {
    KappaSpec::Constant(1e-3)
}
fn identity_map() -> MapSpec {
    MapSpec::Identity
}
fn default_cg_tol() -> f64 {
    1e-10
}
fn default_converge_time() -> f64 {
    sbpdiff::mms::DEFAULT_FINAL_TIME
}
fn default_divisor() -> f64 {
    100.0
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_samples() -> usize {
    100
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serialises to TOML")
    }

    /// SHA-256 of the canonical serialisation, lowercase hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    /// Replaces every random-map seed: forward gets `seed`, backward `seed + 1`.
    pub fn override_seed(&mut self, seed: u64) {
        self.maps.seed = Some(seed);
        for spec in [&mut self.maps.forward, &mut self.maps.backward] {
            if let MapSpec::Random(_) = spec {
                *spec = MapSpec::Random(None);
            }
        }
    }

    /// Makes relative file paths absolute against `base` (the config's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let InitialCondition::Tabulated { path } = &mut self.initial {
            fix(path);
        }
        for spec in [&mut self.maps.forward, &mut self.maps.backward] {
            if let MapSpec::Tabulated(p) = spec {
                fix(p);
            }
        }
    }

    pub fn order(&self) -> SbpOrder {
        self.operator.order.into()
    }

    pub fn construction(&self) -> SecondDerivConstruction {
        self.operator.construction.into()
    }

    pub fn step_rule(&self) -> TimeStepRule {
        self.time.step.into()
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        let t = self.time.final_time;
        self.output
            .snapshot_times
            .clone()
            .unwrap_or_else(|| vec![0.0, 0.25 * t, 0.5 * t, 0.75 * t, t])
    }

    /// Range checks that do not need any operator to be built.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let l = self.grid.length;
        if !(l.is_finite() && l > 0.0) {
            return bad(format!("grid.length must be positive (got {l})"));
        }
        let min = self.order().min_nodes();
        if self.grid.n < min {
            return Err(sbpdiff::Error::GridTooSmall {
                order: self.order().name(),
                min,
                n: self.grid.n,
            }
            .into());
        }
        match &self.physics.kappa_perp {
            KappaSpec::Constant(k) => check_kappa(*k, "physics.kappa_perp")?,
            KappaSpec::PerNode(v) => {
                if v.len() != self.grid.n {
                    return bad(format!(
                        "physics.kappa_perp has {} values for n = {}",
                        v.len(),
                        self.grid.n
                    ));
                }
                for &k in v {
                    check_kappa(k, "physics.kappa_perp")?;
                }
            }
        }
        check_kappa(self.physics.kappa_par, "physics.kappa_par")?;
        if !(self.physics.alpha <= 0.0) {
            return Err(sbpdiff::Error::PositiveAlpha(self.physics.alpha).into());
        }
        for (name, g) in [("left", self.boundary.left), ("right", self.boundary.right)] {
            if !g.is_finite() {
                return bad(format!("boundary.{name} must be finite"));
            }
        }
        let t = self.time.final_time;
        if !(t.is_finite() && t > 0.0) {
            return bad(format!("time.final_time must be positive (got {t})"));
        }
        match self.time.step {
            StepSpec::Fixed { dt } if !(dt.is_finite() && dt > 0.0) => {
                return bad(format!("time.step.dt must be positive (got {dt})"))
            }
            StepSpec::DxSquaredOver { divisor } if !(divisor.is_finite() && divisor > 0.0) => {
                return bad(format!(
                    "time.step.divisor must be positive (got {divisor})"
                ))
            }
            _ => {}
        }
        if let InitialCondition::Gaussian { width, .. } = self.initial {
            if !(width > 0.0) {
                return bad(format!("initial.width must be positive (got {width})"));
            }
        }
        if !(self.cg.tol > 0.0) {
            return bad(format!("cg.tol must be positive (got {})", self.cg.tol));
        }
        if let Some(times) = &self.output.snapshot_times {
            if times.iter().any(|&s| !(0.0..=t).contains(&s)) {
                return bad("output.snapshot_times must lie in [0, time.final_time]".into());
            }
            if times.windows(2).any(|w| w[1] <= w[0]) {
                return bad("output.snapshot_times must be strictly increasing".into());
            }
        }
        if let Some(c) = &self.converge {
            if c.grids.is_empty() {
                return bad("converge.grids is empty".into());
            }
            if c.grids.windows(2).any(|w| w[1] <= w[0]) {
                return bad("converge.grids must be strictly increasing".into());
            }
            if let Some(&n) = c.grids.iter().find(|&&n| n < min) {
                return Err(sbpdiff::Error::GridTooSmall {
                    order: self.order().name(),
                    min,
                    n,
                }
                .into());
            }
            check_kappa(c.kappa, "converge.kappa")?;
            if !(c.final_time > 0.0 && c.divisor > 0.0) {
                return bad("converge.final_time and converge.divisor must be positive".into());
            }
        }
        Ok(())
    }
}

fn check_kappa(k: f64, name: &str) -> Result<()> {
    if k.is_finite() && k >= 0.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{name} must be finite and ≥ 0 (got {k})"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[grid]\nn = 33\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.grid.length, 1.0);
        assert_eq!(c.physics.kappa_perp, KappaSpec::Constant(1e-3));
        assert_eq!(c.physics.alpha, -1.0);
        assert_eq!(c.maps.forward, MapSpec::Identity);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "[grid]\nn = 33\nlenght = 1.0\n",
            "[grid]\nn = 33\n[physics]\nkapa_par = 1.0\n",
            "typo = 1\n[grid]\nn = 33\n",
            "[grid]\nn = 33\n[time]\nfinal_time = 1.0\nstep = { rule = \"dx\", dt = 1.0 }\n",
            "[grid]\nn = 33\n[initial]\nkind = \"f1\"\nvalue = 2.0\n",
            "[grid]\nn = 33\n[maps]\nforward = \"f3\"\n",
        ] {
            assert!(RunConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn map_specs_parse_and_print() {
        for s in [
            "identity",
            "f1",
            "f2",
            "reflect",
            "random",
            "random(17)",
            "tabulated:a/b.csv",
        ] {
            let m: MapSpec = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert!("random(x)".parse::<MapSpec>().is_err());
        assert!("f3".parse::<MapSpec>().is_err());
        assert!("tabulated:".parse::<MapSpec>().is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let text = r#"
name = "rt"
companion = true
[grid]
length = 2.0
n = 41
[operator]
order = "order4"
construction = "narrow"
[physics]
kappa_perp = 0.5
alpha = -0.5
[boundary]
left = 0.25
[time]
final_time = 0.3
step = { rule = "dx_squared_over", divisor = 10.0 }
[initial]
kind = "gaussian"
center = 0.3
[maps]
forward = "random"
backward = "random(9)"
seed = 4
[cg]
max_iter = 50
[converge]
grids = [17, 33]
[output]
snapshot_times = [0.0, 0.3]
"#;
        let c = RunConfig::from_toml_str(text).unwrap();
        let echoed = c.to_toml_string();
        let again = RunConfig::from_toml_str(&echoed).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
    }

    #[test]
    fn per_node_kappa_round_trips() {
        let c = RunConfig::from_toml_str(
            "[grid]\nn = 3\n[operator]\n[physics]\nkappa_perp = [1.0, 2.0, 3.0]\n",
        )
        .unwrap();
        assert_eq!(
            c.physics.kappa_perp,
            KappaSpec::PerNode(vec![1.0, 2.0, 3.0])
        );
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn hash_changes_with_content() {
        let a = RunConfig::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.grid.n = 34;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn seed_override_resolves_both_maps() {
        let mut c = RunConfig::from_toml_str(
            "[grid]\nn = 33\n[maps]\nforward = \"random(5)\"\nbackward = \"random\"\n",
        )
        .unwrap();
        assert_eq!(c.maps.resolved_seeds(), (Some(5), Some(1)));
        c.override_seed(40);
        assert_eq!(c.maps.resolved_seeds(), (Some(40), Some(41)));
    }

    #[test]
    fn validation_messages() {
        let mut c = RunConfig::from_toml_str(MINIMAL).unwrap();
        c.physics.alpha = 1.0;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("stability requires α ≤ 0"), "{msg}");

        let mut c = RunConfig::from_toml_str(MINIMAL).unwrap();
        c.operator.order = OrderName::Order4;
        c.grid.n = 4;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("need n >= 8"), "{msg}");

        let mut c = RunConfig::from_toml_str(MINIMAL).unwrap();
        c.physics.kappa_perp = KappaSpec::Constant(-1.0);
        assert!(c.validate().is_err());

        let mut c = RunConfig::from_toml_str(MINIMAL).unwrap();
        c.physics.kappa_perp = KappaSpec::PerNode(vec![1.0; 5]);
        assert!(c.validate().is_err());

        let mut c = RunConfig::from_toml_str(MINIMAL).unwrap();
        c.output.snapshot_times = Some(vec![0.0, 2.0]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut c =
            RunConfig::from_toml_str("[grid]\nn = 33\n[maps]\nforward = \"tabulated:fwd.csv\"\n")
                .unwrap();
        c.resolve_paths(Path::new("/cfg"));
        assert_eq!(
            c.maps.forward,
            MapSpec::Tabulated(PathBuf::from("/cfg/fwd.csv"))
        );
    }
}
