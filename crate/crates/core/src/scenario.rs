//! JSON scenario files and the builtin corpus.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::diffcore::DerivativeEngine;
use crate::dynamics::{FiberMap, FlowMap};
use crate::equivalence::ConfigDiffeo;
use crate::expr::{config_vars, parse, phase_vars, Expr, ExprMap};
use crate::func::{ConstMap, ScalarField, VectorMap};
use crate::nonholonomic::{
    constrained_flow_map, MechanicalLagrangian, NonholonomicCmhSystem, PfaffianDistribution,
};
use crate::reduction::TranslationSymmetry;
use crate::symplectic::{MagneticField, OneFormSection};

pub const SCHEMA_VERSION: u64 = 1;

const BUILTIN: &[(&str, &str)] = &[
    ("harmonic1d", include_str!("../scenarios/harmonic1d.json")),
    ("knife_edge", include_str!("../scenarios/knife_edge.json")),
    ("knife_edge_magnetic", include_str!("../scenarios/knife_edge_magnetic.json")),
    ("lorentz2d", include_str!("../scenarios/lorentz2d.json")),
    ("lorentz3d", include_str!("../scenarios/lorentz3d.json")),
    ("polybeta3d", include_str!("../scenarios/polybeta3d.json")),
];

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioError {
    Io { path: String, message: String },
    Syntax { line: usize, column: usize, message: String },
    Schema { found: String },
    Field { field: String, line: usize, message: String },
    Unknown(String),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Io { path, message } => write!(f, "cannot read {path}: {message}"),
            ScenarioError::Syntax { line, column, message } => write!(f, "line {line}, column {column}: {message}"),
            ScenarioError::Schema { found } => {
                write!(f, "unsupported schema_version {found} (expected {SCHEMA_VERSION})")
            }
            ScenarioError::Field { field, line, message } => write!(f, "{field} (line {line}): {message}"),
            ScenarioError::Unknown(name) => write!(f, "unknown builtin scenario `{name}`"),
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[allow(dead_code)]
    schema_version: u64,
    name: String,
    n: usize,
    #[serde(default)]
    description: String,
    hamiltonian: Option<String>,
    magnetic: Option<RawMagnetic>,
    #[serde(default)]
    constraints: Vec<Vec<String>>,
    lagrangian: Option<RawLagrangian>,
    force: Option<Vec<String>>,
    control: Option<Vec<String>>,
    symmetry: Option<RawSymmetry>,
    #[serde(default)]
    gamma: Vec<RawGamma>,
    #[serde(default)]
    epsilon: Vec<RawEpsilon>,
    phi: Option<RawPhi>,
    #[serde(default)]
    sampling: RawSampling,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum RawMagnetic {
    Constant(Vec<Vec<f64>>),
    Entries(Vec<Vec<String>>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLagrangian {
    mass: Option<Vec<Vec<String>>>,
    potential: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSymmetry {
    cyclic: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGamma {
    name: String,
    components: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEpsilon {
    name: String,
    map: Option<Vec<String>>,
    flow: Option<RawFlow>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlow {
    t: f64,
    steps: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhi {
    map: Vec<String>,
    inverse: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSampling {
    seed: u64,
    count: usize,
    #[serde(rename = "box")]
    bound: f64,
    initial: Option<Vec<f64>>,
}

impl Default for RawSampling {
    fn default() -> Self {
        RawSampling { seed: 42, count: 100, bound: 2.0, initial: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampling {
    pub seed: u64,
    pub count: usize,
    pub bound: f64,
    pub initial: Option<Vec<f64>>,
}

impl Sampling {
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// `count` points of the cube `[-bound, bound]^dim`.
    pub fn points(&self, rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| (0..dim).map(|_| rng.gen_range(-self.bound..=self.bound)).collect()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct NamedOneForm {
    pub name: String,
    pub gamma: OneFormSection,
}

#[derive(Debug, Clone)]
pub enum EpsilonKind {
    Map,
    /// Time-`t` flow of the (distributional) magnetic field.
    Flow { t: f64, steps: usize },
}

#[derive(Debug, Clone)]
pub struct NamedPhaseMap {
    pub name: String,
    pub kind: EpsilonKind,
    pub eps: VectorMap,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub n: usize,
    pub system: NonholonomicCmhSystem,
    pub symmetry: Option<TranslationSymmetry>,
    pub gammas: Vec<NamedOneForm>,
    pub epsilons: Vec<NamedPhaseMap>,
    pub phi: Option<ConfigDiffeo>,
    pub sampling: Sampling,
    /// A force or control map is declared.
    pub forced: bool,
}

impl Scenario {
    pub fn constrained(&self) -> bool {
        self.system.k() > 0
    }

    pub fn with_engine(mut self, eng: DerivativeEngine) -> Self {
        self.system = self.system.with_engine(eng);
        self
    }
}

pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn builtin(name: &str) -> Result<Scenario, ScenarioError> {
    parse_scenario_str(builtin_source(name).ok_or_else(|| ScenarioError::Unknown(name.to_string()))?)
}

/// Reads a scenario file; a bare builtin name is accepted as well.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    match std::fs::read_to_string(path) {
        Ok(src) => parse_scenario_str(&src),
        Err(e) => match path.to_str().and_then(builtin_source) {
            Some(src) if !path.exists() => parse_scenario_str(src),
            _ => Err(ScenarioError::Io { path: path.display().to_string(), message: e.to_string() }),
        },
    }
}

/// 1-based line of the first occurrence of `"key"` in the source.
fn key_line(src: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    src.lines().position(|l| l.contains(&needle)).map_or(1, |i| i + 1)
}

struct Ctx<'a> {
    src: &'a str,
    n: usize,
}

impl Ctx<'_> {
    fn err(&self, field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
        let field = field.into();
        let key = field.split(['.', '[']).next().unwrap_or("").to_string();
        ScenarioError::Field { line: key_line(self.src, &key), field, message: message.into() }
    }

    fn expect_len(&self, field: &str, expected: usize, got: usize) -> Result<(), ScenarioError> {
        if expected == got {
            Ok(())
        } else {
            Err(self.err(field, format!("expected {expected} entries, found {got}")))
        }
    }

    fn exprs(&self, field: &str, srcs: &[String], vars: &[String]) -> Result<Vec<Expr>, ScenarioError> {
        let names: Vec<&str> = vars.iter().map(|s| s.as_str()).collect();
        srcs.iter()
            .enumerate()
            .map(|(i, s)| {
                parse(s, &names).map_err(|e| {
                    self.err(
                        format!("{field}[{i}]"),
                        format!("expression line {}, column {}: {}", e.line, e.column, e.message),
                    )
                })
            })
            .collect()
    }

    fn config_map(&self, field: &str, srcs: &[String]) -> Result<VectorMap, ScenarioError> {
        Ok(VectorMap::new(ExprMap::new(self.n, self.exprs(field, srcs, &config_vars(self.n))?)))
    }

    fn phase_map(&self, field: &str, srcs: &[String]) -> Result<VectorMap, ScenarioError> {
        Ok(VectorMap::new(ExprMap::new(2 * self.n, self.exprs(field, srcs, &phase_vars(self.n))?)))
    }

    fn matrix(&self, field: &str, rows: &[Vec<String>], nrows: usize) -> Result<VectorMap, ScenarioError> {
        self.expect_len(field, nrows, rows.len())?;
        for (i, r) in rows.iter().enumerate() {
            self.expect_len(&format!("{field}[{i}]"), self.n, r.len())?;
        }
        let flat: Vec<String> = rows.concat();
        self.config_map(field, &flat)
    }
}

fn check_finite_on_box(
    ctx: &Ctx,
    field: &str,
    map: &VectorMap,
    sampling: &Sampling,
) -> Result<(), ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed ^ 0x5eed);
    for x in sampling.points(&mut rng, map.in_dim(), 8) {
        if map.eval(&x).iter().any(|v| !v.is_finite()) {
            return Err(ctx.err(field, format!("non-finite value on the sampling box at {x:?}")));
        }
    }
    Ok(())
}

pub fn parse_scenario_str(src: &str) -> Result<Scenario, ScenarioError> {
    let syntax = |e: serde_json::Error| ScenarioError::Syntax { line: e.line(), column: e.column(), message: e.to_string() };
    let value: serde_json::Value = serde_json::from_str(src).map_err(syntax)?;
    match value.get("schema_version") {
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(v) => return Err(ScenarioError::Schema { found: v.to_string() }),
        None => return Err(ScenarioError::Schema { found: "(missing)".into() }),
    }
    let raw: RawScenario = serde_json::from_str(src).map_err(syntax)?;
    build(src, raw)
}

fn build(src: &str, raw: RawScenario) -> Result<Scenario, ScenarioError> {
    let n = raw.n;
    let ctx = Ctx { src, n };
    if n == 0 {
        return Err(ctx.err("n", "must be positive"));
    }
    let s = &raw.sampling;
    if !(s.bound > 0.0 && s.bound.is_finite()) {
        return Err(ctx.err("sampling.box", "must be a positive number"));
    }
    if let Some(init) = &s.initial {
        ctx.expect_len("sampling.initial", 2 * n, init.len())?;
    }
    let sampling = Sampling { seed: s.seed, count: s.count, bound: s.bound, initial: s.initial.clone() };

    let beta = match &raw.magnetic {
        None => MagneticField::zero(n),
        Some(RawMagnetic::Constant(rows)) => {
            ctx.expect_len("magnetic.constant", n, rows.len())?;
            for (i, r) in rows.iter().enumerate() {
                ctx.expect_len(&format!("magnetic.constant[{i}]"), n, r.len())?;
            }
            let m = DMatrix::from_row_slice(n, n, &rows.concat());
            MagneticField::constant(&m).map_err(|e| ctx.err("magnetic.constant", e.to_string()))?
        }
        Some(RawMagnetic::Entries(rows)) => {
            let map = ctx.matrix("magnetic.entries", rows, n)?;
            check_finite_on_box(&ctx, "magnetic.entries", &map, &sampling)?;
            MagneticField::new(n, map).map_err(|e| ctx.err("magnetic.entries", e.to_string()))?
        }
    };
    if beta.skewness_residual(&vec![0.0; n]).map_err(|e| ctx.err("magnetic", e.to_string()))? > 1e-12 {
        return Err(ctx.err("magnetic", "matrix is not skew-symmetric"));
    }

    let k = raw.constraints.len();
    for (i, row) in raw.constraints.iter().enumerate() {
        ctx.expect_len(&format!("constraints[{i}]"), n, row.len())?;
    }
    let dist = if k == 0 {
        PfaffianDistribution::unconstrained(n)
    } else {
        let map = ctx.config_map("constraints", &raw.constraints.concat())?;
        check_finite_on_box(&ctx, "constraints", &map, &sampling)?;
        PfaffianDistribution::new(n, k, map).map_err(|e| ctx.err("constraints", e.to_string()))?
    };

    let lagrangian = match &raw.lagrangian {
        None => MechanicalLagrangian::free(n),
        Some(l) => {
            let mass = match &l.mass {
                Some(rows) => ctx.matrix("lagrangian.mass", rows, n)?,
                None => MechanicalLagrangian::free(n).mass,
            };
            check_finite_on_box(&ctx, "lagrangian.mass", &mass, &sampling)?;
            let potential = match &l.potential {
                Some(p) => ScalarField(ctx.config_map("lagrangian.potential", std::slice::from_ref(p))?.0),
                None => ScalarField::new(ConstMap::new(n, vec![0.0])),
            };
            MechanicalLagrangian::new(n, mass, potential).map_err(|e| ctx.err("lagrangian", e.to_string()))?
        }
    };

    let fiber = |field: &str, srcs: &Option<Vec<String>>| -> Result<FiberMap, ScenarioError> {
        match srcs {
            None => Ok(FiberMap::zero(n)),
            Some(v) => {
                ctx.expect_len(field, n, v.len())?;
                let map = ctx.phase_map(field, v)?;
                check_finite_on_box(&ctx, field, &map, &sampling)?;
                FiberMap::new(n, map).map_err(|e| ctx.err(field, e.to_string()))
            }
        }
    };
    let force = fiber("force", &raw.force)?;
    let control = fiber("control", &raw.control)?;

    let mut system = NonholonomicCmhSystem::new(lagrangian, dist, beta, force, control)
        .map_err(|e| ctx.err("n", e.to_string()))?;
    if let Some(h) = &raw.hamiltonian {
        let map = ctx.phase_map("hamiltonian", std::slice::from_ref(h))?;
        check_finite_on_box(&ctx, "hamiltonian", &map, &sampling)?;
        system = system.with_hamiltonian(ScalarField(map.0)).map_err(|e| ctx.err("hamiltonian", e.to_string()))?;
    } else if raw.lagrangian.is_none() {
        return Err(ctx.err("hamiltonian", "either `hamiltonian` or `lagrangian` is required"));
    }
    system = system.with_engine(DerivativeEngine::dual());

    let symmetry = match &raw.symmetry {
        None => None,
        Some(sym) => {
            if let Some(bad) = sym.cyclic.iter().find(|&&a| a == 0 || a > n) {
                return Err(ctx.err("symmetry.cyclic", format!("index {bad} outside 1..={n}")));
            }
            Some(TranslationSymmetry::new(n, sym.cyclic.iter().map(|a| a - 1).collect()).expect("validated indices"))
        }
    };

    let mut gammas = Vec::new();
    for (i, g) in raw.gamma.iter().enumerate() {
        let field = format!("gamma[{i}].components");
        ctx.expect_len(&field, n, g.components.len())?;
        let map = ctx.config_map(&field, &g.components)?;
        check_finite_on_box(&ctx, &field, &map, &sampling)?;
        gammas.push(NamedOneForm {
            name: g.name.clone(),
            gamma: OneFormSection::new(map).map_err(|e| ctx.err(field, e.to_string()))?,
        });
    }

    let mut epsilons = Vec::new();
    for (i, e) in raw.epsilon.iter().enumerate() {
        let item = match (&e.map, &e.flow) {
            (Some(m), None) => {
                let field = format!("epsilon[{i}].map");
                ctx.expect_len(&field, 2 * n, m.len())?;
                let map = ctx.phase_map(&field, m)?;
                check_finite_on_box(&ctx, &field, &map, &sampling)?;
                NamedPhaseMap { name: e.name.clone(), kind: EpsilonKind::Map, eps: map }
            }
            (None, Some(f)) => {
                if !(f.t.is_finite() && f.steps > 0) {
                    return Err(ctx.err(format!("epsilon[{i}].flow"), "needs finite `t` and positive `steps`"));
                }
                let eps = if k == 0 {
                    VectorMap::new(FlowMap::new(system.sys.magnetic_field(), f.t, f.steps))
                } else {
                    constrained_flow_map(&system, f.t, f.steps)
                };
                NamedPhaseMap { name: e.name.clone(), kind: EpsilonKind::Flow { t: f.t, steps: f.steps }, eps }
            }
            _ => return Err(ctx.err(format!("epsilon[{i}]"), "exactly one of `map` or `flow` is required")),
        };
        epsilons.push(item);
    }

    let phi = match &raw.phi {
        None => None,
        Some(p) => {
            ctx.expect_len("phi.map", n, p.map.len())?;
            ctx.expect_len("phi.inverse", n, p.inverse.len())?;
            let map = ctx.config_map("phi.map", &p.map)?;
            let inv = ctx.config_map("phi.inverse", &p.inverse)?;
            let diffeo = ConfigDiffeo::new(map, inv).map_err(|e| ctx.err("phi", e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed ^ 0x5eed);
            for q in sampling.points(&mut rng, n, 8) {
                if !(diffeo.inverse_residual(&q) <= 1e-8) {
                    return Err(ctx.err("phi.inverse", format!("not an inverse of phi.map at {q:?}")));
                }
            }
            Some(diffeo)
        }
    };

    Ok(Scenario {
        name: raw.name,
        description: raw.description,
        n,
        system,
        symmetry,
        gammas,
        epsilons,
        phi,
        sampling,
        forced: raw.force.is_some() || raw.control.is_some(),
    })
}
