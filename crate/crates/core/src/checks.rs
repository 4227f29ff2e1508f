//! Check suites over a scenario, reports, and trajectory export.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffcore::DerivMode;
use crate::dynamics::{
    canonical_defining_residual, decomposition_residual, integrate, magnetic_defining_residual,
    magnetic_equation_residual, magnetic_vf, Method,
};
use crate::equivalence::{
    cmh2_residual, lift_functoriality_residual, lift_symplectic_residual, magnetic_correspondence_residual,
    solution_transport_check, vanishing_correspondence_residual, SystemPair, TransportSource,
};
use crate::error::{Error, Result};
use crate::hamilton_jacobi::{hj1_residual, hj2_residuals};
use crate::nonholonomic::{
    bracket_generating_check, constraint_norm, dist_decomposition_residual, distributional_vf, frame_at,
    hj1_dist_residual, hj2_dist_residuals, integrate_constrained, lemma63_check, multiplier_oracle_vf, project_to_m,
};
use crate::reduction::{
    hj2_reduction_correspondence, invariance_residual, lift_independence_residual, pullback_form_residual,
    reduced_decomposition_residual, reduced_frame_at, reduced_hj1_residual, reduced_magnetic_vanishing_residual,
    relatedness_residual, Relatedness,
};
use crate::scenario::{EpsilonKind, NamedOneForm, NamedPhaseMap, Scenario};
use crate::symplectic::lambda_pullback_residuals;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Lemma34,
    Hj1,
    Hj2,
    Dist,
    Reduced,
    Equivalence,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 7] = ["lemma34", "hj1", "hj2", "dist", "reduced", "equivalence", "all"];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemma34 => "lemma34",
            Suite::Hj1 => "hj1",
            Suite::Hj2 => "hj2",
            Suite::Dist => "dist",
            Suite::Reduced => "reduced",
            Suite::Equivalence => "equivalence",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lemma34" => Suite::Lemma34,
            "hj1" => Suite::Hj1,
            "hj2" => Suite::Hj2,
            "dist" => Suite::Dist,
            "reduced" => Suite::Reduced,
            "equivalence" => Suite::Equivalence,
            "all" => Suite::All,
            other => return Err(Error::Invalid(format!("unknown suite `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Flagged,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub id: String,
    pub anchor: String,
    pub max_residual: Option<f64>,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub flags: Vec<String>,
    pub samples: usize,
    #[serde(skip)]
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub scenario: String,
    pub suite: Suite,
    pub seed: u64,
    pub engine: String,
    pub records: Vec<CheckRecord>,
}

#[derive(Serialize)]
struct Timing<'a> {
    id: &'a str,
    wall_ms: f64,
}

impl Report {
    pub fn failed(&self) -> bool {
        self.records.iter().any(|r| r.verdict == Verdict::Fail)
    }

    pub fn count(&self, v: Verdict) -> usize {
        self.records.iter().filter(|r| r.verdict == v).count()
    }

    /// Deterministic part of the report.
    pub fn body_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Body plus per-check wall times.
    pub fn full_json(&self) -> String {
        let timing: Vec<Timing> = self.records.iter().map(|r| Timing { id: &r.id, wall_ms: r.wall_ms }).collect();
        let value = serde_json::json!({ "body": self, "timing": timing });
        serde_json::to_string_pretty(&value).expect("report serializes")
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario {} suite {} seed {} engine {}", self.scenario, self.suite.name(), self.seed, self.engine);
        for r in &self.records {
            let verdict = match r.verdict {
                Verdict::Pass => "PASS",
                Verdict::Fail => "FAIL",
                Verdict::Flagged => "FLAG",
                Verdict::Skipped => "SKIP",
            };
            let res = r.max_residual.map_or("-".to_string(), |v| format!("{v:.3e}"));
            let _ = write!(out, "{verdict:<5}{:<52} max {res:<10} tol {:.0e} n {}", r.id, r.tolerance, r.samples);
            if !r.flags.is_empty() {
                let _ = write!(out, "  [{}]", r.flags.join("; "));
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "{} pass, {} fail, {} flagged, {} skipped",
            self.count(Verdict::Pass),
            self.count(Verdict::Fail),
            self.count(Verdict::Flagged),
            self.count(Verdict::Skipped)
        );
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub seed: u64,
    /// Replaces every default tolerance when set.
    pub tol: Option<f64>,
}

struct Outcome {
    residual: f64,
    flags: Vec<String>,
    samples: usize,
}

impl Outcome {
    fn new(residual: f64, samples: usize) -> Self {
        Outcome { residual, flags: Vec::new(), samples }
    }

    fn flag_if(mut self, cond: bool, msg: impl Into<String>) -> Self {
        if cond {
            self.flags.push(msg.into());
        }
        self
    }
}

struct Runner<'a> {
    scn: &'a Scenario,
    opts: CheckOptions,
    records: Vec<CheckRecord>,
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

impl<'a> Runner<'a> {
    fn rng(&self, id: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.opts.seed ^ fnv(id))
    }

    fn run(&mut self, id: String, anchor: &str, tol: f64, body: impl FnOnce(&Self, &mut ChaCha8Rng) -> Result<Outcome>) {
        let tol = self.opts.tol.unwrap_or(tol);
        let mut rng = self.rng(&id);
        let start = Instant::now();
        let outcome = body(self, &mut rng);
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let rec = match outcome {
            Ok(o) => {
                let verdict = if !o.flags.is_empty() {
                    Verdict::Flagged
                } else if o.residual <= tol {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                };
                CheckRecord {
                    id,
                    anchor: anchor.into(),
                    max_residual: o.residual.is_finite().then_some(o.residual),
                    tolerance: tol,
                    verdict,
                    flags: o.flags,
                    samples: o.samples,
                    wall_ms,
                }
            }
            Err(e) => CheckRecord {
                id,
                anchor: anchor.into(),
                max_residual: None,
                tolerance: tol,
                verdict: Verdict::Fail,
                flags: vec![format!("error: {e}")],
                samples: 0,
                wall_ms,
            },
        };
        self.records.push(rec);
    }

    fn skip(&mut self, id: &str, anchor: &str, reason: &str) {
        self.records.push(CheckRecord {
            id: id.into(),
            anchor: anchor.into(),
            max_residual: None,
            tolerance: self.opts.tol.unwrap_or(0.0),
            verdict: Verdict::Skipped,
            flags: vec![reason.into()],
            samples: 0,
            wall_ms: 0.0,
        });
    }

    fn n(&self) -> usize {
        self.scn.n
    }

    fn count(&self) -> usize {
        self.scn.sampling.count
    }

    fn phase_points(&self, rng: &mut ChaCha8Rng, count: usize) -> Result<Vec<Vec<f64>>> {
        self.scn
            .sampling
            .points(rng, 2 * self.n(), count)
            .into_iter()
            .map(|z| if self.scn.constrained() { project_to_m(&self.scn.system, &z) } else { Ok(z) })
            .collect()
    }

    fn config_points(&self, rng: &mut ChaCha8Rng, count: usize) -> Vec<Vec<f64>> {
        self.scn.sampling.points(rng, self.n(), count)
    }
}

fn max_over<T>(items: &[T], f: impl Fn(&T) -> Result<f64>) -> Result<f64> {
    items.iter().try_fold(0.0_f64, |m, x| Ok(m.max(f(x)?)))
}

const SOLUTION_TOL: f64 = 1e-7;
const FLOW_TOL: f64 = 1e-5;
const AGREEMENT_TOL: f64 = 1e-6;
const HYPOTHESIS_TOL: f64 = 1e-8;
/// Each sample of an integrated constrained flow costs dozens of trajectories.
const CONSTRAINED_FLOW_SAMPLES: usize = 20;

pub fn run_checks(scn: &Scenario, suite: Suite, opts: CheckOptions) -> Report {
    let mut r = Runner { scn, opts, records: Vec::new() };
    let all = suite == Suite::All;
    if all || suite == Suite::Lemma34 {
        lemma34_suite(&mut r);
    }
    if all || suite == Suite::Hj1 {
        hj1_suite(&mut r);
    }
    if all || suite == Suite::Hj2 {
        hj2_suite(&mut r);
    }
    if all || suite == Suite::Dist {
        dist_suite(&mut r);
    }
    if all || suite == Suite::Reduced {
        reduced_suite(&mut r);
    }
    if all || suite == Suite::Equivalence {
        equivalence_suite(&mut r);
    }
    Report {
        scenario: scn.name.clone(),
        suite,
        seed: opts.seed,
        engine: match scn.system.engine().mode {
            DerivMode::ForwardDual => "dual".into(),
            DerivMode::CentralDifference => "fd".into(),
        },
        records: r.records,
    }
}

fn lemma34_suite(r: &mut Runner) {
    let count = r.count();
    r.run("lemma34.field-skew".into(), "magnetic field is a two-form", 1e-12, |r, rng| {
        let qs = r.config_points(rng, count);
        Ok(Outcome::new(max_over(&qs, |q| r.scn.system.sys.beta.skewness_residual(q))?, qs.len()))
    });
    r.run("lemma34.field-closed".into(), "magnetic field is closed", 1e-10, |r, rng| {
        let qs = r.config_points(rng, count);
        let eng = r.scn.system.engine();
        Ok(Outcome::new(max_over(&qs, |q| r.scn.system.sys.beta.closedness_residual(q, eng))?, qs.len()))
    });
    r.run("lemma34.canonical-defining".into(), "canonical Hamiltonian field equation", 1e-10, |r, rng| {
        let zs = r.scn.sampling.points(rng, 2 * r.n(), count);
        let sys = &r.scn.system.sys;
        Ok(Outcome::new(max_over(&zs, |z| canonical_defining_residual(&sys.h, z, &sys.engine))?, zs.len()))
    });
    r.run("lemma34.magnetic-defining".into(), "magnetic Hamiltonian field equation", 1e-10, |r, rng| {
        let zs = r.scn.sampling.points(rng, 2 * r.n(), count);
        let sys = &r.scn.system.sys;
        Ok(Outcome::new(max_over(&zs, |z| magnetic_defining_residual(&sys.h, &sys.beta, z, &sys.engine))?, zs.len()))
    });
    r.run("lemma34.magnetic-equation".into(), "magnetic equation for the deviation field", 1e-10, |r, rng| {
        let zs = r.scn.sampling.points(rng, 2 * r.n(), count);
        let sys = &r.scn.system.sys;
        Ok(Outcome::new(max_over(&zs, |z| magnetic_equation_residual(&sys.h, &sys.beta, z, &sys.engine))?, zs.len()))
    });
    r.run("lemma34.decomposition".into(), "controlled field decomposition", 1e-10, |r, rng| {
        let zs = r.scn.sampling.points(rng, 2 * r.n(), count);
        Ok(Outcome::new(max_over(&zs, |z| decomposition_residual(&r.scn.system.sys, z))?, zs.len()))
    });
    if r.scn.gammas.is_empty() {
        r.skip("lemma34.pullback", "pullback of the magnetic form along a one-form", "missing input: gamma");
    }
    for g in &r.scn.gammas {
        for (part, label) in [(0, "i"), (1, "ii")] {
            let id = format!("lemma34.pullback-{label}[{}]", g.name);
            r.run(id, "pullback of the magnetic form along a one-form", 1e-8, |r, rng| {
                let dim = 2 * r.n();
                let zs = r.scn.sampling.points(rng, dim, count);
                let vs = r.scn.sampling.points(rng, dim, count);
                let ws = r.scn.sampling.points(rng, dim, count);
                let sys = &r.scn.system.sys;
                let mut worst = 0.0_f64;
                for ((z, v), w) in zs.iter().zip(&vs).zip(&ws) {
                    let (a, b) = lambda_pullback_residuals(&g.gamma, &sys.beta, z, v, w, &sys.engine)?;
                    worst = worst.max(if part == 0 { a } else { b });
                }
                Ok(Outcome::new(worst, zs.len()))
            });
        }
    }
}

fn hj1_suite(r: &mut Runner) {
    if r.scn.gammas.is_empty() {
        r.skip("hj1", "type I Hamilton-Jacobi equation", "missing input: gamma");
        return;
    }
    let count = r.count();
    for g in &r.scn.gammas {
        if r.scn.constrained() {
            r.run(format!("hj1.dist[{}]", g.name), "distributional type I equation", SOLUTION_TOL, |r, rng| {
                let qs = r.config_points(rng, count);
                let mut worst = 0.0_f64;
                let mut hyp = 0.0_f64;
                for q in &qs {
                    let res = hj1_dist_residual(&g.gamma, &r.scn.system, q)?;
                    worst = worst.max(res.residual.amax());
                    hyp = hyp.max(res.hypotheses.image_in_m).max(res.hypotheses.tangent_in_k);
                }
                Ok(Outcome::new(worst, qs.len()).flag_if(hyp > HYPOTHESIS_TOL, format!("hypothesis residual {hyp:.2e}")))
            });
            r.run(format!("hj1.image-in-f[{}]", g.name), "magnetic field along an image in M lies in F", 1e-8, |r, rng| {
                let qs = r.config_points(rng, count);
                let images: Vec<Vec<f64>> = qs.iter().map(|q| g.gamma.section(q)).collect();
                let rep = lemma63_check(&r.scn.system, &images, HYPOTHESIS_TOL)?;
                Ok(Outcome::new(rep.max_residual, qs.len())
                    .flag_if(rep.flagged, format!("image leaves M by {:.2e}", rep.max_image_in_m)))
            });
        } else {
            r.run(format!("hj1.magnetic[{}]", g.name), "type I Hamilton-Jacobi equation", 1e-8, |r, rng| {
                let qs = r.config_points(rng, count);
                Ok(Outcome::new(max_over(&qs, |q| Ok(hj1_residual(&g.gamma, &r.scn.system.sys, q)?.amax()))?, qs.len()))
            });
        }
    }
}

fn is_flow(e: &NamedPhaseMap) -> bool {
    matches!(e.kind, EpsilonKind::Flow { .. })
}

struct Hj2Sample {
    r1: f64,
    r2: f64,
    hyp: f64,
}

fn hj2_sample(r: &Runner, g: &NamedOneForm, e: &NamedPhaseMap, z: &[f64]) -> Result<Hj2Sample> {
    if r.scn.constrained() {
        let res = hj2_dist_residuals(&g.gamma, &e.eps, &r.scn.system, z)?;
        let h = res.hypotheses;
        Ok(Hj2Sample { r1: res.r1.amax(), r2: res.r2.amax(), hyp: h.image_in_m.max(h.tangent_in_k).max(h.symplectic_defect) })
    } else {
        let res = hj2_residuals(&g.gamma, &e.eps, &r.scn.system.sys, z)?;
        Ok(Hj2Sample { r1: res.r1.amax(), r2: res.r2.amax(), hyp: res.symplectic_defect })
    }
}

fn hj2_suite(r: &mut Runner) {
    if r.scn.gammas.is_empty() || r.scn.epsilons.is_empty() {
        r.skip("hj2", "type II Hamilton-Jacobi equation", "missing input: gamma and epsilon");
        return;
    }
    let count = r.count().min(50);
    let constrained = r.scn.constrained();
    let hyp_tol = |e: &NamedPhaseMap| if is_flow(e) { 1e-6 } else { HYPOTHESIS_TOL };
    for g in &r.scn.gammas {
        for e in &r.scn.epsilons {
            let tol = if is_flow(e) { FLOW_TOL } else { SOLUTION_TOL };
            let id = format!("hj2[{},{}]", g.name, e.name);
            let mut samples: Vec<Hj2Sample> = Vec::new();
            let mut failure = None;
            let mut rng = r.rng(&id);
            let start = Instant::now();
            let count = if constrained && is_flow(e) { count.min(CONSTRAINED_FLOW_SAMPLES) } else { count };
            for q in r.config_points(&mut rng, count) {
                match hj2_sample(r, g, e, &g.gamma.section(&q)) {
                    Ok(s) => samples.push(s),
                    Err(err) => {
                        failure = Some(err);
                        break;
                    }
                }
            }
            let elapsed = start.elapsed().as_secs_f64() * 1e3 / 3.0;
            let hyp = samples.iter().map(|s| s.hyp).fold(0.0, f64::max);
            let flag = (hyp > hyp_tol(e)).then(|| format!("hypothesis residual {hyp:.2e}"));
            let n = samples.len();
            let r1 = samples.iter().map(|s| s.r1).fold(0.0, f64::max);
            let r2 = samples.iter().map(|s| s.r2).fold(0.0, f64::max);
            let disagree = samples.iter().filter(|s| (s.r1 <= AGREEMENT_TOL) != (s.r2 <= AGREEMENT_TOL)).count();
            let entries = [
                (format!("hj2.r1[{},{}]", g.name, e.name), "type II equation, first form", tol, r1),
                (format!("hj2.r2[{},{}]", g.name, e.name), "type II equation, second form", tol, r2),
                (format!("hj2.agreement[{},{}]", g.name, e.name), "type II biconditional", 0.0, disagree as f64),
            ];
            for (id, anchor, tol, value) in entries {
                let failure = failure.clone();
                let flag = flag.clone();
                r.run(id, anchor, tol, |_, _| match failure {
                    Some(err) => Err(err),
                    None => Ok(Outcome { residual: value, flags: flag.into_iter().collect(), samples: n }),
                });
                if let Some(last) = r.records.last_mut() {
                    last.wall_ms = elapsed;
                }
            }
        }
    }
}

fn dist_suite(r: &mut Runner) {
    let count = r.count();
    let nh = &r.scn.system;
    let anchor = "distributional magnetic Hamiltonian equation";
    r.run("dist.frame-flags".into(), "admissibility and compatibility", 0.0, |r, rng| {
        let zs = r.phase_points(rng, count)?;
        let bad = zs.iter().try_fold(0usize, |acc, z| {
            let f = frame_at(&r.scn.system, z)?;
            Ok::<_, Error>(acc + usize::from(!(f.admissible && f.compatible)))
        })?;
        Ok(Outcome::new(bad as f64, zs.len()))
    });
    r.run("dist.on-m".into(), "sampled points lie on M", 1e-8, |r, rng| {
        let zs = r.phase_points(rng, count)?;
        Ok(Outcome::new(max_over(&zs, |z| constraint_norm(&r.scn.system, z))?, zs.len()))
    });
    r.run("dist.oracle-agreement".into(), anchor, 1e-8, |r, rng| {
        let zs = r.phase_points(rng, count)?;
        let v = max_over(&zs, |z| {
            let f = frame_at(&r.scn.system, z)?;
            Ok((distributional_vf(&r.scn.system, &f)? - multiplier_oracle_vf(&r.scn.system, z)?).amax())
        })?;
        Ok(Outcome::new(v, zs.len()))
    });
    r.run("dist.projected-field".into(), "projection of the magnetic field onto K", 1e-9, |r, rng| {
        let zs = r.phase_points(rng, count)?;
        let sys = &r.scn.system.sys;
        let v = max_over(&zs, |z| {
            let f = frame_at(&r.scn.system, z)?;
            let xb = magnetic_vf(&sys.h, &sys.beta, z, &sys.engine)?;
            Ok((f.project(&xb) - distributional_vf(&r.scn.system, &f)?).amax())
        })?;
        Ok(Outcome::new(v, zs.len()))
    });
    r.run("dist.projector".into(), "projector onto K along its complement", 1e-10, |r, rng| {
        let zs = r.phase_points(rng, count)?;
        let v = max_over(&zs, |z| {
            let f = frame_at(&r.scn.system, z)?;
            f.require_compatible()?;
            let t = &f.tau_k;
            let idem = (t * t - t).amax();
            let range = (t * &f.basis_k - &f.basis_k).amax();
            let kernel = if f.basis_kperp.ncols() == 0 { 0.0 } else { (t * &f.basis_kperp).amax() };
            let pairing = if f.basis_kperp.ncols() == 0 {
                0.0
            } else {
                (f.basis_k.transpose() * &f.symplectic * &f.basis_kperp).amax()
            };
            Ok(idem.max(range).max(kernel).max(pairing))
        })?;
        Ok(Outcome::new(v, zs.len()))
    });
    r.run("dist.energy".into(), "energy along the distributional field", 1e-10, |r, rng| {
        let zs = r.phase_points(rng, count)?;
        let v = max_over(&zs, |z| {
            let f = frame_at(&r.scn.system, z)?;
            let g = r.scn.system.engine().gradient(&r.scn.system.sys.h, z)?;
            Ok(g.dot(&distributional_vf(&r.scn.system, &f)?).abs())
        })?;
        Ok(Outcome::new(v, zs.len()))
    });
    r.run("dist.decomposition".into(), "distributional controlled field decomposition", 1e-10, |r, rng| {
        let zs = r.phase_points(rng, count)?;
        let v = max_over(&zs, |z| dist_decomposition_residual(&r.scn.system, &frame_at(&r.scn.system, z)?))?;
        Ok(Outcome::new(v, zs.len()))
    });
    r.run("dist.bracket-generating".into(), "completely nonholonomic distribution", 0.0, |r, _| {
        let n = r.n();
        let q0: Vec<f64> = r.scn.sampling.initial.as_ref().map_or(vec![0.0; n], |z| z[..n].to_vec());
        let rep = bracket_generating_check(&r.scn.system.dist, &q0, 4, r.scn.system.engine())?;
        Ok(Outcome::new((n - rep.rank) as f64, 1))
    });
    match &r.scn.sampling.initial {
        None => r.skip("dist.constrained-flow", "constrained integration", "missing input: sampling.initial"),
        Some(z0) => {
            let z0 = z0.clone();
            r.run("dist.constrained-flow".into(), "constrained integration", 1e-6, |r, _| {
                let traj = integrate_constrained(nh, &z0, 1e-3, 1000, Method::Rk4)?;
                let h0 = r.scn.system.sys.hamiltonian(&traj[0]);
                let mut worst = 0.0_f64;
                for z in &traj {
                    worst = worst.max(constraint_norm(nh, z)?);
                    if !r.scn.forced {
                        worst = worst.max((r.scn.system.sys.hamiltonian(z) - h0).abs());
                    }
                }
                Ok(Outcome::new(worst, traj.len()))
            });
        }
    }
}

fn reduced_suite(r: &mut Runner) {
    let Some(sym) = r.scn.symmetry.clone() else {
        r.skip("reduced", "reduction by cyclic translations", "missing input: symmetry");
        return;
    };
    let count = r.count();
    let half = count.min(50);
    let sym = &sym;
    r.run("reduced.invariance".into(), "invariance of the system data", 1e-8, |r, rng| {
        let zs = r.phase_points(rng, count)?;
        let shifts = r.scn.sampling.points(rng, sym.s(), 4);
        Ok(Outcome::new(invariance_residual(&r.scn.system, sym, &zs, &shifts)?, zs.len()))
    });
    for (id, which) in [("reduced.relatedness-plain", Relatedness::Plain), ("reduced.relatedness-controlled", Relatedness::Cmh)] {
        r.run(id.into(), "reduced field is related to the full field", 1e-8, |r, rng| {
            let zs = r.phase_points(rng, half)?;
            Ok(Outcome::new(max_over(&zs, |z| relatedness_residual(&r.scn.system, sym, z, which))?, zs.len()))
        });
    }
    r.run("reduced.decomposition".into(), "reduced controlled field decomposition", 1e-9, |r, rng| {
        let zs = r.phase_points(rng, half)?;
        let v = max_over(&zs, |z| {
            reduced_decomposition_residual(&r.scn.system, &reduced_frame_at(&r.scn.system, sym, &sym.project(z))?)
        })?;
        Ok(Outcome::new(v, zs.len()))
    });
    r.run("reduced.pullback-form".into(), "reduced form pulls back to the form on U", 1e-10, |r, rng| {
        let zs = r.phase_points(rng, half)?;
        let v = max_over(&zs, |z| Ok(pullback_form_residual(sym, &reduced_frame_at(&r.scn.system, sym, &sym.project(z))?)))?;
        Ok(Outcome::new(v, zs.len()))
    });
    r.run("reduced.lift-independence".into(), "reduced objects do not depend on the lift", 1e-9, |r, rng| {
        let zs = r.phase_points(rng, half)?;
        let shifts = r.scn.sampling.points(rng, sym.s(), 2 * zs.len());
        let mut worst = 0.0_f64;
        for (i, z) in zs.iter().enumerate() {
            worst = worst.max(lift_independence_residual(&r.scn.system, sym, &sym.project(z), &shifts[2 * i], &shifts[2 * i + 1])?);
        }
        Ok(Outcome::new(worst, zs.len()))
    });
    r.run("reduced.vanishing-correspondence".into(), "reduced magnetic vanishing residual", 1e-8, |r, rng| {
        let zs = r.phase_points(rng, half)?;
        let v = max_over(&zs, |z| {
            let full = crate::nonholonomic::dist_magnetic_vanishing_residual(&r.scn.system, &frame_at(&r.scn.system, z)?)?;
            let rf = reduced_frame_at(&r.scn.system, sym, &sym.project(z))?;
            Ok((reduced_magnetic_vanishing_residual(&r.scn.system, &rf)? - sym.project_vec(&full)).amax())
        })?;
        Ok(Outcome::new(v, zs.len()))
    });
    for g in &r.scn.gammas {
        r.run(format!("reduced.hj1[{}]", g.name), "reduced type I equation", SOLUTION_TOL, |r, rng| {
            let qs = r.config_points(rng, count);
            let mut worst = 0.0_f64;
            let mut hyp = 0.0_f64;
            for q in &qs {
                let res = reduced_hj1_residual(&g.gamma, &r.scn.system, sym, q)?;
                worst = worst.max(res.residual.amax());
                let h = res.hypotheses;
                hyp = hyp.max(h.base.image_in_m).max(h.base.tangent_in_k).max(h.invariance);
            }
            Ok(Outcome::new(worst, qs.len()).flag_if(hyp > HYPOTHESIS_TOL, format!("hypothesis residual {hyp:.2e}")))
        });
        for e in &r.scn.epsilons {
            let id = format!("reduced.hj2-correspondence[{},{}]", g.name, e.name);
            r.run(id, "type II under reduction", 0.0, |r, rng| {
                let m = if is_flow(e) { 8 } else { CONSTRAINED_FLOW_SAMPLES };
                let zs: Vec<Vec<f64>> = r.config_points(rng, half.min(m)).iter().map(|q| g.gamma.section(q)).collect();
                let tol = if is_flow(e) { FLOW_TOL } else { AGREEMENT_TOL };
                let rep = hj2_reduction_correspondence(&g.gamma, &e.eps, &r.scn.system, sym, &zs, tol)?;
                Ok(Outcome::new((rep.samples - rep.agreeing) as f64, rep.samples)
                    .flag_if(rep.flagged > 0, format!("hypotheses fail at {} samples", rep.flagged)))
            });
        }
    }
}

fn equivalence_suite(r: &mut Runner) {
    let Some(phi) = r.scn.phi.clone() else {
        r.skip("equivalence", "equivalence under cotangent lifts", "missing input: phi");
        return;
    };
    if r.scn.constrained() {
        r.skip("equivalence", "equivalence under cotangent lifts", "not defined for constrained scenarios");
        return;
    }
    let pair = match SystemPair::conjugated(r.scn.system.sys.clone(), phi.clone()) {
        Ok(p) => p,
        Err(e) => {
            r.run("equivalence.pair".into(), "conjugated system", 0.0, |_, _| Err(e));
            return;
        }
    };
    let pair = &pair;
    let half = r.count().min(50);
    type Residual = fn(&SystemPair, &[f64]) -> Result<f64>;
    let entries: [(&str, &str, f64, Residual); 4] = [
        ("equivalence.cmh2", "controlled fields correspond", 1e-6, cmh2_residual),
        ("equivalence.magnetic-fields", "magnetic fields correspond", 1e-6, magnetic_correspondence_residual),
        ("equivalence.vanishing", "vanishing residuals correspond", 1e-6, vanishing_correspondence_residual),
        ("equivalence.lift-symplectic", "cotangent lift is symplectic", 1e-10, lift_symplectic_residual),
    ];
    for (id, anchor, tol, f) in entries {
        r.run(id.into(), anchor, tol, |r, rng| {
            let zs = r.scn.sampling.points(rng, 2 * r.n(), half);
            Ok(Outcome::new(max_over(&zs, |z| f(pair, z))?, zs.len()))
        });
    }
    r.run("equivalence.lift-functoriality".into(), "cotangent lift of a composition", 1e-10, |r, rng| {
        let zs = r.scn.sampling.points(rng, 2 * r.n(), half);
        let eng = r.scn.system.engine();
        Ok(Outcome::new(max_over(&zs, |z| lift_functoriality_residual(&phi, &phi, z, eng))?, zs.len()))
    });
    for g in &r.scn.gammas {
        r.run(format!("equivalence.transport-hj1[{}]", g.name), "type I solutions transport", 0.0, |r, rng| {
            let zs = r.scn.sampling.points(rng, 2 * r.n(), half.min(20));
            let rep = solution_transport_check(pair, &TransportSource::OneForm(g.gamma.clone()), &zs, 1e-6)?;
            Ok(Outcome::new(f64::from(u8::from(!rep.verdicts_match())), rep.samples)
                .flag_if(!rep.hypothesis_ok, format!("hypothesis residual {:.2e}", rep.hypothesis_residual)))
        });
        for e in r.scn.epsilons.iter().filter(|e| !is_flow(e)) {
            let id = format!("equivalence.transport-hj2[{},{}]", g.name, e.name);
            r.run(id, "type II solutions transport", 0.0, |r, rng| {
                let zs: Vec<Vec<f64>> = r.config_points(rng, half.min(20)).iter().map(|q| g.gamma.section(q)).collect();
                let source = TransportSource::PhaseMap { gamma: g.gamma.clone(), eps: e.eps.clone() };
                let rep = solution_transport_check(pair, &source, &zs, 1e-6)?;
                Ok(Outcome::new(f64::from(u8::from(!rep.verdicts_match())), rep.samples)
                    .flag_if(!rep.hypothesis_ok, format!("hypothesis residual {:.2e}", rep.hypothesis_residual)))
            });
        }
    }
}

/// One row per time step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub n: usize,
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
    pub constraint: Vec<f64>,
    pub energy: Vec<f64>,
}

impl Trajectory {
    pub fn max_constraint(&self) -> f64 {
        self.constraint.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_energy_drift(&self) -> f64 {
        let h0 = self.energy[0];
        self.energy.iter().map(|h| (h - h0).abs()).fold(0.0, f64::max)
    }

    pub fn write_csv(&self, out: &mut impl Write) -> io::Result<()> {
        let n = self.n;
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("q{i}")));
        header.extend((1..=n).map(|i| format!("p{i}")));
        header.push("constraint_norm".into());
        header.push("H".into());
        writeln!(out, "{}", header.join(","))?;
        for (i, z) in self.states.iter().enumerate() {
            let mut line = format!("{:.16e}", i as f64 * self.dt);
            for v in z.iter().chain([&self.constraint[i], &self.energy[i]]) {
                let _ = write!(line, ",{v:.16e}");
            }
            writeln!(out, "{line}")?;
        }
        writeln!(
            out,
            "# summary max_constraint_norm={:.16e} max_energy_drift={:.16e}",
            self.max_constraint(),
            self.max_energy_drift()
        )
    }
}

/// Number of steps with `steps·dt = t_end` up to rounding.
pub fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && t_end >= 0.0 && dt.is_finite() && t_end.is_finite()) {
        return Err(Error::Invalid("need dt > 0 and t_end >= 0".into()));
    }
    let steps = (t_end / dt).round();
    if (steps * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::Invalid(format!("dt = {dt} does not divide t_end = {t_end}")));
    }
    Ok(steps as usize)
}

pub fn simulate(scn: &Scenario, t_end: f64, dt: f64, method: Method) -> Result<Trajectory> {
    let steps = step_count(t_end, dt)?;
    let z0 = scn.sampling.initial.clone().ok_or_else(|| Error::Invalid("scenario has no sampling.initial".into()))?;
    let nh = &scn.system;
    let states = if scn.constrained() {
        integrate_constrained(nh, &z0, dt, steps, method)?
    } else {
        integrate(&nh.sys.cmh_field(), &z0, dt, steps, method)?
    };
    let constraint = states.iter().map(|z| constraint_norm(nh, z)).collect::<Result<Vec<_>>>()?;
    let energy = states.iter().map(|z| nh.sys.hamiltonian(z)).collect();
    Ok(Trajectory { n: scn.n, dt, states, constraint, energy })
}

/// Parses a CSV written by [`Trajectory::write_csv`] into numeric rows.
pub fn read_csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}
