use magnomech::diffcore::{projection_residual, DerivativeEngine};
use magnomech::dynamics::{magnetic_vf, FiberMap, Method};
use magnomech::expr::{config_map, phase_map};
use magnomech::func::VectorMap;
use magnomech::hamilton_jacobi::{compensating_magnetic_field, dgamma_plus_b_residual, hj1_residual};
use magnomech::nonholonomic::*;
use magnomech::symplectic::{MagneticField, OneFormSection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn knife_edge(beta: MagneticField) -> NonholonomicCmhSystem {
    let dist = PfaffianDistribution::new(3, 1, config_map(&["sin(q3)", "-cos(q3)", "0"], 3).unwrap()).unwrap();
    NonholonomicCmhSystem::new(MechanicalLagrangian::free(3), dist, beta, FiberMap::zero(3), FiberMap::zero(3))
        .unwrap()
}

fn planar_field() -> MagneticField {
    MagneticField::constant(&nalgebra::dmatrix![0.0, -0.7, 0.0; 0.7, 0.0, 0.0; 0.0, 0.0, 0.0]).unwrap()
}

fn heading_field() -> MagneticField {
    MagneticField::constant(&nalgebra::dmatrix![0.0, 0.0, 0.5; 0.0, 0.0, 0.0; -0.5, 0.0, 0.0]).unwrap()
}

fn section(srcs: &[&str]) -> OneFormSection {
    OneFormSection::new(config_map(srcs, 3).unwrap()).unwrap()
}

fn on_m_samples(nh: &NonholonomicCmhSystem, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    (0..count)
        .map(|_| {
            let z: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            project_to_m(nh, &z).unwrap()
        })
        .collect()
}

#[test]
fn oracle_agreement_and_projector() {
    for nh in [knife_edge(MagneticField::zero(3)), knife_edge(planar_field())] {
        for z in on_m_samples(&nh, 100) {
            let f = frame_at(&nh, &z).unwrap();
            assert!(f.constraint_norm < 1e-10);
            assert!(f.compatible);
            let x = distributional_vf(&nh, &f).unwrap();
            let y = multiplier_oracle_vf(&nh, &z).unwrap();
            assert!((&x - &y).amax() < 1e-8, "{z:?}");
            let xb = magnetic_vf(&nh.sys.h, &nh.sys.beta, &z, nh.engine()).unwrap();
            assert!((f.project(&xb) - &x).amax() < 1e-9);
            assert!((&f.tau_k * &f.tau_k - &f.tau_k).amax() < 1e-10);
            assert!((&f.tau_k * &f.basis_k - &f.basis_k).amax() < 1e-10);
            assert!((&f.tau_k * &f.basis_kperp).amax() < 1e-10);
            assert!((f.basis_k.transpose() * &f.symplectic * &f.basis_kperp).amax() < 1e-10);
            assert!(projection_residual(&f.basis_k, &f.basis_tm) < 1e-10);
            assert!(projection_residual(&f.basis_k, &f.basis_f) < 1e-10);
            let grad = nh.engine().gradient(&nh.sys.h, &z).unwrap();
            assert!(grad.dot(&x).abs() < 1e-10);
            assert!(dist_decomposition_residual(&nh, &f).unwrap() < 1e-10);
        }
    }
}

#[test]
fn vanishing_residual_examples() {
    let nh = knife_edge(MagneticField::zero(3));
    let z = [0.1, 0.2, 0.3, 0.8 * 0.3f64.cos(), 0.8 * 0.3f64.sin(), 0.5];
    let f = frame_at(&nh, &z).unwrap();
    assert!(dist_magnetic_vanishing_residual(&nh, &f).unwrap().amax() < 1e-14);
    let nh = knife_edge(planar_field());
    let f = frame_at(&nh, &z).unwrap();
    let r = dist_magnetic_vanishing_residual(&nh, &f).unwrap();
    let [_, x0, ..] = distributional_decomposition(&nh, &f).unwrap();
    assert!((&r - x0).amax() < 1e-14);
    assert!((f.project(&r) - &r).amax() < 1e-10);
}

#[test]
fn integrable_constraint_frame() {
    let dist = PfaffianDistribution::new(2, 1, config_map(&["1", "0"], 2).unwrap()).unwrap();
    let nh = NonholonomicCmhSystem::new(
        MechanicalLagrangian::free(2),
        dist,
        MagneticField::zero(2),
        FiberMap::zero(2),
        FiberMap::zero(2),
    )
    .unwrap();
    let f = frame_at(&nh, &[0.3, 0.4, 0.0, 1.0]).unwrap();
    assert!(f.admissible && f.compatible);
    assert_eq!(f.dim_k(), 2);
}

#[test]
fn unconstrained_collapses() {
    let nh = NonholonomicCmhSystem::new(
        MechanicalLagrangian::free(2),
        PfaffianDistribution::unconstrained(2),
        MagneticField::constant(&nalgebra::dmatrix![0.0, -1.0; 1.0, 0.0]).unwrap(),
        FiberMap::zero(2),
        FiberMap::zero(2),
    )
    .unwrap();
    let z = [0.2, -0.1, 0.5, 0.7];
    let f = frame_at(&nh, &z).unwrap();
    assert_eq!(f.dim_k(), 4);
    assert!((&f.tau_k - nalgebra::DMatrix::<f64>::identity(4, 4)).amax() < 1e-12);
    let x = distributional_vf(&nh, &f).unwrap();
    assert!((x - magnetic_vf(&nh.sys.h, &nh.sys.beta, &z, nh.engine()).unwrap()).amax() < 1e-12);

    let gamma = OneFormSection::new(config_map(&["-0.5*q2", "0.5*q1"], 2).unwrap()).unwrap();
    let sys = nh.sys.clone().with_hamiltonian(magnomech::expr::phase_scalar("0.5*((p1+0.5*q2)^2+(p2-0.5*q1)^2) + p1", 2).unwrap()).unwrap();
    let nh = nh.with_hamiltonian(sys.h.clone()).unwrap();
    let a = hj1_dist_residual(&gamma, &nh, &[0.3, -0.4]).unwrap().residual;
    let b = hj1_residual(&gamma, &sys, &[0.3, -0.4]).unwrap();
    assert!((a - b).amax() < 1e-12);
}

#[test]
fn integration_knife_edge() {
    let nh = knife_edge(MagneticField::zero(3));
    let traj = integrate_constrained(&nh, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0], 1e-3, 1000, Method::Rk4).unwrap();
    for (i, z) in traj.iter().enumerate() {
        assert!((z[0] - i as f64 * 1e-3).abs() < 1e-9);
        assert!(constraint_norm(&nh, z).unwrap() < 1e-10);
    }
    let z0 = [0.0, 0.0, 0.0, 1.0, 0.0, 1.0];
    let traj = integrate_constrained(&nh, &z0, 1e-3, 10_000, Method::Rk4).unwrap();
    let h0 = nh.sys.hamiltonian(&z0);
    for z in &traj {
        assert!(constraint_norm(&nh, z).unwrap() < 1e-6);
        assert!((nh.sys.hamiltonian(z) - h0).abs() < 1e-6);
    }
    let still = integrate_constrained(&nh, &[0.5, 0.5, 0.5, 0.0, 0.0, 0.0], 1e-2, 10, Method::Rk4).unwrap();
    assert!(still.iter().all(|z| z == &still[0]));
}

#[test]
fn restricted_condition_weaker_than_full() {
    let eng = DerivativeEngine::dual();
    let nh = knife_edge(MagneticField::zero(3));
    // dgamma = -a sin(th) dx^dth + a cos(th) dy^dth vanishes on D but not on R^3
    let gamma = section(&["cos(q3)", "sin(q3)", "0.4"]);
    let q = [0.1, -0.3, 0.7];
    assert!(dgamma_plus_b_on_d_residual(&gamma, &nh.sys.beta, &nh.dist, &q, &eng).unwrap() < 1e-14);
    assert!(dgamma_plus_b_residual(&gamma, &nh.sys.beta, &q, &eng).unwrap() > 0.1);
    let closed = section(&["q1", "q2", "0"]);
    assert!(dgamma_plus_b_on_d_residual(&closed, &nh.sys.beta, &nh.dist, &q, &eng).unwrap() < 1e-14);
}

#[test]
fn lemma_on_image() {
    let nh = knife_edge(MagneticField::zero(3));
    let gamma = section(&["1.3*cos(q3)", "1.3*sin(q3)", "0.4"]);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let images: Vec<Vec<f64>> =
        (0..20).map(|_| gamma.section(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])).collect();
    let r = lemma63_check(&nh, &images, 1e-8).unwrap();
    assert!(!r.flagged && r.max_residual < 1e-8);
    let bad = section(&["0", "1", "0"]);
    let r = lemma63_check(&nh, &[bad.section(&[0.0, 0.0, 0.0])], 1e-8).unwrap();
    assert!(r.flagged);
}

#[test]
fn type_one_knife_edge() {
    let nh = knife_edge(MagneticField::zero(3));
    let gamma = section(&["1.3*cos(q3)", "1.3*sin(q3)", "0.4"]);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let r = hj1_dist_residual(&gamma, &nh, &q).unwrap();
        assert!(r.hypotheses.hold(1e-8), "{:?}", r.hypotheses);
        assert!(r.residual.amax() < 1e-7, "{}", r.residual.amax());
    }
    let perturbed = nh.clone().with_beta(heading_field()).unwrap();
    let r = hj1_dist_residual(&gamma, &perturbed, &[0.1, 0.2, 0.3]).unwrap();
    assert!(r.residual.amax() > 1e-3);
}

#[test]
fn compensated_pipeline_knife_edge() {
    let eng = DerivativeEngine::dual();
    let base = knife_edge(MagneticField::zero(3));
    let gamma = section(&[
        "1.2*cos(0.5*sin(q3))*cos(q3)",
        "1.2*cos(0.5*sin(q3))*sin(q3)",
        "1.2*sin(0.5*sin(q3))",
    ]);
    let q = [0.2, 0.1, 0.9];
    assert!(dgamma_plus_b_on_d_residual(&gamma, &base.sys.beta, &base.dist, &q, &eng).unwrap() > 1e-2);
    assert!(hj1_dist_residual(&gamma, &base, &q).unwrap().residual.amax() > 1e-3);
    let nh = base.with_beta(compensating_magnetic_field(&gamma, &eng)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let r = hj1_dist_residual(&gamma, &nh, &q).unwrap();
        assert!(r.hypotheses.hold(1e-8));
        assert!(r.residual.amax() < 1e-7, "{}", r.residual.amax());
    }
}

fn rotation(alpha: f64) -> VectorMap {
    let (c, s) = (alpha.cos(), alpha.sin());
    phase_map(
        &[
            &format!("{c}*q1 - {s}*q2"),
            &format!("{s}*q1 + {c}*q2"),
            &format!("q3 + {alpha}"),
            &format!("{c}*p1 - {s}*p2"),
            &format!("{s}*p1 + {c}*p2"),
            "p3",
        ],
        3,
    )
    .unwrap()
}

#[test]
fn type_two_knife_edge() {
    let nh = knife_edge(MagneticField::zero(3));
    let gamma = section(&["1.3*cos(q3)", "1.3*sin(q3)", "0.4"]);
    let wrong = section(&["1.3*cos(q3)", "1.3*sin(q3)", "0.4 + 0.3*q1"]);
    let maps = [
        phase_map(&["q1", "q2", "q3", "p1", "p2", "p3"], 3).unwrap(),
        phase_map(&["q1 + 0.5", "q2 - 0.25", "q3", "p1", "p2", "p3"], 3).unwrap(),
        rotation(0.6),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..10 {
        let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for eps in &maps {
            let r = hj2_dist_residuals(&gamma, eps, &nh, &gamma.section(&q)).unwrap();
            assert!(r.hypotheses.hold(1e-8), "{:?}", r.hypotheses);
            assert_eq!(r.verdicts(1e-6), (true, true), "{} {}", r.r1.amax(), r.r2.amax());
            let r = hj2_dist_residuals(&wrong, eps, &nh, &wrong.section(&q)).unwrap();
            assert_eq!(r.verdicts(1e-6), (false, false), "{} {}", r.r1.amax(), r.r2.amax());
        }
    }
}

#[test]
fn type_two_flow_map() {
    let nh = knife_edge(MagneticField::zero(3));
    let gamma = section(&["1.3*cos(q3)", "1.3*sin(q3)", "0.4"]);
    let flow = constrained_flow_map(&nh, 0.05, 50);
    let z = gamma.section(&[0.3, -0.2, 0.8]);
    let r = hj2_dist_residuals(&gamma, &flow, &nh, &z).unwrap();
    assert!(r.r1.amax() < 1e-5 && r.r2.amax() < 1e-5);
    assert!(r.hypotheses.image_in_m < 1e-10);
    // the re-projected flow is not symplectic on the whole phase space
    assert!(r.hypotheses.symplectic_defect > 1e-3);
}
