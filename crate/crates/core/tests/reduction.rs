use magnomech::dynamics::FiberMap;
use magnomech::expr::{config_map, phase_map, phase_scalar};
use magnomech::nonholonomic::*;
use magnomech::reduction::*;
use magnomech::symplectic::{MagneticField, OneFormSection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn knife_edge(beta: MagneticField, force: FiberMap) -> NonholonomicCmhSystem {
    let dist = PfaffianDistribution::new(3, 1, config_map(&["sin(q3)", "-cos(q3)", "0"], 3).unwrap()).unwrap();
    NonholonomicCmhSystem::new(MechanicalLagrangian::free(3), dist, beta, force, FiberMap::zero(3)).unwrap()
}

fn planar_field() -> MagneticField {
    MagneticField::constant(&nalgebra::dmatrix![0.0, -0.7, 0.0; 0.7, 0.0, 0.0; 0.0, 0.0, 0.0]).unwrap()
}

fn torque() -> FiberMap {
    FiberMap::new(3, phase_map(&["0", "0", "0.3*q3 + 0.2*p3"], 3).unwrap()).unwrap()
}

fn xy() -> TranslationSymmetry {
    TranslationSymmetry::new(3, vec![0, 1]).unwrap()
}

fn samples(nh: &NonholonomicCmhSystem, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    (0..count)
        .map(|_| {
            let z: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            project_to_m(nh, &z).unwrap()
        })
        .collect()
}

#[test]
fn invariance_examples() {
    let nh = knife_edge(planar_field(), torque());
    let zs = samples(&nh, 20);
    let shifts = vec![vec![0.5, -1.5], vec![3.0, 2.0]];
    let r = invariance_residual(&nh, &xy(), &zs, &shifts).unwrap();
    assert!(r <= 1e-12, "{r}");
    let tilted = nh.clone().with_hamiltonian(phase_scalar("0.5*(p1^2+p2^2+p3^2) + 0.1*q1", 3).unwrap()).unwrap();
    assert!(invariance_residual(&tilted, &xy(), &zs, &shifts).unwrap() > 0.0);
    assert_eq!(invariance_residual(&tilted, &TranslationSymmetry::none(3), &zs, &[vec![]]).unwrap(), 0.0);
}

#[test]
fn knife_edge_reduced_frame() {
    let nh = knife_edge(MagneticField::zero(3), FiberMap::zero(3));
    let rf = reduced_frame_at(&nh, &xy(), &[0.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!((rf.basis_vk.ncols(), rf.basis_u.ncols(), rf.dim_kbar()), (1, 3, 2));
    assert!(rf.compatible);
    assert!(pullback_form_residual(&xy(), &rf) < 1e-10);
}

#[test]
fn relatedness_and_identities() {
    for nh in [knife_edge(MagneticField::zero(3), torque()), knife_edge(planar_field(), torque())] {
        for z in samples(&nh, 50) {
            assert!(relatedness_residual(&nh, &xy(), &z, Relatedness::Plain).unwrap() < 1e-8);
            assert!(relatedness_residual(&nh, &xy(), &z, Relatedness::Cmh).unwrap() < 1e-8);
            let rf = reduced_frame_at(&nh, &xy(), &xy().project(&z)).unwrap();
            assert!(reduced_decomposition_residual(&nh, &rf).unwrap() < 1e-9);
            assert!(pullback_form_residual(&xy(), &rf) < 1e-10);
            let zbar = xy().project(&z);
            assert!(lift_independence_residual(&nh, &xy(), &zbar, &[0.3, -1.1], &[1.7, 0.4]).unwrap() < 1e-9);
            let f = frame_at(&nh, &z).unwrap();
            let r = dist_magnetic_vanishing_residual(&nh, &f).unwrap();
            let rbar = reduced_magnetic_vanishing_residual(&nh, &rf).unwrap();
            assert!((rbar - xy().project_vec(&r)).amax() < 1e-8, "{z:?}");
        }
    }
}

#[test]
fn trivial_symmetry_is_identity() {
    let nh = knife_edge(planar_field(), FiberMap::zero(3));
    let none = TranslationSymmetry::none(3);
    let z = samples(&nh, 1).remove(0);
    let rf = reduced_frame_at(&nh, &none, &z).unwrap();
    assert_eq!(rf.dim_kbar(), 4);
    let x = distributional_vf(&nh, &frame_at(&nh, &z).unwrap()).unwrap();
    assert!((reduced_distributional_vf(&nh, &rf).unwrap() - x).amax() < 1e-10);
    assert!(relatedness_residual(&nh, &none, &z, Relatedness::Cmh).unwrap() < 1e-12);
}

#[test]
fn fully_symmetric_free_particle() {
    let nh = NonholonomicCmhSystem::new(
        MechanicalLagrangian::free(2),
        PfaffianDistribution::unconstrained(2),
        MagneticField::zero(2),
        FiberMap::zero(2),
        FiberMap::zero(2),
    )
    .unwrap();
    let sym = TranslationSymmetry::new(2, vec![0, 1]).unwrap();
    let rf = reduced_frame_at(&nh, &sym, &[0.4, -0.3]).unwrap();
    // V is Lagrangian, so U = V and the quotient of U is trivial
    assert_eq!(rf.dim_kbar(), 0);
    assert_eq!(reduced_distributional_vf(&nh, &rf).unwrap().amax(), 0.0);
}

fn gamma() -> OneFormSection {
    OneFormSection::new(config_map(&["1.3*cos(q3)", "1.3*sin(q3)", "0.4"], 3).unwrap()).unwrap()
}

#[test]
fn reduced_type_one() {
    let nh = knife_edge(MagneticField::zero(3), FiberMap::zero(3));
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let r = reduced_hj1_residual(&gamma(), &nh, &xy(), &q).unwrap();
        assert!(r.hypotheses.hold(1e-8));
        assert!(r.residual.amax() < 1e-7);
    }
    let drifting = OneFormSection::new(config_map(&["1.3*cos(q3)", "1.3*sin(q3)", "0.4 + 0.2*q1"], 3).unwrap()).unwrap();
    let r = reduced_hj1_residual(&drifting, &nh, &xy(), &[0.1, 0.2, 0.3]).unwrap();
    assert!(r.hypotheses.invariance > 1e-3);
    let none = TranslationSymmetry::none(3);
    let a = reduced_hj1_residual(&gamma(), &nh, &none, &[0.1, 0.2, 0.3]).unwrap().residual;
    let b = hj1_dist_residual(&gamma(), &nh, &[0.1, 0.2, 0.3]).unwrap().residual;
    assert!((a - b).amax() < 1e-12);
}

#[test]
fn reduced_type_two_correspondence() {
    let nh = knife_edge(MagneticField::zero(3), FiberMap::zero(3));
    let g = gamma();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let zs: Vec<Vec<f64>> = (0..10)
        .map(|_| g.section(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]))
        .collect();
    let good = phase_map(&["q1 + 0.5", "q2 - 0.25", "q3", "p1", "p2", "p3"], 3).unwrap();
    let rep = hj2_reduction_correspondence(&g, &good, &nh, &xy(), &zs, 1e-6).unwrap();
    assert!(rep.all_agree() && rep.flagged == 0 && rep.reduced_pass == zs.len(), "{rep:?}");
    let r = reduced_hj2_residuals(&g, &good, &nh, &xy(), &zs[0]).unwrap();
    assert_eq!(r.verdicts(1e-6), (true, true), "{} {}", r.r1.amax(), r.r2.amax());
    let bad = phase_map(&["q1", "q2", "q3 + 0.3", "p1", "p2", "p3"], 3).unwrap();
    let rep = hj2_reduction_correspondence(&g, &bad, &nh, &xy(), &zs, 1e-6).unwrap();
    assert!(rep.all_agree() && rep.reduced_pass == 0, "{rep:?}");
    let r = reduced_hj2_residuals(&g, &bad, &nh, &xy(), &zs[0]).unwrap();
    assert_eq!(r.verdicts(1e-6), (false, false), "{} {}", r.r1.amax(), r.r2.amax());
}

#[test]
fn pushed_force_must_lie_in_u() {
    let f = FiberMap::new(3, phase_map(&["0.4*p3", "0.1*p1 - 0.5*q3", "0.2*q3 + p2"], 3).unwrap()).unwrap();
    let nh = knife_edge(MagneticField::zero(3), f);
    let mut worst = 0.0f64;
    for z in samples(&nh, 20) {
        worst = worst.max(relatedness_residual(&nh, &xy(), &z, Relatedness::Cmh).unwrap());
    }
    // the lifted force leaves U, so the pushed-down force loses a component
    assert!(worst > 1e-3);
}
