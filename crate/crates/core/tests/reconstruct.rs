use std::sync::OnceLock;

use approx::assert_relative_eq;
use eitproj_core::forward::{assemble, make_patterns, ConductivityField, ContactState, PatternKind};
use eitproj_core::mesh::{generate_cylinder_tank, ElectrodeLayout, Mesh, TankSpec};
use eitproj_core::projection::{build_projection, ProjectionOperator};
use eitproj_core::reconstruct::{build_problem, Reconstructor};
use eitproj_core::regularization::{EpsilonMode, Regularizer};
use eitproj_core::sampling::{draw_rng, NoiseModel};
use eitproj_core::sensitivity::{JacobianBlock, Sensitivity};
use eitproj_core::Error;
use nalgebra::DVector;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

struct Case {
    mesh: Mesh,
    #[allow(dead_code)]
    layout: ElectrodeLayout,
    js: JacobianBlock,
    pz: ProjectionOperator,
    y: DVector<f64>,
    noise: NoiseModel,
}

fn case() -> &'static Case {
    static CASE: OnceLock<Case> = OnceLock::new();
    CASE.get_or_init(|| {
        let (mesh, layout) = generate_cylinder_tank(&TankSpec::single_ring(0.03, 0.015, 8, 0.006, 0)).unwrap();
        let sigma = ConductivityField::constant(mesh.n_nodes(), 0.0491).unwrap();
        let contact = ContactState::uniform(8, 500.0, 0.006).unwrap();
        let pats = make_patterns(PatternKind::Fourier, 8).unwrap();
        let sys = assemble(&mesh, &layout, &sigma, &contact).unwrap();
        let sol = sys.solve(&pats).unwrap();
        let sens = Sensitivity::new(&sys, &sol).unwrap();
        let js = sens.sigma();
        let pz = build_projection(&[&sens.zeta()]).unwrap();
        let w: Vec<f64> = mesh.nodes().iter().map(|x| if x.x > 0.01 { 0.5 } else { 0.0 }).collect();
        let clean = &js.matrix * DVector::from_vec(w);
        let noise = NoiseModel::with_std(1e-3 * clean.amax()).unwrap();
        let y = &clean + noise.sample(clean.len(), &mut draw_rng(3, 0));
        Case { mesh, layout, js, pz, y, noise }
    })
}

fn prior(mesh: &Mesh) -> Regularizer<'_> {
    Regularizer::new(mesh, 1e-6, EpsilonMode::Heuristic).unwrap()
}

#[test]
fn whitening_matches_projected_noise_covariance() {
    let c = case();
    let problem = build_problem(&c.js, &c.y, &c.noise, Some(&c.pz)).unwrap();
    let a = problem.a();
    // AᵀA = Jᵀ (PΓ⁻¹P) J and Aᵀb = Jᵀ (PΓ⁻¹P) y with Γ = s²I
    let p = c.pz.matrix();
    let btb = p * p / c.noise.variance();
    let j = &c.js.matrix;
    let lhs = a.transpose() * a;
    let rhs = j.transpose() * &btb * j;
    assert!((&lhs - &rhs).norm() <= 1e-10 * rhs.norm());
    let atb = a.transpose() * problem.b();
    let expected = j.transpose() * &btb * &c.y;
    assert!((atb - &expected).norm() <= 1e-10 * expected.norm());
    assert_eq!(problem.projection_label(), "zeta");
    assert_eq!(build_problem(&c.js, &c.y, &c.noise, None).unwrap().projection_label(), "none");
}

#[test]
fn normal_equations_hold_for_lagged_iterates() {
    let c = case();
    let reg = prior(&c.mesh);
    for p in [None, Some(&c.pz)] {
        let problem = build_problem(&c.js, &c.y, &c.noise, p).unwrap();
        let solver = Reconstructor::new(&problem, &reg, 1e2).unwrap();
        let result = solver.lagged_diffusivity(4).unwrap();
        let a = problem.a();
        for k in 1..result.history.len() {
            let theta = reg.theta(&result.history[k - 1]).unwrap().to_dense();
            let w = DVector::from_column_slice(&result.history[k]);
            let rhs = a.transpose() * problem.b();
            let r = (a.transpose() * a + theta * 1e2) * w - &rhs;
            assert!(r.norm() <= 1e-8 * rhs.norm(), "iterate {k}: residual {}", r.norm() / rhs.norm());
        }
    }
}

#[test]
fn large_gamma_tends_to_scaled_prior_solution() {
    let c = case();
    let reg = prior(&c.mesh);
    let problem = build_problem(&c.js, &c.y, &c.noise, None).unwrap();
    let theta = reg.theta_zero().unwrap().to_dense();
    let a = problem.a();
    let limit = theta.cholesky().unwrap().solve(&(a.transpose() * problem.b()));
    for gamma in [1e10, 1e12] {
        let w = Reconstructor::new(&problem, &reg, gamma).unwrap().one_step().unwrap().w;
        let scaled = DVector::from_vec(w) * gamma;
        assert!((&scaled - &limit).norm() <= 1e-3 * limit.norm());
    }
}

#[test]
fn metadata_and_exports() {
    let c = case();
    let reg = prior(&c.mesh);
    let problem = build_problem(&c.js, &c.y, &c.noise, Some(&c.pz)).unwrap();
    let result = Reconstructor::new(&problem, &reg, 1e2).unwrap().lagged_diffusivity(2).unwrap();
    let meta = result.metadata_json();
    assert_eq!(meta["algorithm"], "lagged_diffusivity");
    assert_eq!(meta["iterations"], 2);
    assert_eq!(meta["objective_history"].as_array().unwrap().len(), 3);
    assert_eq!(meta["projection"], "zeta");
    assert_eq!(meta["mesh_hash"], c.mesh.content_hash());
    assert_relative_eq!(meta["epsilon"].as_f64().unwrap(), reg.epsilon());

    let mut csv = Vec::new();
    result.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("node,value"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), c.mesh.n_nodes());
    let (i, v) = rows[5].split_once(',').unwrap();
    assert_eq!(i, "5");
    assert_eq!(v.parse::<f64>().unwrap(), result.w[5]);
}

#[test]
fn invalid_inputs() {
    let c = case();
    let reg = prior(&c.mesh);
    let problem = build_problem(&c.js, &c.y, &c.noise, None).unwrap();
    assert!(matches!(Reconstructor::new(&problem, &reg, 0.0), Err(Error::Config(_))));
    assert!(matches!(Reconstructor::new(&problem, &reg, f64::NAN), Err(Error::Config(_))));
    let short = c.y.rows(0, c.y.len() - 1).into_owned();
    assert!(matches!(build_problem(&c.js, &short, &c.noise, None), Err(Error::Contract(_))));
    let zero_noise = NoiseModel { std: 0.0, fraction: None };
    assert!(matches!(build_problem(&c.js, &c.y, &zero_noise, None), Err(Error::Numeric(_))));
    let mut wrong = c.js.clone();
    wrong.kind = eitproj_core::sensitivity::JacobianKind::Zeta;
    assert!(matches!(build_problem(&wrong, &c.y, &c.noise, None), Err(Error::Contract(_))));
    assert!(matches!(Regularizer::new(&c.mesh, 0.0, EpsilonMode::Heuristic), Err(Error::Config(_))));
    assert!(matches!(Regularizer::new(&c.mesh, 1e-6, EpsilonMode::Fixed(-1.0)), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn woodbury_equals_direct_and_is_linear_in_data(gamma in -3.0f64..4.0, seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let c = case();
        let gamma = 10f64.powf(gamma);
        let reg = prior(&c.mesh);
        let mut rng = draw_rng(seed, 0);
        let y2 = DVector::from_fn(c.y.len(), |_, _| StandardNormal.sample(&mut rng)) * c.noise.std;
        let solve = |y: &DVector<f64>| {
            let problem = build_problem(&c.js, y, &c.noise, Some(&c.pz)).unwrap();
            let solver = Reconstructor::new(&problem, &reg, gamma).unwrap();
            let theta = reg.theta_zero().unwrap();
            let w1 = DVector::from_vec(solver.solve_woodbury(theta.clone()).unwrap());
            let w2 = DVector::from_vec(solver.solve_direct(&theta).unwrap());
            (w1, w2)
        };
        let (a1, a2) = solve(&c.y);
        prop_assert!((&a1 - &a2).norm() <= 1e-8 * a2.norm());
        let (b1, _) = solve(&y2);
        let (s1, _) = solve(&(&c.y + &y2 * alpha));
        let combo = &a1 + &b1 * alpha;
        prop_assert!((&s1 - &combo).norm() <= 1e-9 * combo.norm().max(a1.norm()));
    }
}

#[test]
fn lagged_history_starts_at_zero_and_objective_decreases() {
    let c = case();
    let reg = prior(&c.mesh);
    let problem = build_problem(&c.js, &c.y, &c.noise, None).unwrap();
    let solver = Reconstructor::new(&problem, &reg, 1e2).unwrap();
    let r = solver.lagged_diffusivity(6).unwrap();
    assert!(r.history[0].iter().all(|&v| v == 0.0));
    assert_eq!(r.history.len(), 7);
    assert_eq!(r.objective.len(), 7);
    // Ψ(0) is the smoothing floor T·|Ω|
    let floor = 1e2 * 1e-6 * c.mesh.volume();
    assert_relative_eq!(r.objective[0], 0.5 * problem.b().norm_squared() + floor, max_relative = 1e-12);
    // rounding of an objective of order 1e5 alone is a few 1e-11
    for k in 1..r.objective.len() {
        assert!(r.objective[k] <= r.objective[k - 1] * (1.0 + 1e-12));
    }
    assert_eq!(solver.objective(&r.w).unwrap(), r.objective[6]);
}
