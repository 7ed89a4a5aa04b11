use approx::assert_relative_eq;
use eitproj_core::forward::ConductivityField;
use eitproj_core::mesh::generate_box_mesh;
use eitproj_core::sampling::{
    draw_contacts, draw_lognormal_field, draw_rng, make_noise, region_nodes, LognormalSampler, NoiseModel,
    RandomDrawConfig,
};
use eitproj_core::Error;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contacts_lie_in_the_law_support(seed in any::<u64>(), draw in any::<u64>(), m in 1usize..40) {
        let cfg = RandomDrawConfig::default();
        let z = draw_contacts(&cfg, m, &mut draw_rng(seed, draw));
        prop_assert_eq!(z.len(), m);
        for v in &z {
            prop_assert!(*v >= 10.0 && *v < 10.0 + 600.0 + 380.0);
        }
        // same seed and stream give the same draw
        prop_assert_eq!(z, draw_contacts(&cfg, m, &mut draw_rng(seed, draw)));
    }

    #[test]
    fn noise_scales_with_data_range(fraction in 1e-4f64..0.1, scale in 1e-6f64..1e3) {
        let data = DVector::from_fn(50, |i, _| scale * ((i as f64) * 0.37).sin());
        let noise = make_noise(&data, fraction).unwrap();
        let range = data.max() - data.min();
        prop_assert!((noise.std / (fraction * range) - 1.0).abs() < 1e-12);
        prop_assert_eq!(noise.fraction, Some(fraction));
    }
}

#[test]
fn streams_are_independent() {
    let a: Vec<u64> = (0..8).map(|_| draw_rng(1, 0).random()).collect();
    let mut r0 = draw_rng(1, 0);
    let mut r1 = draw_rng(1, 1);
    let mut r2 = draw_rng(2, 0);
    let x0: u64 = r0.random();
    assert_eq!(x0, a[0]);
    assert_ne!(x0, r1.random::<u64>());
    assert_ne!(x0, r2.random::<u64>());
}

#[test]
fn lognormal_field_only_changes_the_region() {
    let mut mesh = generate_box_mesh([0.04, 0.04, 0.02], [6, 6, 3]).unwrap();
    // relabel the lower half of the elements as the sampling region
    let labels: Vec<i32> = mesh.tets().iter().map(|t| if t.iter().all(|&v| mesh.nodes()[v].z <= 0.01) { 1 } else { 0 }).collect();
    mesh = eitproj_core::Mesh::new(mesh.nodes().to_vec(), mesh.tets().to_vec(), labels, None).unwrap();
    let region = region_nodes(&mesh, 1);
    assert!(!region.is_empty() && region.len() < mesh.n_nodes());
    assert!(region.windows(2).all(|w| w[0] < w[1]));
    let background = ConductivityField::constant(mesh.n_nodes(), 0.0491).unwrap();
    let cfg = RandomDrawConfig::default();
    let field = draw_lognormal_field(&cfg, &mesh, &region, &background, &mut draw_rng(4, 0)).unwrap();
    for (i, (&v, x)) in field.values().iter().zip(mesh.nodes()).enumerate() {
        if region.binary_search(&i).is_err() {
            assert_eq!(v, 0.0491);
        } else {
            assert!(v > 0.0);
            assert!(x.z <= 0.01);
        }
    }

    // zero variance gives the median everywhere in the region
    let flat = RandomDrawConfig { log_std: 0.0, ..cfg.clone() };
    let s = LognormalSampler::new(&flat, &mesh, &region).unwrap();
    let k = s.draw_log(&mut draw_rng(4, 1));
    assert!(k.iter().all(|&v| v == 0.2f64.ln()));
}

#[test]
fn neighbouring_nodes_are_strongly_correlated() {
    let mesh = generate_box_mesh([0.004, 0.004, 0.004], [1, 1, 1]).unwrap();
    let region: Vec<usize> = (0..mesh.n_nodes()).collect();
    let cfg = RandomDrawConfig::default();
    let s = LognormalSampler::new(&cfg, &mesh, &region).unwrap();
    // nodes 0 and 1 are 4 mm apart: correlation exp(-d²/(2ℓ²))
    let d2: f64 = (mesh.nodes()[0] - mesh.nodes()[1]).norm_squared();
    let expected = (-d2 / (2.0 * 0.02f64.powi(2))).exp();
    let n = 20_000;
    let (mut sxy, mut sxx, mut syy, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for d in 0..n {
        let k = s.draw_log(&mut draw_rng(5, d));
        let (x, y) = (k[0], k[1]);
        sx += x;
        sy += y;
        sxy += x * y;
        sxx += x * x;
        syy += y * y;
    }
    let nf = n as f64;
    let cov = sxy / nf - sx * sy / nf / nf;
    let corr = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
    assert!((corr - expected).abs() < 0.01, "correlation {corr} vs {expected}");
    assert_relative_eq!(sx / nf, 0.2f64.ln(), epsilon = 0.02);
}

#[test]
fn invalid_configurations() {
    let mesh = generate_box_mesh([0.01, 0.01, 0.01], [1, 1, 1]).unwrap();
    let bad = RandomDrawConfig { correlation_length: 0.0, ..Default::default() };
    assert!(matches!(LognormalSampler::new(&bad, &mesh, &[0]), Err(Error::Config(_))));
    assert!(matches!(LognormalSampler::new(&RandomDrawConfig::default(), &mesh, &[]), Err(Error::Config(_))));
    assert!(matches!(LognormalSampler::new(&RandomDrawConfig::default(), &mesh, &[99]), Err(Error::Config(_))));
    assert!(NoiseModel::with_std(0.0).is_err());
    assert!(make_noise(&DVector::from_element(4, 1.0), 0.01).is_err());
}
