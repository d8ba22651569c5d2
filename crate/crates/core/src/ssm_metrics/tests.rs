use super::*;
use crate::particles::{flatten, Vec3};
use crate::shapespace::fit_pca;
use rand::Rng;

fn model_from(mean: DVector<f64>, modes: DMatrix<f64>, eigenvalues: Vec<f64>) -> ShapeModel {
    ShapeModel {
        n_particles: mean.len() / 3,
        n_train: eigenvalues.len() + 1,
        mean,
        modes,
        eigenvalues,
        aligned: false,
        scaling: false,
    }
}

fn random_system(m: usize, n: usize, seed: u64) -> ParticleSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let shapes = (0..m)
        .map(|_| base.iter().map(|p| p + Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2))).collect())
        .collect();
    ParticleSystem::new((0..m).map(|i| format!("s{i}")).collect(), shapes).unwrap()
}

fn unit(dim: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(dim);
    v[i] = 1.0;
    v
}

fn values(c: &MetricCurve) -> Vec<f64> {
    c.values.iter().map(|(_, v)| *v).collect()
}

#[test]
fn compactness_of_a_spectrum() {
    let c = compactness_from_eigenvalues(&[4.0, 1.0, 0.0]);
    assert_eq!(values(&c), vec![0.8, 1.0, 1.0]);
    assert!((c.summary - 2.8 / 3.0).abs() < 1e-15);
    assert_eq!(c.values.iter().map(|(k, _)| *k).collect::<Vec<_>>(), vec![1, 2, 3]);

    let single = compactness_from_eigenvalues(&[3.0, 0.0, 0.0]);
    assert!(values(&single).iter().all(|&v| v == 1.0));
    assert_eq!(single.summary, 1.0);

    let flat = compactness_from_eigenvalues(&[2.0; 4]);
    assert_eq!(values(&flat), vec![0.25, 0.5, 0.75, 1.0]);
    assert!((flat.summary - 0.625).abs() < 1e-15);
}

#[test]
fn zero_spectrum_is_degenerate_and_perfect() {
    let c = compactness_from_eigenvalues(&[0.0, 0.0]);
    assert!(c.degenerate);
    assert!(values(&c).iter().all(|&v| v == 1.0));
    assert!(compactness_from_eigenvalues(&[]).degenerate);
}

#[test]
fn compactness_is_monotone_and_ends_at_one() {
    let model = fit_pca(&random_system(9, 12, 3), true).unwrap();
    let v = values(&compactness(&model));
    assert!(v.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(*v.last().unwrap(), 1.0);
}

#[test]
fn specificity_is_zero_without_variance() {
    let pts = vec![vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 2.0)]; 3];
    let sys = ParticleSystem::new(vec!["a".into(), "b".into(), "c".into()], pts).unwrap();
    let model = fit_pca(&sys, false).unwrap();
    assert!(model.eigenvalues.iter().all(|&l| l == 0.0));
    let c = specificity(&model, &sys, 3, 50, 1).unwrap();
    assert!(values(&c).iter().all(|&v| v == 0.0));
}

// Two shapes: samples lie on the line through both, so the nearest-shape
// distance is | |z| sqrt(lambda) - h | times the mode's mean per-particle norm,
// with h half the separation. Oracle: quadrature over the normal density.
#[test]
fn specificity_of_two_shapes_matches_quadrature() {
    let sys = random_system(2, 5, 11);
    let model = fit_pca(&sys, false).unwrap();
    assert_eq!(model.n_modes(), 1);
    let lambda = model.eigenvalues[0];
    let mode = model.modes.column(0).into_owned();
    let w = mean_particle_distance(&mode, &DVector::zeros(mode.len()));
    let h = (sys.shape_vector(0) - sys.shape_vector(1)).norm() / 2.0;

    let density = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let steps = 200_000;
    let (lo, hi) = (-10.0, 10.0);
    let dz = (hi - lo) / steps as f64;
    let expected: f64 = (0..steps)
        .map(|i| {
            let z = lo + (i as f64 + 0.5) * dz;
            (z.abs() * lambda.sqrt() - h).abs() * w * density(z) * dz
        })
        .sum();

    let got = specificity(&model, &sys, 1, 20_000, 5).unwrap().values[0].1;
    assert!((got - expected).abs() <= 0.02 * expected, "{got} vs {expected}");
}

#[test]
fn specificity_is_seeded() {
    let sys = random_system(6, 8, 2);
    let model = fit_pca(&sys, true).unwrap();
    let a = specificity(&model, &sys, 3, 200, 9).unwrap();
    let b = specificity(&model, &sys, 3, 200, 9).unwrap();
    let c = specificity(&model, &sys, 3, 200, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(specificity(&model, &sys, 3, 0, 9).is_err());
}

#[test]
fn specificity_and_generalization_scale_with_the_cohort() {
    for align in [false, true] {
        let sys = random_system(7, 10, 4);
        let test = random_system(3, 10, 5);
        let model = fit_pca(&sys, align).unwrap();
        let model2 = fit_pca(&sys.scaled(2.0), align).unwrap();
        let s1 = specificity(&model, &sys, 4, 100, 3).unwrap();
        let s2 = specificity(&model2, &sys.scaled(2.0), 4, 100, 3).unwrap();
        let g1 = generalization(&model, &test, 4).unwrap();
        let g2 = generalization(&model2, &test.scaled(2.0), 4).unwrap();
        for (a, b) in values(&s1).iter().zip(values(&s2)).chain(values(&g1).iter().zip(values(&g2))) {
            assert!((b - 2.0 * a).abs() <= 1e-12 * a.abs().max(1e-300), "{a} {b}");
        }
    }
}

#[test]
fn generalization_of_the_mean_is_zero() {
    let sys = random_system(5, 6, 7);
    let model = fit_pca(&sys, false).unwrap();
    let mean = ParticleSystem::new(vec!["m".into()], vec![crate::particles::unflatten(&model.mean)]).unwrap();
    let c = generalization(&model, &mean, model.n_modes()).unwrap();
    assert!(values(&c).iter().all(|&v| v < 1e-14));
}

#[test]
fn generalization_of_a_point_in_the_first_mode() {
    let sys = random_system(5, 6, 8);
    let model = fit_pca(&sys, false).unwrap();
    let offset = 3.0 * model.eigenvalues[0].sqrt();
    let shape = &model.mean + model.modes.column(0) * offset;
    let test = ParticleSystem::new(vec!["t".into()], vec![crate::particles::unflatten(&shape)]).unwrap();
    let c = generalization(&model, &test, model.n_modes()).unwrap();
    assert!(values(&c).iter().all(|&v| v < 1e-12));
    let baseline = reconstruction_error(&model, &[shape.clone()], 0).unwrap();
    let expected = mean_particle_distance(&(model.modes.column(0) * offset), &DVector::zeros(shape.len()));
    assert!((baseline - expected).abs() < 1e-12);
}

#[test]
fn generalization_matches_dense_projection() {
    let sys = random_system(8, 7, 12);
    let test = random_system(4, 7, 13);
    let model = fit_pca(&sys, false).unwrap();
    let c = generalization(&model, &test, model.n_modes()).unwrap();
    let dim = model.dim();
    for (k, v) in &c.values {
        let q = model.modes.columns(0, *k).into_owned();
        let proj = DMatrix::<f64>::identity(dim, dim) - &q * q.transpose();
        let expected: f64 = test
            .shape_vectors()
            .iter()
            .map(|s| {
                let r = &proj * (s - &model.mean);
                r.as_slice().chunks_exact(3).map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).sum::<f64>() / 7.0
            })
            .sum::<f64>()
            / 4.0;
        assert!((v - expected).abs() < 1e-10, "k {k}: {v} vs {expected}");
    }
}

#[test]
fn generalization_does_not_increase_with_modes() {
    let sys = random_system(10, 9, 21);
    let test = random_system(4, 9, 22);
    for align in [false, true] {
        let model = fit_pca(&sys, align).unwrap();
        let v = values(&generalization(&model, &test, model.n_modes()).unwrap());
        assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{v:?}");
    }
}

#[test]
fn generalization_rejects_particle_mismatch() {
    let model = fit_pca(&random_system(4, 6, 1), false).unwrap();
    assert!(generalization(&model, &random_system(2, 5, 2), 1).is_err());
}

#[test]
fn grassmannian_of_identical_models_is_zero() {
    let model = fit_pca(&random_system(8, 10, 30), true).unwrap();
    let c = grassmannian(&model, &model, model.n_modes()).unwrap();
    assert!(values(&c).iter().all(|&v| v.abs() <= 1e-10), "{:?}", values(&c));
}

#[test]
fn principal_angles_of_simple_subspaces() {
    let e1 = DMatrix::from_columns(&[unit(6, 0)]);
    let e2 = DMatrix::from_columns(&[unit(6, 1)]);
    assert!((grassmann_distance(&e1, &e2).unwrap() - std::f64::consts::FRAC_PI_2).abs() <= 1e-9);

    let t = std::f64::consts::PI / 6.0;
    let tilted = DMatrix::from_columns(&[unit(6, 0) * t.cos() + unit(6, 1) * t.sin()]);
    assert!((grassmann_distance(&e1, &tilted).unwrap() - t).abs() <= 1e-9);

    // two planes sharing one axis, the other pair at 30 degrees
    let a = DMatrix::from_columns(&[unit(6, 0), unit(6, 2)]);
    let b = DMatrix::from_columns(&[unit(6, 0), unit(6, 2) * t.cos() + unit(6, 3) * t.sin()]);
    let angles = principal_angles(&a, &b).unwrap();
    assert!(angles[0].abs() < 1e-12 && (angles[1] - t).abs() < 1e-12);
}

#[test]
fn grassmannian_ignores_mode_signs_and_common_rotations() {
    let a = fit_pca(&random_system(7, 5, 40), false).unwrap();
    let b = fit_pca(&random_system(7, 5, 41), false).unwrap();
    let k = a.n_modes().min(b.n_modes());
    let d = grassmannian(&a, &b, k).unwrap();

    let mut flipped = b.clone();
    for j in (0..k).step_by(2) {
        flipped.modes.column_mut(j).neg_mut();
    }
    let df = grassmannian(&a, &flipped, k).unwrap();
    for (x, y) in values(&d).iter().zip(values(&df)) {
        assert!((x - y).abs() <= 1e-12);
    }

    let sym = grassmannian(&b, &a, k).unwrap();
    for (x, y) in values(&d).iter().zip(values(&sym)) {
        assert!((x - y).abs() <= 1e-12);
    }

    // random orthogonal transform applied to both bases
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = a.dim();
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let q = g.qr().q();
    let (mut ra, mut rb) = (a.clone(), b.clone());
    ra.modes = &q * &a.modes;
    rb.modes = &q * &b.modes;
    let dr = grassmannian(&ra, &rb, k).unwrap();
    for (x, y) in values(&d).iter().zip(values(&dr)) {
        assert!((x - y).abs() <= 1e-10);
    }
}

#[test]
fn grassmannian_checks_dimensions_and_k() {
    let a = fit_pca(&random_system(4, 5, 1), false).unwrap();
    let b = fit_pca(&random_system(4, 6, 2), false).unwrap();
    assert!(grassmannian(&a, &b, 1).is_err());
    assert!(grassmannian(&a, &a, a.n_modes() + 1).is_err());
    assert!(grassmannian(&a, &a, 0).is_err());
}

#[test]
fn curve_csv_has_rows_and_summary() {
    let c = compactness_from_eigenvalues(&[3.0, 1.0]);
    let mut buf = Vec::new();
    c.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text, "metric,k,value\ncompactness,1,0.75\ncompactness,2,1\ncompactness,AUC,0.875\n");
}

#[test]
fn metric_names_round_trip() {
    for m in Metric::ALL {
        assert_eq!(m.name().parse::<Metric>().unwrap(), m);
    }
    assert!("dice".parse::<Metric>().is_err());
}

#[test]
fn hand_built_model_projects_exactly() {
    let mean = DVector::zeros(6);
    let modes = DMatrix::from_columns(&[unit(6, 0)]);
    let model = model_from(mean, modes, vec![4.0]);
    let shape = flatten(&[Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.0)]);
    assert_eq!(reconstruction_error(&model, &[shape.clone()], 1).unwrap(), 0.0);
    assert_eq!(reconstruction_error(&model, &[shape], 0).unwrap(), 1.0);
}
