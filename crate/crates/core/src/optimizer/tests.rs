use super::*;
use crate::geometry::SurfaceMesh;
use crate::shapespace::fit_pca;

fn sphere(r: f64) -> SurfaceIndex {
    SurfaceIndex::build(SurfaceMesh::icosphere(4).map_vertices(|v| v * r)).unwrap()
}

fn ellipsoid(a: f64, b: f64, c: f64) -> SurfaceIndex {
    SurfaceIndex::build(SurfaceMesh::icosphere(4).map_vertices(|v| Vec3::new(a * v.x, b * v.y, c * v.z))).unwrap()
}

fn params(n: usize) -> OptimizerParams {
    OptimizerParams {
        target_particles: n,
        iterations_per_split: 60,
        max_iterations_final: 600,
        ..Default::default()
    }
}

fn max_surface_distance(res: &OptimizationResult, surfaces: &[SurfaceIndex]) -> f64 {
    res.system
        .particles
        .iter()
        .zip(surfaces)
        .flat_map(|(pts, s)| pts.iter().map(move |p| s.closest_point(p).distance / s.diagonal()))
        .fold(0.0, f64::max)
}

#[test]
fn single_particle_lands_on_the_sphere() {
    let s = [sphere(1.0)];
    let res = optimize(&s, InitCondition::Origin, &params(1)).unwrap();
    assert_eq!(res.system.n_particles(), 1);
    assert!((res.system.particles[0][0].norm() - 1.0).abs() < 1e-2);
}

#[test]
fn identical_surfaces_give_identical_particles() {
    let s = [sphere(1.0), sphere(1.0)];
    let res = optimize(&s, InitCondition::Origin, &params(32)).unwrap();
    let diag = s[0].diagonal();
    let spread = res.system.particles[0]
        .iter()
        .zip(&res.system.particles[1])
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(spread < 1e-6 * diag, "spread {spread}");
    assert!(max_surface_distance(&res, &s) < 1e-3);
}

#[test]
fn sphere_family_has_one_dominant_mode() {
    let s: Vec<SurfaceIndex> = (0..8).map(|i| sphere(1.0 + 0.1 * i as f64)).collect();
    let res = optimize(&s, InitCondition::Origin, &params(64)).unwrap();
    assert!(max_surface_distance(&res, &s) < 1e-3);
    let model = fit_pca(&res.system, true).unwrap();
    let ratio = model.eigenvalues[0] / model.total_variance();
    assert!(ratio >= 0.95, "mode-1 ratio {ratio}");
}

// The warm-start objective differs from the one the template minimised (the
// template is duplicated in the covariance) and is nearly flat along the
// template's own modes, so re-optimisation settles a few 1e-3 diag away.
#[test]
#[ignore = "not attainable: see decisions log, warm-start fixed point"]
fn warm_start_of_template_cohort_is_a_fixed_point() {
    let s: Vec<SurfaceIndex> = (0..4)
        .map(|i| ellipsoid(1.6 + 0.1 * i as f64, 1.0, 0.7 + 0.05 * i as f64))
        .collect();
    let p = params(32);
    let template = optimize(&s, InitCondition::Origin, &p).unwrap().system;
    let again = warmstart_optimize(&s, &template, &p).unwrap().system;
    for (i, surf) in s.iter().enumerate() {
        let worst = template.particles[i]
            .iter()
            .zip(&again.particles[i])
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-3 * surf.diagonal(), "shape {i}: {worst}");
    }
}

#[test]
fn warm_started_sphere_scores_between_its_neighbours() {
    let radii: Vec<f64> = (0..8).map(|i| 1.0 + 0.1 * i as f64).collect();
    let s: Vec<SurfaceIndex> = radii.iter().map(|&r| sphere(r)).collect();
    let p = params(64);
    let template = optimize(&s, InitCondition::Origin, &p).unwrap().system;
    let model = fit_pca(&template, true).unwrap();
    let new = warmstart_optimize(&[sphere(1.35)], &template, &p).unwrap().system;
    let score = |pts: &[Vec3]| {
        let v = crate::particles::flatten(pts);
        model.project(&model.align(&v), 1).unwrap()[0]
    };
    let (lo, hi) = (score(&template.particles[3]), score(&template.particles[4]));
    let x = score(&new.particles[0]);
    assert!((lo.min(hi)..=lo.max(hi)).contains(&x), "{lo} {x} {hi}");
}

#[test]
fn template_size_must_match() {
    let s = [sphere(1.0)];
    let template = ParticleSystem::new(vec!["t".into()], vec![vec![Vec3::x(); 64]]).unwrap();
    assert!(warmstart_optimize(&s, &template, &params(32)).is_err());
}

#[test]
fn spread_particles_have_higher_sampling_entropy() {
    let mesh = SurfaceMesh::icosphere(2);
    let mut spread: Vec<Vec3> = mesh.vertices.clone();
    spread.truncate(128);
    let octant: Vec<Vec3> = (0..128)
        .map(|i| {
            let u = (i % 16) as f64 / 16.0 * std::f64::consts::FRAC_PI_2;
            let w = (i / 16) as f64 / 8.0 * std::f64::consts::FRAC_PI_2;
            Vec3::new(w.sin() * u.cos(), w.sin() * u.sin(), w.cos()) + Vec3::repeat(1e-3 * i as f64)
        })
        .collect();
    let p = OptimizerParams::default();
    let a = objective(&ParticleSystem::new(vec!["a".into()], vec![spread]).unwrap(), &p).unwrap();
    let b = objective(&ParticleSystem::new(vec!["b".into()], vec![octant]).unwrap(), &p).unwrap();
    assert!(a.sampling > b.sampling, "{} vs {}", a.sampling, b.sampling);
}

#[test]
fn objective_needs_two_particles() {
    let sys = ParticleSystem::new(vec!["a".into()], vec![vec![Vec3::x()]]).unwrap();
    assert!(objective(&sys, &OptimizerParams::default()).is_err());
}

#[test]
fn accepted_steps_never_increase_the_objective() {
    let s: Vec<SurfaceIndex> = (0..3).map(|i| ellipsoid(1.0 + 0.2 * i as f64, 1.0, 0.8)).collect();
    let p = params(16);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seeds: Vec<Vec<Vec3>> = s.iter().map(|x| vec![seed_point(x)]).collect();
    let mut opt = Optimizer::new(&s, Vec::new(), seeds, p).unwrap();
    for _ in 0..4 {
        opt.split(&mut rng);
    }
    for i in 0..200 {
        let r = opt.step(if i < 50 { 0.0 } else { 1.0 });
        assert!(r.after.total <= r.before.total);
        if !r.accepted {
            assert_eq!(r.max_move, 0.0);
        }
    }
}

#[test]
fn runs_are_bitwise_deterministic() {
    let s: Vec<SurfaceIndex> = (0..3).map(|i| ellipsoid(1.0, 1.0 + 0.2 * i as f64, 0.8)).collect();
    let p = params(16);
    let a = optimize(&s, InitCondition::Origin, &p).unwrap();
    let b = optimize(&s, InitCondition::Origin, &p).unwrap();
    assert_eq!(a.system, b.system);
    assert_eq!(a.log, b.log);
    let c = optimize(&s, InitCondition::Origin, &OptimizerParams { seed: 7, ..p }).unwrap();
    assert_ne!(a.system, c.system);
}

#[test]
fn split_children_descend_from_their_parent() {
    let s: Vec<SurfaceIndex> = (0..2).map(|i| sphere(1.0 + 0.5 * i as f64)).collect();
    let seeds: Vec<Vec<Vec3>> = s.iter().map(|x| vec![seed_point(x)]).collect();
    let mut opt = Optimizer::new(&s, Vec::new(), seeds, params(8)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    opt.split(&mut rng);
    opt.split(&mut rng);
    let parents = opt.free_shapes().to_vec();
    opt.split(&mut rng);
    for (f, surf) in s.iter().enumerate() {
        let offset = SPLIT_OFFSET * (surf.area() / 8.0).sqrt();
        for k in 0..4 {
            for child in [2 * k, 2 * k + 1] {
                let d = (opt.free_shapes()[f][child] - parents[f][k]).norm();
                assert!(d <= 1.01 * offset && d > 0.0);
            }
        }
    }
}

#[test]
fn symmetric_configuration_does_not_move() {
    // axis-aligned cube, one particle at each face centre
    let cube = {
        let v: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new(if i & 1 == 0 { -1.0 } else { 1.0 }, if i & 2 == 0 { -1.0 } else { 1.0 }, if i & 4 == 0 { -1.0 } else { 1.0 }))
            .collect();
        let q = |a, b, c, d| [[a, b, c], [a, c, d]];
        let faces = [
            q(0, 2, 3, 1), q(4, 5, 7, 6), q(0, 1, 5, 4), q(2, 6, 7, 3), q(0, 4, 6, 2), q(1, 3, 7, 5),
        ]
        .concat();
        SurfaceMesh { vertices: v, faces }
    };
    assert!(cube.signed_volume() > 0.0);
    let s = [SurfaceIndex::build(cube).unwrap()];
    let pts = vec![Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()];
    let sys = ParticleSystem::new(vec!["c".into()], vec![pts.clone()]).unwrap();
    let (out, r) = step(&sys, &s, &OptimizerParams::default()).unwrap();
    assert!(r.max_move < 1e-12, "{}", r.max_move);
    for (a, b) in out.particles[0].iter().zip(&pts) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn log_round_trips_as_json() {
    let s = [sphere(1.0), sphere(1.2)];
    let res = optimize(&s, InitCondition::Origin, &params(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.json");
    res.write_log(&path).unwrap();
    let back: Vec<LogEntry> = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(back, res.log);
    assert!(!res.log.is_empty());
}
