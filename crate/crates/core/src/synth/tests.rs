use super::*;
use crate::seg_metrics::overlap;

fn spec(family: Family, n: usize, dims: usize, spacing: f64) -> CohortSpec {
    CohortSpec { family, n_shapes: n, dims: [dims; 3], spacing: [spacing; 3], seed: 3, noise: None }
}

fn ball(radius: f64) -> Volume {
    let s = spec(Family::Sphere { radius: Range::fixed(radius) }, 1, 2 * radius as usize + 9, 1.0);
    generate(&s).unwrap().volumes.remove(0)
}

#[test]
fn zero_width_range_gives_identical_masks() {
    let c = generate(&spec(Family::Sphere { radius: Range::fixed(5.0) }, 4, 16, 1.0)).unwrap();
    assert_eq!(c.volumes.len(), 4);
    assert!(c.volumes.windows(2).all(|w| w[0] == w[1]));
    assert!(c.volumes[0].foreground_count() > 0);
    assert!(c.latent.iter().all(|p| p == &vec![5.0]));
}

#[test]
fn ellipsoid_latents_vary_in_one_coordinate() {
    let family = Family::Ellipsoid { a: Range::new(8.0, 12.0), b: Range::fixed(6.0), c: Range::fixed(6.0) };
    let c = generate(&spec(family, 16, 30, 1.0)).unwrap();
    let varying: Vec<usize> = (0..3)
        .filter(|&j| c.latent.iter().any(|p| p[j] != c.latent[0][j]))
        .collect();
    assert_eq!(varying, vec![0]);
    assert!(c.latent.iter().all(|p| (8.0..=12.0).contains(&p[0])));
}

// Analytic volume by quadrature over (x, y) of the z half-height.
fn superquadric_volume(a: f64, b: f64, c: f64, e: f64) -> f64 {
    let q = 2.0 / e;
    let n = 2000;
    let (hx, hy) = (2.0 * a / n as f64, 2.0 * b / n as f64);
    let mut sum = 0.0;
    for i in 0..n {
        let x = -a + (i as f64 + 0.5) * hx;
        for j in 0..n {
            let y = -b + (j as f64 + 0.5) * hy;
            let rest = 1.0 - (x / a).abs().powf(q) - (y / b).abs().powf(q);
            if rest > 0.0 {
                sum += 2.0 * c * rest.powf(1.0 / q);
            }
        }
    }
    sum * hx * hy
}

#[test]
fn superquadric_voxel_volume_matches_quadrature() {
    let family = Family::Superquadric {
        a: Range::new(5.0, 8.0),
        b: Range::new(5.0, 8.0),
        c: Range::new(4.0, 6.0),
        exponent: Range::new(0.5, 1.5),
    };
    let c = generate(&spec(family, 3, 40, 0.5)).unwrap();
    assert_eq!(c.param_names, ["a", "b", "c", "exponent"]);
    for (v, p) in c.volumes.iter().zip(&c.latent) {
        let voxels = v.foreground_count() as f64 * 0.125;
        let exact = superquadric_volume(p[0], p[1], p[2], p[3]);
        assert!((voxels / exact - 1.0).abs() < 0.03, "{p:?}: {voxels} vs {exact}");
    }
}

#[test]
fn cohorts_are_seeded_per_shape() {
    let family = Family::Ellipsoid { a: Range::new(4.0, 6.0), b: Range::new(4.0, 6.0), c: Range::fixed(4.0) };
    let s = spec(family, 5, 20, 1.0);
    let a = generate(&s).unwrap();
    assert_eq!(a, generate(&s).unwrap());
    // a longer cohort extends a shorter one
    let longer = generate(&CohortSpec { n_shapes: 8, ..s.clone() }).unwrap();
    assert_eq!(longer.latent[..5], a.latent[..]);
    let other = generate(&CohortSpec { seed: 4, ..s }).unwrap();
    assert_ne!(other.latent, a.latent);
}

#[test]
fn margin_and_ranges_are_checked() {
    assert!(generate(&spec(Family::Sphere { radius: Range::fixed(7.0) }, 1, 16, 1.0)).is_err());
    assert!(generate(&spec(Family::Sphere { radius: Range::fixed(5.0) }, 1, 16, 1.0)).is_ok());
    assert!(generate(&spec(Family::Sphere { radius: Range::new(3.0, 2.0) }, 1, 16, 1.0)).is_err());
    assert!(generate(&spec(Family::Sphere { radius: Range::fixed(0.0) }, 1, 16, 1.0)).is_err());
    let bad = NoiseSpec { mode: NoiseMode::BoundaryFlip { probability: 1.5 }, seed: 0 };
    assert!(bad.validate().is_err());
}

#[test]
fn zero_noise_is_identity() {
    let v = ball(5.0);
    for mode in [
        NoiseMode::DilateErode { max_radius: 0 },
        NoiseMode::BoundaryFlip { probability: 0.0 },
        NoiseMode::DropoutLobe { radius: 0.0, count: 3 },
        NoiseMode::DropoutLobe { radius: 4.0, count: 0 },
    ] {
        assert_eq!(corrupt(&v, &NoiseSpec { mode, seed: 9 }), v);
    }
}

#[test]
fn certain_flip_inverts_the_boundary_band() {
    let v = ball(4.0);
    let out = corrupt(&v, &NoiseSpec { mode: NoiseMode::BoundaryFlip { probability: 1.0 }, seed: 1 });
    let bits = v.mask_bits();
    for i in 0..v.len() {
        let flipped = v.is_foreground(i) != out.is_foreground(i);
        assert_eq!(flipped, on_boundary(&v, &bits, i));
    }
}

#[test]
fn dilated_sphere_dice_matches_counts() {
    let v = ball(10.0);
    let d = dilate(&v, 1);
    let (a, b) = (v.foreground_count(), d.foreground_count());
    let both = (0..v.len()).filter(|&i| v.is_foreground(i) && d.is_foreground(i)).count();
    assert_eq!(both, a);
    assert_eq!(overlap(&v, &d).unwrap().dice, 2.0 * a as f64 / (a + b) as f64);
    // erosion stays inside the original
    let e = erode(&v, 1);
    assert!((0..v.len()).all(|i| !e.is_foreground(i) || v.is_foreground(i)));
    assert!(e.foreground_count() < a);
}

#[test]
fn dropout_only_removes_foreground() {
    let v = ball(8.0);
    let out = corrupt(&v, &NoiseSpec { mode: NoiseMode::DropoutLobe { radius: 4.0, count: 2 }, seed: 5 });
    assert!(out.foreground_count() < v.foreground_count());
    assert!((0..v.len()).all(|i| !out.is_foreground(i) || v.is_foreground(i)));
    // bites start at the surface, not in the interior
    let bits = v.mask_bits();
    assert!((0..v.len()).any(|i| bits[i] && on_boundary(&v, &bits, i) && !out.is_foreground(i)));
}

#[test]
fn noisy_cohort_and_latent_csv() {
    let mut s = spec(Family::Sphere { radius: Range::new(3.0, 4.0) }, 3, 14, 1.0);
    s.noise = Some(NoiseSpec { mode: NoiseMode::DilateErode { max_radius: 1 }, seed: 2 });
    let c = generate(&s).unwrap();
    assert_eq!(c.corrupted.as_ref().unwrap().len(), 3);
    let mut buf = Vec::new();
    c.write_latent(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "shape_id,radius");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("shape_000,"));
}

#[test]
fn spec_parses_from_json() {
    let text = r#"{"family":{"ellipsoid":{"a":[8,12],"b":[6,6],"c":[6,6]}},"n_shapes":4,
        "dims":[32,32,32],"spacing":[1,1,1],"seed":1,
        "noise":{"mode":{"dropout_lobe":{"radius":3,"count":1}},"seed":2}}"#;
    let s: CohortSpec = serde_json::from_str(text).unwrap();
    assert_eq!(s.family, Family::Ellipsoid { a: Range::new(8.0, 12.0), b: Range::fixed(6.0), c: Range::fixed(6.0) });
    assert!(matches!(s.noise.unwrap().mode, NoiseMode::DropoutLobe { count: 1, .. }));
}
