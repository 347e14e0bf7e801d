use polycond::poly::{
    model_constants, multinomial, read_jsonl, system_norms, write_jsonl, HomogeneousPoly, MultiIndex, PolySystem,
};
use polycond::random::{sample_poly, sample_system, RngStream};
use proptest::prelude::*;

fn poly(d: u32, nv: usize, terms: &[(&[u32], f64)]) -> HomogeneousPoly {
    let t: Vec<(Vec<u32>, f64)> = terms.iter().map(|(e, c)| (e.to_vec(), *c)).collect();
    HomogeneousPoly::from_terms(d, nv, &t).unwrap()
}

fn random_poly(seed: u64, d: u32, nv: usize) -> HomogeneousPoly {
    sample_poly(d, nv, &mut RngStream::new(seed, 0).rng()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn multinomial_examples() {
    assert_eq!(multinomial(2, &MultiIndex::new(vec![1, 1])).unwrap(), 2);
    assert_eq!(multinomial(3, &MultiIndex::new(vec![3, 0])).unwrap(), 1);
    assert_eq!(multinomial(3, &MultiIndex::new(vec![1, 2])).unwrap(), 3);
    assert!(multinomial(3, &MultiIndex::new(vec![1, 1])).is_err());
    assert!(multinomial(200, &MultiIndex::new(vec![100, 100])).is_err());
}

#[test]
fn evaluation_examples() {
    let f = poly(3, 2, &[(&[2, 1], 1.0)]);
    assert_eq!(f.eval(&[1.0, 2.0]).unwrap(), 2.0);
    let sq = poly(2, 2, &[(&[2, 0], 1.0)]);
    assert_eq!(sq.eval(&[1.0, 0.0]).unwrap(), 1.0);
    assert_eq!(random_poly(1, 3, 4).eval(&[0.0; 4]).unwrap(), 0.0);
    assert!(sq.eval(&[1.0, 0.0, 0.0]).is_err());
}

#[test]
fn derivative_examples() {
    let xy = poly(2, 2, &[(&[1, 1], 1.0)]);
    assert_eq!(xy.gradient(&[1.0, 0.0]).unwrap(), vec![0.0, 1.0]);
    assert_eq!(xy.hessian(&[0.3, -0.2]).unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
    let sq = poly(2, 3, &[(&[2, 0, 0], 1.0)]);
    assert_eq!(sq.gradient(&[2.0, 1.0, 5.0]).unwrap(), vec![4.0, 0.0, 0.0]);
    assert_eq!(
        sq.hessian(&[2.0, 1.0, 5.0]).unwrap(),
        vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    );
    assert!(sq.gradient(&[1.0]).is_err());
}

#[test]
fn weyl_norm_examples() {
    assert!((poly(2, 2, &[(&[2, 0], 3.0)]).weyl_norm() - 3.0).abs() < 1e-15);
    assert!((poly(2, 2, &[(&[1, 1], 1.0)]).weyl_norm() - 0.5f64.sqrt()).abs() < 1e-15);
    assert!((poly(2, 2, &[(&[2, 0], 1.0), (&[0, 2], 1.0)]).weyl_norm() - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn system_norm_examples() {
    let f = PolySystem::new(vec![
        poly(2, 3, &[(&[1, 1, 0], 1.0)]),
        poly(2, 3, &[(&[1, 0, 1], 1.0)]),
    ])
    .unwrap();
    let s = system_norms(&f);
    assert!((s.max_weyl - 0.5f64.sqrt()).abs() < 1e-15);
    assert!((s.l2_weyl - 1.0).abs() < 1e-15);
    let g = PolySystem::new(vec![poly(2, 2, &[(&[2, 0], 3.0)])]).unwrap();
    let s = system_norms(&g);
    assert!((s.max_weyl - 3.0).abs() < 1e-15 && (s.l2_weyl - 3.0).abs() < 1e-15);
    assert!(PolySystem::new(vec![poly(2, 2, &[(&[2, 0], 1.0)]), poly(2, 2, &[(&[0, 2], 1.0)])]).is_err());
}

#[test]
fn model_constant_examples() {
    let c = model_constants(&[2, 2, 2]).unwrap();
    assert_eq!((c.max_degree, c.bezout, c.dim), (2, 8, 30));
    assert!(c.dim <= 3u64.pow(c.max_degree + 2));
    assert_eq!(model_constants(&[2, 3, 4]).unwrap().bezout, 24);
}

#[test]
fn degree_one_is_accepted_but_flagged() {
    let f = PolySystem::new(vec![poly(1, 2, &[(&[1, 0], 1.0)])]).unwrap();
    assert!(f.has_linear_component());
    let g = sample_system(&[2, 2], 2, &RngStream::new(3, 0)).unwrap();
    assert!(!g.has_linear_component());
}

#[test]
fn coefficient_count_is_the_simplex_size() {
    for (d, nv, count) in [(2u32, 3usize, 6usize), (3, 4, 20), (4, 2, 5)] {
        assert_eq!(random_poly(0, d, nv).coeffs().len(), count);
    }
}

fn gaussian_point(seed: u64, nv: usize) -> Vec<f64> {
    let mut rng = RngStream::new(seed, 99).rng();
    (0..nv).map(|_| polycond::random::standard_normal(&mut rng)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluation_is_homogeneous(seed in 0u64..10_000, d in 1u32..5, nv in 2usize..5, lambda in -3.0f64..3.0) {
        prop_assume!(lambda.abs() > 0.05);
        let f = random_poly(seed, d, nv);
        let x = gaussian_point(seed, nv);
        let lx: Vec<f64> = x.iter().map(|v| v * lambda).collect();
        let a = f.eval(&lx).unwrap();
        let b = lambda.powi(d as i32) * f.eval(&x).unwrap();
        // Relative to Σ|a_j x^j|, the scale rounding errors live on.
        let abs = HomogeneousPoly::from_coeffs(f.basis().clone(), f.coeffs().iter().map(|c| c.abs()).collect()).unwrap();
        let ax: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        let scale = lambda.abs().powi(d as i32) * abs.eval(&ax).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * scale);
    }

    #[test]
    fn euler_relations(seed in 0u64..10_000, d in 1u32..6, nv in 2usize..5) {
        let f = random_poly(seed, d, nv);
        let x = gaussian_point(seed, nv);
        let g = f.gradient(&x).unwrap();
        let h = f.hessian(&x).unwrap();
        let v = f.eval(&x).unwrap();
        let xg: f64 = x.iter().zip(&g).map(|(a, b)| a * b).sum();
        let scale = g.iter().zip(&x).map(|(a, b)| (a * b).abs()).sum::<f64>() + 1e-300;
        prop_assert!((xg - d as f64 * v).abs() <= 1e-10 * scale);
        for k in 0..nv {
            let hx: f64 = (0..nv).map(|l| h[k * nv + l] * x[l]).sum();
            let s = (0..nv).map(|l| (h[k * nv + l] * x[l]).abs()).sum::<f64>() + 1e-300;
            prop_assert!((hx - (d as f64 - 1.0) * g[k]).abs() <= 1e-10 * s);
        }
    }

    #[test]
    fn weyl_norm_is_a_norm(s1 in 0u64..10_000, s2 in 0u64..10_000, d in 1u32..5, lambda in -5.0f64..5.0) {
        let f = random_poly(s1, d, 3);
        let g = random_poly(s2.wrapping_add(77_777), d, 3);
        prop_assert!(rel(f.scaled(lambda).weyl_norm(), lambda.abs() * f.weyl_norm()) < 1e-12 || lambda == 0.0);
        let sum = HomogeneousPoly::from_coeffs(
            f.basis().clone(),
            f.coeffs().iter().zip(g.coeffs()).map(|(a, b)| a + b).collect(),
        ).unwrap();
        prop_assert!(sum.weyl_norm() <= f.weyl_norm() + g.weyl_norm() + 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences(seed in 0u64..10_000, d in 2u32..5, nv in 2usize..5) {
        let f = random_poly(seed, d, nv);
        let x = gaussian_point(seed, nv);
        let h = 1e-5;
        let g = f.gradient(&x).unwrap();
        let hess = f.hessian(&x).unwrap();
        let gscale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
        let hscale = hess.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
        for k in 0..nv {
            let (mut p, mut q) = (x.clone(), x.clone());
            p[k] += h;
            q[k] -= h;
            let fd = (f.eval(&p).unwrap() - f.eval(&q).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() < 1e-6 * gscale, "grad {k}: {fd} vs {}", g[k]);
            let (gp, gq) = (f.gradient(&p).unwrap(), f.gradient(&q).unwrap());
            for l in 0..nv {
                let fd = (gp[l] - gq[l]) / (2.0 * h);
                prop_assert!((fd - hess[l * nv + k]).abs() < 1e-6 * hscale);
            }
        }
    }

    #[test]
    fn jsonl_round_trip_is_bit_exact(seed in 0u64..10_000, n in 1usize..4) {
        let degrees: Vec<u32> = (0..n).map(|i| 2 + ((seed as usize + i) % 3) as u32).collect();
        let systems: Vec<PolySystem> = (0..3)
            .map(|r| sample_system(&degrees, n, &RngStream::new(seed, r)).unwrap())
            .collect();
        let text = write_jsonl(&systems);
        let back = read_jsonl(&text).unwrap();
        prop_assert_eq!(back.len(), systems.len());
        for (a, b) in systems.iter().zip(&back) {
            for (p, q) in a.polys().iter().zip(b.polys()) {
                let pa: Vec<u64> = p.coeffs().iter().map(|c| c.to_bits()).collect();
                let pb: Vec<u64> = q.coeffs().iter().map(|c| c.to_bits()).collect();
                prop_assert_eq!(pa, pb);
            }
        }
        prop_assert_eq!(write_jsonl(&back), text);
    }
}
