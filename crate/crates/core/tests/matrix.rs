use num_rational::BigRational;
use polycond::matrix::{
    bhat_comparison, bhat_comparison_rows, block_det_identity, cauchy_binet_check, lambda_bar, lambda_bar_tail_bound,
    sample_goe_like, shifted_det_expansion, subsets, wishart_expected_det, GoeLikeMatrix, IndexSubset, Mat,
};
use polycond::random::RngStream;
use proptest::prelude::*;

fn mat(rows: usize, cols: usize, data: &[f64]) -> Mat<f64> {
    Mat::new(rows, cols, data.to_vec()).unwrap()
}

fn random(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
    Mat::random(rows, cols, &mut RngStream::new(seed, 0).rng())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn cauchy_binet_examples() {
    let (l, r) = cauchy_binet_check(&mat(1, 2, &[1.0, 2.0]), &mat(2, 1, &[3.0, 4.0])).unwrap();
    assert_eq!((l, r), (11.0, 11.0));
    let (a, b) = (random(3, 3, 1), random(3, 3, 2));
    let (l, r) = cauchy_binet_check(&a, &b).unwrap();
    assert!(close(l, a.det().unwrap() * b.det().unwrap(), 1e-12) && close(l, r, 1e-12));
    let (l, r) = cauchy_binet_check(&random(3, 5, 3), &random(5, 3, 4)).unwrap();
    assert!(close(l, r, 1e-10));
    assert!(cauchy_binet_check(&random(4, 3, 5), &random(3, 4, 6)).is_err());
}

#[test]
fn shifted_determinant_examples() {
    let (d, e) = shifted_det_expansion(&Mat::<f64>::identity(2), 1, 5.0).unwrap();
    assert_eq!((d, e), (6.0, 6.0));
    let c = random(4, 4, 7);
    let (d, e) = shifted_det_expansion(&c, 4, 0.3).unwrap();
    let shifted = Mat::new(4, 4, c.data.iter().enumerate().map(|(i, v)| if i % 5 == 0 { v + 0.3 } else { *v }).collect()).unwrap();
    assert!(close(d, shifted.det().unwrap(), 1e-12) && close(d, e, 1e-10));
    let (d, e) = shifted_det_expansion(&random(5, 5, 8), 3, 0.7).unwrap();
    assert!(close(d, e, 1e-10));
}

#[test]
fn block_determinant_examples() {
    let (b, c) = (random(2, 4, 9), random(3, 4, 10));
    let (l, r) = block_det_identity(&Mat::zeros(2, 4), &b, &c).unwrap();
    let direct = c.gram().det().unwrap() * b.gram().det().unwrap();
    assert!(close(l, direct, 1e-12) && close(r, direct, 1e-12));
    let (l, r) = block_det_identity(&random(1, 2, 11), &random(1, 2, 12), &random(1, 2, 13)).unwrap();
    assert!(close(l, r, 1e-12));
    let (l, r) = block_det_identity(&random(2, 4, 14), &random(2, 4, 15), &random(3, 4, 16)).unwrap();
    assert!(close(l, r, 1e-10));
    assert!(block_det_identity(&random(4, 4, 1), &random(4, 4, 2), &random(3, 4, 3)).is_err());
}

#[test]
fn bhat_examples() {
    for n in 2..=5 {
        let b = random(n - 1, n, 20 + n as u64);
        let cmp = bhat_comparison(&b, &vec![2; n]).unwrap();
        let factor = 2f64.powi(n as i32 - 1);
        assert!(close(cmp.det_bhat, factor * cmp.det_bbt, 1e-12));
        assert!(close(cmp.lower, cmp.det_bhat, 1e-12) && close(cmp.upper, cmp.det_bhat, 1e-12));
    }
    let cmp = bhat_comparison(&random(2, 3, 30), &[2, 3, 4]).unwrap();
    assert!(cmp.lower <= cmp.det_bhat * (1.0 + 1e-12) && cmp.det_bhat <= cmp.upper * (1.0 + 1e-12));
    assert!(close(cmp.det_bhat, cmp.det_bhat_by_minors, 1e-10));
    // Rank one: the second row repeats the first.
    let deficient = mat(2, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    let cmp = bhat_comparison(&deficient, &[2, 3, 4]).unwrap();
    for v in [cmp.det_bbt, cmp.det_bhat, cmp.det_bhat_by_minors] {
        assert!(v.abs() < 1e-12);
    }
}

#[test]
fn exact_rational_replay() {
    for seed in 0..3 {
        let a = random(3, 5, 40 + seed).to_rational();
        let b = random(5, 3, 50 + seed).to_rational();
        let (l, r) = cauchy_binet_check(&a, &b).unwrap();
        assert_eq!(l, r);
        let c = random(5, 5, 60 + seed).to_rational();
        let (d, e) = shifted_det_expansion(&c, 3, BigRational::new(7.into(), 10.into())).unwrap();
        assert_eq!(d, e);
        let (l, r) = block_det_identity(
            &random(2, 4, 70 + seed).to_rational(),
            &random(2, 4, 80 + seed).to_rational(),
            &random(3, 4, 90 + seed).to_rational(),
        )
        .unwrap();
        assert_eq!(l, r);
        let cmp = bhat_comparison(&random(2, 3, 100 + seed).to_rational(), &[2, 3, 4]).unwrap();
        assert_eq!(cmp.det_bhat, cmp.det_bhat_by_minors);
        assert!(cmp.lower <= cmp.det_bhat && cmp.det_bhat <= cmp.upper);
    }
}

#[test]
fn subsets_and_complements() {
    let s = IndexSubset::new(vec![3, 0, 2], 5).unwrap();
    assert_eq!(s.members, vec![0, 2, 3]);
    assert_eq!(s.complement(), vec![1, 4]);
    assert!(IndexSubset::new(vec![1, 1], 3).is_err());
    assert!(IndexSubset::new(vec![3], 3).is_err());
    let all: Vec<IndexSubset> = subsets(5, 3).collect();
    assert_eq!(all.len(), 10);
    assert!(all.windows(2).all(|w| w[0] < w[1]));
    for s in &all {
        assert!(s.members.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.len() + s.complement().len(), 5);
    }
}

#[test]
fn wishart_examples() {
    for (m, n, exact) in [(1, 1, 1.0), (2, 3, 6.0), (2, 4, 12.0)] {
        let (mc, e) = wishart_expected_det(m, n, 20_000, 3).unwrap();
        assert_eq!(e, exact);
        assert!((mc.mean - exact).abs() <= 4.0 * mc.se, "({m},{n}): {} +- {}", mc.mean, mc.se);
    }
    assert!(wishart_expected_det(3, 2, 10, 0).is_err());
}

#[test]
fn lambda_bar_examples() {
    let minus = GoeLikeMatrix::from_entries(3, vec![-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0]).unwrap();
    assert_eq!(lambda_bar(&minus), 0.0);
    let diag = GoeLikeMatrix::from_entries(2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
    assert!((lambda_bar(&diag) - 3.0).abs() < 1e-12);
    assert!(GoeLikeMatrix::from_entries(2, vec![1.0, 2.0, 3.0, 1.0]).is_err());
    assert!((lambda_bar_tail_bound(5, 0.0).unwrap() - 1.0).abs() < 1e-15);
    assert!((lambda_bar_tail_bound(5, 1.0).unwrap() - (-2.5f64).exp()).abs() < 1e-15);
    assert!(lambda_bar_tail_bound(6, 1.0).unwrap() < lambda_bar_tail_bound(5, 1.0).unwrap());
    assert!(lambda_bar_tail_bound(5, 1.5).unwrap() < lambda_bar_tail_bound(5, 1.0).unwrap());
    assert!(lambda_bar_tail_bound(5, -1.0).is_err());
}

#[test]
fn goe_entry_variances() {
    let n = 4;
    let samples = 50_000;
    let mut rng = RngStream::new(5, 0).rng();
    let mats: Vec<GoeLikeMatrix> = (0..samples).map(|_| sample_goe_like(n, &mut rng)).collect();
    for (i, j) in [(0, 0), (2, 2), (0, 1), (1, 3)] {
        let sq: Vec<f64> = mats.iter().map(|g| g.entries[i * n + j].powi(2)).collect();
        let m = sq.iter().sum::<f64>() / samples as f64;
        let sd = (sq.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (samples as f64 - 1.0)).sqrt();
        let target = if i == j { 2.0 / n as f64 } else { 1.0 / n as f64 };
        assert!((m - target).abs() <= 3.0 * sd / (samples as f64).sqrt(), "({i},{j}): {m}");
        assert!(mats.iter().all(|g| g.entries[i * n + j] == g.entries[j * n + i]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cauchy_binet_holds(seed in 0u64..100_000, m in 1usize..5, extra in 0usize..3) {
        let n = m + extra;
        let (l, r) = cauchy_binet_check(&random(m, n, seed), &random(n, m, seed + 1)).unwrap();
        prop_assert!(close(l, r, 1e-10));
    }

    #[test]
    fn shifted_expansion_holds(seed in 0u64..100_000, m in 1usize..7, q_frac in 0.0f64..1.0, lambda in -2.0f64..2.0) {
        let q = 1 + ((m - 1) as f64 * q_frac) as usize;
        let (d, e) = shifted_det_expansion(&random(m, m, seed), q, lambda).unwrap();
        prop_assert!(close(d, e, 1e-10));
    }

    #[test]
    fn block_identity_holds(seed in 0u64..100_000, n in 2usize..6, k_frac in 0.0f64..1.0) {
        let k = 1 + ((n - 2) as f64 * k_frac) as usize;
        let (l, r) = block_det_identity(&random(k, n, seed), &random(k, n, seed + 1), &random(n - 1, n, seed + 2)).unwrap();
        prop_assert!(close(l, r, 1e-10));
    }

    #[test]
    fn bhat_sandwich_holds(seed in 0u64..100_000, n in 2usize..6, dseed in 0u32..1000) {
        let degrees: Vec<u32> = (0..n as u32).map(|i| 2 + (dseed / (i + 1)) % 4).collect();
        let cmp = bhat_comparison(&random(n - 1, n, seed), &degrees).unwrap();
        prop_assert!(cmp.lower <= cmp.det_bhat * (1.0 + 1e-10));
        prop_assert!(cmp.det_bhat <= cmp.upper * (1.0 + 1e-10));
        prop_assert!(close(cmp.det_bhat, cmp.det_bhat_by_minors, 1e-10));
    }

    #[test]
    fn row_subset_comparison_is_sandwiched(seed in 0u64..100_000, mask in 0usize..8) {
        let b = random(3, 4, seed);
        let degrees = [2, 3, 2, 4];
        let removed: Vec<usize> = (0..3).filter(|i| mask >> i & 1 == 1).collect();
        let cmp = bhat_comparison_rows(&b, &degrees, &IndexSubset::new(removed, 3).unwrap()).unwrap();
        prop_assert!(cmp.lower <= cmp.det_bhat * (1.0 + 1e-10));
        prop_assert!(cmp.det_bhat <= cmp.upper * (1.0 + 1e-10));
        if mask == 0 {
            // Removing no rows reproduces the plain comparison.
            let full = bhat_comparison(&b, &degrees).unwrap();
            prop_assert!(close(full.det_bhat, cmp.det_bhat, 1e-12));
        }
    }
}
