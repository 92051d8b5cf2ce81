mod oracles;

use crc_core::crc_l::{fit_crcl, score_crcl};
use crc_core::crc_s::{estimated_error, feature_grid, fit_dlda, fit_top_n, loo_score_paths, select_n};
use crc_core::ensemble::{fit_crc, CrcConfig};
use crc_core::gram::{build_gram, center_columns, LabelVector};
use crc_core::linalg::svd;
use crc_core::residualization::{cross_residualize, dual_rows, estimate_gamma, residualize};
use ndarray::{Array1, Array2, Axis};
use oracles::*;
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

/// Random orthogonal `p x p` matrix from the SVD of a Gaussian matrix.
fn orthogonal(p: usize, seed: u64) -> Array2<f64> {
    let (u, _, v) = svd(gaussian(p, p, seed).view()).unwrap();
    u.dot(&v.t())
}

proptest! {
    #![proptest_config(config(40))]

    #[test]
    fn downdated_inverse_equals_direct((n, p) in (4usize..=20).prop_flat_map(|n| (Just(n), n..=200)), seed in any::<u64>()) {
        prop_assert!(downdate_error(n, p, seed) <= 1e-6);
    }

    #[test]
    fn cross_residualized_rows_equal_literal_folds((n, p) in (5usize..=20).prop_flat_map(|n| (Just(n), n..=200)), seed in any::<u64>()) {
        prop_assert!(cross_residualization_error(n, p, seed) <= 1e-6);
    }

    #[test]
    fn closed_form_latent_scores_equal_explicit_pc_lda((n, p) in (4usize..=15).prop_flat_map(|n| (Just(n), n..=100)), seed in any::<u64>()) {
        let err = crcl_closed_form_error(n, p, seed);
        prop_assert!(err <= 1e-5, "n={} p={} err={}", n, p, err);
    }

    #[test]
    fn gram_spectrum_is_rotation_invariant(n in 4usize..=12, p in 12usize..=40, seed in any::<u64>()) {
        let raw = gaussian(n, p, seed);
        let q = orthogonal(p, seed.wrapping_add(1));
        let a = build_gram(&center_columns(raw.view()).unwrap()).unwrap();
        let b = build_gram(&center_columns(raw.dot(&q).view()).unwrap()).unwrap();
        let top = a.eigenvalues()[0].abs().max(a.eigenvalues()[n - 1].abs());
        for (x, y) in a.eigenvalues().iter().zip(b.eigenvalues()) {
            prop_assert!((x - y).abs() <= 1e-9 * top);
        }
        prop_assert!((a.lambda() - b.lambda()).abs() <= 1e-9 * top);
    }

    #[test]
    fn residualization_is_affine_in_the_target(n in 5usize..=15, p in 15usize..=60, seed in any::<u64>()) {
        let inst = instance(n, p, seed);
        let g = build_gram(&inst.dm).unwrap();
        let gamma = estimate_gamma(&g, &inst.dm, &inst.t).unwrap();
        let z = gaussian(2, p, seed.wrapping_add(3));
        let r = |v: &Array1<f64>| residualize(&g, &inst.dm, &inst.t, &gamma, v.view()).unwrap();
        let (z1, z2) = (z.row(0).to_owned(), z.row(1).to_owned());
        let zero = r(&Array1::zeros(p));
        let lhs = r(&(&z1 + &z2));
        let rhs = &r(&z1) + &r(&z2) - &zero;
        let scale = lhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(lhs.iter().zip(&rhs).all(|(a, b)| (a - b).abs() <= 1e-9 * scale));
        let scaled = r(&(&z1 * 2.5));
        let expect = &(&r(&z1) - &zero) * 2.5 + &zero;
        prop_assert!(scaled.iter().zip(&expect).all(|(a, b)| (a - b).abs() <= 1e-9 * scale));
    }

    #[test]
    fn cross_residualized_matrix_is_not_rank_one(n in 6usize..=15, seed in any::<u64>()) {
        let inst = instance(n, 4 * n, seed);
        let g = build_gram(&inst.dm).unwrap();
        let s_hat = cross_residualize(&g, &inst.dm, &inst.t).unwrap().s_hat;
        let (_, sing, _) = svd(s_hat.view()).unwrap();
        prop_assert!(sing[1] > 1e-6 * sing[0]);
    }

    #[test]
    fn latent_score_ignores_feature_offsets(n in 5usize..=15, p in 15usize..=60, j in 0usize..5, shift in -50.0f64..50.0, seed in any::<u64>()) {
        let raw = gaussian(n, p, seed);
        let t = LabelVector::new(&labels(n, 2, seed)).unwrap();
        let mut moved = raw.clone();
        moved.column_mut(j).mapv_inplace(|v| v + shift);
        let probe = gaussian(1, p, seed.wrapping_add(5)).row(0).to_owned();
        let mut probe_moved = probe.clone();
        probe_moved[j] += shift;
        let score = |m: &Array2<f64>, z: &Array1<f64>| {
            let dm = center_columns(m.view()).unwrap();
            let g = build_gram(&dm).unwrap();
            let model = fit_crcl(&g, &dm, &t).unwrap();
            let zc = z - &dm.mu_hat();
            score_crcl(&model, &dm, zc.view()).unwrap()
        };
        let (a, b) = (score(&raw, &probe), score(&moved, &probe_moved));
        prop_assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0));
    }

    #[test]
    fn dlda_weights_are_scale_equivariant(n in 6usize..=20, p in 2usize..=30, j in 0usize..2, c in 0.01f64..100.0, seed in any::<u64>()) {
        let x = gaussian(n, p, seed);
        let t = LabelVector::new(&labels(n, 2, seed)).unwrap();
        let features: Vec<usize> = (0..p).collect();
        let mut xs = x.clone();
        xs.column_mut(j).mapv_inplace(|v| v * c);
        let a = fit_dlda(x.view(), &t, &features).unwrap();
        let b = fit_dlda(xs.view(), &t, &features).unwrap();
        prop_assert!((b.weights[j] * c - a.weights[j]).abs() <= 1e-9 * a.weights[j].abs().max(1e-9));
        let probe = gaussian(1, p, seed.wrapping_add(9)).row(0).to_owned();
        let mut probe_s = probe.clone();
        probe_s[j] *= c;
        prop_assert!((a.weights[j] * probe[j] - b.weights[j] * probe_s[j]).abs() <= 1e-9 * (a.weights[j] * probe[j]).abs().max(1e-9));
    }

    #[test]
    fn screening_is_deterministic(n in 6usize..=20, p in 2usize..=50, seed in any::<u64>()) {
        let mut x = gaussian(n, p, seed);
        // duplicated columns force ties
        let first = x.column(0).to_owned();
        x.column_mut(p - 1).assign(&first);
        let t = LabelVector::new(&labels(n, 2, seed)).unwrap();
        let (m1, s1) = fit_top_n(x.view(), &t, p.min(5)).unwrap();
        let (m2, s2) = fit_top_n(x.view(), &t, p.min(5)).unwrap();
        prop_assert_eq!(m1, m2);
        prop_assert_eq!(s1.order, s2.order);
    }

    #[test]
    fn chosen_n_ignores_global_rescaling(n in 10usize..=20, c in 0.001f64..1000.0, seed in any::<u64>()) {
        let p = 60;
        let inst = instance(n, p, seed);
        let g = build_gram(&inst.dm).unwrap();
        let s_hat = cross_residualize(&g, &inst.dm, &inst.t).unwrap().s_hat;
        let dual = dual_rows(&g, &inst.dm);
        let latent = gaussian(1, n, seed.wrapping_add(2)).row(0).to_owned();
        let grid = feature_grid(p);
        let a = loo_score_paths(s_hat.view(), &inst.t, Some(dual.view()), &grid).unwrap();
        let scaled = &s_hat * c;
        let b = loo_score_paths(scaled.view(), &inst.t, Some(dual.view()), &grid).unwrap();
        let ta = select_n(&a, latent.view(), &inst.t).unwrap();
        let tb = select_n(&b, latent.view(), &inst.t).unwrap();
        prop_assert_eq!(ta.chosen_n, tb.chosen_n);
    }

    #[test]
    fn error_estimate_is_half_for_coincident_means(n in 6usize..=30, seed in any::<u64>()) {
        let signs = labels(n, 3, seed);
        let t = LabelVector::new(&signs).unwrap();
        let noise = gaussian(2, n, seed.wrapping_add(1));
        // subtract each class mean so both classes average to zero
        let centered = |row: usize| {
            let mut v = noise.row(row).to_owned();
            for s in [-1i8, 1] {
                let idx: Vec<usize> = (0..n).filter(|&i| signs[i] == s).collect();
                let m = idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64;
                idx.iter().for_each(|&i| v[i] -= m);
            }
            v
        };
        let e = estimated_error(centered(0).view(), centered(1).view(), &t);
        prop_assert!((e - 0.5).abs() < 1e-6, "{}", e);
    }

    #[test]
    fn error_estimate_falls_as_classes_separate(n in 6usize..=30, seed in any::<u64>()) {
        let signs = labels(n, 3, seed);
        let t = LabelVector::new(&signs).unwrap();
        let mut noise = gaussian(2, n, seed.wrapping_add(1));
        for mut row in noise.rows_mut() {
            for s in [-1i8, 1] {
                let idx: Vec<usize> = (0..n).filter(|&i| signs[i] == s).collect();
                let m = idx.iter().map(|&i| row[i]).sum::<f64>() / idx.len() as f64;
                idx.iter().for_each(|&i| row[i] -= m);
            }
        }
        // class means differ only through the shift
        let shifted = |c: f64| -> (Array1<f64>, Array1<f64>) {
            let a = Array1::from_iter((0..n).map(|i| noise[[0, i]] + c * f64::from(signs[i])));
            (a, noise.row(1).to_owned())
        };
        let mut last = f64::INFINITY;
        for c in [0.5, 1.0, 2.0, 4.0] {
            let (a, b) = shifted(c);
            let e = estimated_error(a.view(), b.view(), &t);
            prop_assert!(e <= last);
            last = e;
        }
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn extracted_weights_agree_with_predict(n in 10usize..=24, p in 20usize..=120, seed in any::<u64>()) {
        prop_assert_eq!(linear_weight_disagreements(n, p, seed, 200), 0);
    }

    #[test]
    fn flipping_labels_flips_predictions(n in 10usize..=24, seed in any::<u64>()) {
        let p = 80;
        let raw = gaussian(n, p, seed);
        let t = LabelVector::new(&labels(n, 4, seed)).unwrap();
        let cfg = CrcConfig { fixed_features: Some(5), ..Default::default() };
        let a = fit_crc(raw.clone(), &t, &cfg).unwrap();
        let b = fit_crc(raw, &t.flipped(), &cfg).unwrap();
        let probes = gaussian(50, p, seed.wrapping_add(4));
        for (x, y) in a.predict_batch(probes.view()).unwrap().iter().zip(b.predict_batch(probes.view()).unwrap()) {
            if x.combined_score.abs() > 1e-9 {
                prop_assert_eq!(x.label, -y.label);
            }
        }
    }

    #[test]
    fn latent_scores_are_rotation_invariant(n in 10usize..=20, seed in any::<u64>()) {
        let p = 30;
        let raw = gaussian(n, p, seed);
        let q = orthogonal(p, seed.wrapping_add(8));
        let t = LabelVector::new(&labels(n, 4, seed)).unwrap();
        let cfg = CrcConfig::default();
        let a = fit_crc(raw.clone(), &t, &cfg).unwrap();
        let b = fit_crc(raw.dot(&q), &t, &cfg).unwrap();
        let probes = gaussian(20, p, seed.wrapping_add(6));
        let pa = a.predict_batch(probes.view()).unwrap();
        let pb = b.predict_batch(probes.dot(&q).view()).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            prop_assert!((x.latent_score - y.latent_score).abs() <= 1e-7 * x.latent_score.abs().max(1.0));
        }
    }
}

#[test]
fn screening_gives_label_feature_first() {
    let n = 20;
    let signs = labels(n, 5, 1);
    let mut x = gaussian(n, 10, 2);
    x.column_mut(7).assign(&Array1::from_iter(signs.iter().map(|&s| f64::from(s))));
    let t = LabelVector::new(&signs).unwrap();
    let (_, screen) = fit_top_n(x.view(), &t, 1).unwrap();
    assert_eq!(screen.order[0], 7);
    assert_eq!(x.len_of(Axis(1)), screen.order.len());
}
