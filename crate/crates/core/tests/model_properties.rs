use gpcm::simulation::generating_bank;
use gpcm::*;
use proptest::prelude::*;

fn item1() -> ItemParams {
    generating_bank().items()[0].clone()
}

/// Direct evaluation of the model: exp of cumulative sums, normalized.
fn naive_probs(theta: f64, a: f64, steps: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0];
    let mut acc = 0.0;
    for d in steps {
        acc += a * (theta - d);
        z.push(acc);
    }
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn item_strategy() -> impl Strategy<Value = ItemParams> {
    (0.1f64..3.0, prop::collection::vec(-3.0f64..3.0, 1..6)).prop_map(|(a, s)| ItemParams::new(a, s).unwrap())
}

#[test]
fn reference_probabilities_for_item_one() {
    // independent evaluator: tests/oracle/gpcm_oracle.py
    let expected = [
        0.01122294260832925,
        0.1433854029242241,
        0.17760396047232022,
        0.6218383243575092,
        0.04594936963761719,
    ];
    let p = gpcm_category_probs(0.0, &item1()).unwrap();
    for (a, b) in p.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn reference_gradient_for_item_one() {
    // central differences in (log a, d1..d4) from the oracle script
    let expected = [
        -1.4502829569940088,
        -0.0021627881485741796,
        -0.05996194540891508,
        1.2662840174648693,
        0.1695212343610919,
    ];
    let g = grad_item_loglik(0.5, &item1(), 2).unwrap();
    for (a, b) in g.iter().zip(expected) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn two_category_logistic_symmetry() {
    let item = ItemParams::new(1.7, vec![0.3]).unwrap();
    let p = gpcm_category_probs(0.3, &item).unwrap();
    assert!((p[0] - 0.5).abs() < 1e-15);
    let g0 = grad_item_loglik(0.3, &item, 0).unwrap();
    let g1 = grad_item_loglik(0.3, &item, 1).unwrap();
    assert!((g0[1] - 0.5 * 1.7).abs() < 1e-12);
    assert!((g1[1] + 0.5 * 1.7).abs() < 1e-12);
    // at theta = step the log-a derivative vanishes for both responses
    assert!(g0[0].abs() < 1e-12 && g1[0].abs() < 1e-12);
}

#[test]
fn log_likelihood_examples() {
    let one = ResponseMatrix::new(1, vec![2], vec![1]).unwrap();
    let bank = ItemBank::new(vec![ItemParams::new(1.0, vec![0.0]).unwrap()]);
    let th = ThetaVector::new(vec![0.0]).unwrap();
    assert!((gpcm_log_likelihood(&one, &bank, &th).unwrap() - 0.5f64.ln()).abs() < 1e-15);

    let bank = generating_bank();
    let thetas: Vec<f64> = (0..10).map(|i| -2.0 + 0.45 * i as f64).collect();
    let rows: Vec<Vec<u16>> = (0..10)
        .map(|i| (0..20).map(|j| ((i * 7 + j * 3) % 5) as u16).collect())
        .collect();
    let data = ResponseMatrix::from_rows(&rows, vec![5; 20]).unwrap();
    let mut brute = 0.0;
    for (i, row) in rows.iter().enumerate() {
        for (j, &k) in row.iter().enumerate() {
            let it = &bank.items()[j];
            brute += naive_probs(thetas[i], it.discrimination(), it.steps())[k as usize].ln();
        }
    }
    let ll = gpcm_log_likelihood(&data, &bank, &ThetaVector::new(thetas).unwrap()).unwrap();
    assert!((ll - brute).abs() < 1e-10, "{ll} vs {brute}");

    let short = ThetaVector::new(vec![0.0; 3]).unwrap();
    assert!(matches!(
        gpcm_log_likelihood(&data, &bank, &short),
        Err(GpcmError::DimensionMismatch { .. })
    ));
}

#[test]
fn nrm_mapping_examples() {
    let n = gpcm_to_nrm(&ItemParams::new(1.0, vec![0.0]).unwrap());
    assert_eq!((n.slopes, n.intercepts), (vec![0.0, 1.0], vec![0.0, 0.0]));
    let n = gpcm_to_nrm(&ItemParams::new(2.0, vec![1.0]).unwrap());
    assert_eq!((n.slopes, n.intercepts), (vec![0.0, 2.0], vec![0.0, -2.0]));

    let flat = NrmParams::new(vec![0.0; 3], vec![0.0; 3]).unwrap();
    for p in nrm_category_probs(1.3, &flat).unwrap() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    let half = NrmParams::new(vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
    assert_eq!(nrm_category_probs(0.0, &half).unwrap(), vec![0.5, 0.5]);

    let slopes = vec![0.0, 0.8, -0.4, 1.9];
    let intercepts = vec![0.0, 0.3, 1.2, -0.7];
    let p = nrm_category_probs(0.7, &NrmParams::new(slopes.clone(), intercepts.clone()).unwrap()).unwrap();
    let e: Vec<f64> = slopes.iter().zip(&intercepts).map(|(s, c)| (s * 0.7 + c).exp()).collect();
    let tot: f64 = e.iter().sum();
    for (a, b) in p.iter().zip(&e) {
        assert!((a - b / tot).abs() < 1e-15);
    }

    for theta in [-2.0, 0.0, 2.0] {
        let g = gpcm_category_probs(theta, &item1()).unwrap();
        let n = nrm_category_probs(theta, &gpcm_to_nrm(&item1())).unwrap();
        for (a, b) in g.iter().zip(&n) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn theta_gradient_closed_form_and_empty_bank() {
    let bank = ItemBank::new(vec![
        ItemParams::new(1.5, vec![0.0, 0.0]).unwrap(),
        ItemParams::new(0.7, vec![0.0; 4]).unwrap(),
    ]);
    let g = grad_theta_loglik(0.0, &bank, &[2, 1]).unwrap();
    let expected = 1.5 * (2.0 - 1.0) + 0.7 * (1.0 - 2.0);
    assert!((g - expected).abs() < 1e-12);
    assert_eq!(grad_theta_loglik(0.4, &ItemBank::default(), &[]).unwrap(), 0.0);
    assert!(grad_theta_loglik(0.0, &bank, &[2]).is_err());
    assert!(grad_item_loglik(0.0, &item1(), 5).is_err());
}

#[test]
fn theta_gradient_matches_differences_on_table_bank() {
    let bank = generating_bank();
    let row: Vec<u16> = (0..20).map(|j| (j % 5) as u16).collect();
    let ll = |t: f64| -> f64 {
        bank.items()
            .iter()
            .zip(&row)
            .map(|(it, &k)| gpcm_category_probs(t, it).unwrap()[k as usize].ln())
            .sum()
    };
    for theta in [-1.5, 0.2, 1.1] {
        let h = 1e-5;
        let fd = (ll(theta + h) - ll(theta - h)) / (2.0 * h);
        let g = grad_theta_loglik(theta, &bank, &row).unwrap();
        assert!((g - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{g} vs {fd}");
    }
}

#[test]
fn extreme_abilities_stay_on_the_simplex() {
    let item = ItemParams::new(3.0, vec![-1.726, -0.145, -0.849, 1.765]).unwrap();
    for theta in [-35.0, 35.0] {
        let p = gpcm_category_probs(theta, &item).unwrap();
        assert!(p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let top = if theta > 0.0 { 4 } else { 0 };
        assert!(p[top] > 1.0 - 1e-12);
        for k in 0..5 {
            assert!(grad_item_loglik(theta, &item, k).unwrap().iter().all(|g| g.is_finite()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn probabilities_form_a_simplex(theta in -6.0f64..6.0, item in item_strategy()) {
        let p = gpcm_category_probs(theta, &item).unwrap();
        prop_assert_eq!(p.len(), item.n_categories());
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn nrm_equivalence(item in item_strategy()) {
        let nrm = gpcm_to_nrm(&item);
        for i in 0..=16 {
            let theta = -4.0 + 0.5 * i as f64;
            let g = gpcm_category_probs(theta, &item).unwrap();
            let n = nrm_category_probs(theta, &nrm).unwrap();
            for (a, b) in g.iter().zip(&n) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_naive_evaluation(theta in -4.0f64..4.0, item in item_strategy()) {
        let p = gpcm_category_probs(theta, &item).unwrap();
        let q = naive_probs(theta, item.discrimination(), item.steps());
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn item_gradient_matches_central_differences(
        theta in -3.0f64..3.0,
        item in item_strategy(),
        pick in 0usize..6,
    ) {
        let k = pick % item.n_categories();
        let g = grad_item_loglik(theta, &item, k).unwrap();
        let logp = |x: &[f64]| -> f64 {
            let it = ItemParams::from_log_discrimination(x[0], x[1..].to_vec()).unwrap();
            gpcm_category_probs(theta, &it).unwrap()[k].ln()
        };
        let mut x = vec![item.log_discrimination()];
        x.extend_from_slice(item.steps());
        let h = 1e-5;
        for c in 0..x.len() {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[c] += h;
            dn[c] -= h;
            let fd = (logp(&up) - logp(&dn)) / (2.0 * h);
            prop_assert!((g[c] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "component {}: {} vs {}", c, g[c], fd);
        }
    }

    #[test]
    fn theta_gradient_matches_central_differences(
        theta in -3.0f64..3.0,
        items in prop::collection::vec(item_strategy(), 1..5),
        seed in 0u64..1000,
    ) {
        let row: Vec<u16> = items.iter().enumerate()
            .map(|(j, it)| ((seed as usize + 3 * j) % it.n_categories()) as u16)
            .collect();
        let bank = ItemBank::new(items);
        let ll = |t: f64| -> f64 {
            bank.items().iter().zip(&row)
                .map(|(it, &k)| gpcm_category_probs(t, it).unwrap()[k as usize].ln())
                .sum()
        };
        let h = 1e-5;
        let fd = (ll(theta + h) - ll(theta - h)) / (2.0 * h);
        let g = grad_theta_loglik(theta, &bank, &row).unwrap();
        prop_assert!((g - fd).abs() <= 1e-6 * fd.abs().max(1.0));
    }

    #[test]
    fn translation_covariance(theta in -3.0f64..3.0, shift in -2.0f64..2.0, item in item_strategy()) {
        let moved = ItemParams::new(
            item.discrimination(),
            item.steps().iter().map(|d| d + shift).collect(),
        ).unwrap();
        let p = gpcm_category_probs(theta, &item).unwrap();
        let q = gpcm_category_probs(theta + shift, &moved).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
