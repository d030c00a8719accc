use gpcm::mmle::{apply_collapses, e_step, eap_abilities, fit_mmle, m_step_item, EmConfig, ExpectedCounts};
use gpcm::quadrature::QuadratureGrid;
use gpcm::simulation::{generate_responses, generate_thetas, generating_bank, passage_bank, LatentDistribution};
use gpcm::{gpcm_category_probs, ItemBank, ItemParams, ResponseMatrix};
use proptest::prelude::*;

fn simulate(bank: &ItemBank, n: usize, seed: u64) -> ResponseMatrix {
    let thetas = generate_thetas(&LatentDistribution::Normal, n, seed).unwrap();
    generate_responses(bank, &thetas, seed + 1).unwrap()
}

fn max_param_error(fit: &ItemBank, truth: &ItemBank) -> f64 {
    let mut worst: f64 = 0.0;
    for (f, t) in fit.items().iter().zip(truth.items()) {
        worst = worst.max((f.discrimination() - t.discrimination()).abs());
        for (a, b) in f.steps().iter().zip(t.steps()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn permute_columns(data: &ResponseMatrix, order: &[usize]) -> ResponseMatrix {
    let rows: Vec<Vec<u16>> = data.rows().map(|r| order.iter().map(|&j| r[j]).collect()).collect();
    let m = order.iter().map(|&j| data.n_categories()[j]).collect();
    ResponseMatrix::from_rows(&rows, m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_log_likelihood_never_decreases(seed in 0u64..10_000, n in 50usize..400) {
        let data = simulate(&passage_bank(), n, seed);
        let m = data.n_categories().to_vec();
        let fit = fit_mmle(&data, &m, &EmConfig::default()).unwrap();
        for w in fit.loglik_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn recovers_five_generating_items_at_twenty_thousand() {
    // single datasets put the worst of 24 parameters 0.04 to 0.11 away, so the
    // estimates are averaged over replications before the 0.05 check
    let bank = generating_bank().prefix(5).unwrap();
    let reps = 8;
    let mut sum = vec![0.0; 25];
    for r in 0..reps {
        let data = simulate(&bank, 20_000, 41 + 10 * r);
        let fit = fit_mmle(&data, &[5; 5], &EmConfig::default()).unwrap();
        assert!(fit.converged);
        let flat = fit.bank_hat.items().iter().flat_map(|i| std::iter::once(i.discrimination()).chain(i.steps().iter().copied()));
        for (s, v) in sum.iter_mut().zip(flat) {
            *s += v / reps as f64;
        }
    }
    let truth = bank.items().iter().flat_map(|i| std::iter::once(i.discrimination()).chain(i.steps().iter().copied()));
    for (k, (m, t)) in sum.iter().zip(truth).enumerate() {
        assert!((m - t).abs() < 0.05, "parameter {k}: mean {m} vs {t}");
    }
}

#[test]
fn recovers_passage_items_at_one_hundred_thousand() {
    let bank = passage_bank();
    let data = simulate(&bank, 100_000, 7);
    let fit = fit_mmle(&data, &[4; 4], &EmConfig::default()).unwrap();
    assert!(fit.converged);
    let err = max_param_error(&fit.bank_hat.prefix(3).unwrap(), &bank.prefix(3).unwrap());
    assert!(err < 0.05, "max error {err}");
    // the last item's top step sits near 6 with a = 0.3 and is seen rarely
    let err = max_param_error(&fit.bank_hat, &bank);
    assert!(err < 0.25, "max error {err}");
}

#[test]
fn recovers_single_dichotomous_item() {
    let bank = ItemBank::new(vec![ItemParams::new(1.0, vec![0.0]).unwrap()]);
    let data = simulate(&bank, 5000, 13);
    let fit = fit_mmle(&data, &[2], &EmConfig::default()).unwrap();
    let item = &fit.bank_hat.items()[0];
    assert!((item.discrimination() - 1.0).abs() < 0.1, "a = {}", item.discrimination());
    assert!(item.steps()[0].abs() < 0.1, "d = {}", item.steps()[0]);
}

#[test]
fn row_order_does_not_change_estimates() {
    let data = simulate(&passage_bank(), 600, 3);
    let mut rows: Vec<Vec<u16>> = data.rows().map(|r| r.to_vec()).collect();
    rows.reverse();
    rows.rotate_left(217);
    let shuffled = ResponseMatrix::from_rows(&rows, data.n_categories().to_vec()).unwrap();
    let a = fit_mmle(&data, &[4; 4], &EmConfig::default()).unwrap();
    let b = fit_mmle(&shuffled, &[4; 4], &EmConfig::default()).unwrap();
    assert_eq!(a.bank_hat, b.bank_hat);
    assert_eq!(a.loglik_trace, b.loglik_trace);
}

#[test]
fn column_order_only_permutes_estimates() {
    let data = simulate(&passage_bank(), 600, 5);
    let order = [2, 0, 3, 1];
    let permuted = permute_columns(&data, &order);
    let a = fit_mmle(&data, &[4; 4], &EmConfig::default()).unwrap();
    let b = fit_mmle(&permuted, &[4; 4], &EmConfig::default()).unwrap();
    for (k, &j) in order.iter().enumerate() {
        let (x, y) = (&a.bank_hat.items()[j], &b.bank_hat.items()[k]);
        assert!((x.discrimination() - y.discrimination()).abs() < 1e-9);
        for (s, t) in x.steps().iter().zip(y.steps()) {
            assert!((s - t).abs() < 1e-9);
        }
    }
}

#[test]
fn eap_scores_are_shrunk_towards_zero() {
    let bank = generating_bank().prefix(5).unwrap();
    let data = simulate(&bank, 5000, 11);
    let grid = QuadratureGrid::default();
    let eap = eap_abilities(&data, &bank, &grid).unwrap();
    let v = eap.theta.values();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
    assert!(mean.abs() < 0.1, "mean {mean}");
    assert!(sd < 1.0 && (sd - 0.9).abs() < 0.1, "sd {sd}");
    assert!(eap.sd.iter().all(|&s| s > 0.0 && s < 1.0));
}

#[test]
fn e_step_matches_bayes_rule() {
    let grid = QuadratureGrid::new(vec![-1.5, 0.0, 1.0], vec![0.2, 0.5, 0.3]).unwrap();
    let bank = ItemBank::new(vec![
        ItemParams::new(1.3, vec![-0.4, 0.6]).unwrap(),
        ItemParams::new(0.7, vec![0.2]).unwrap(),
    ]);
    let rows = vec![vec![2, 1], vec![0, 0], vec![1, 1]];
    let data = ResponseMatrix::from_rows(&rows, vec![3, 2]).unwrap();
    let es = e_step(&data, &bank, &grid).unwrap();
    let mut log_marginal = 0.0;
    for (i, row) in rows.iter().enumerate() {
        let joint: Vec<f64> = grid
            .nodes()
            .iter()
            .zip(grid.weights())
            .map(|(&x, &w)| {
                w * row
                    .iter()
                    .zip(bank.items())
                    .map(|(&r, item)| gpcm_category_probs(x, item).unwrap()[r as usize])
                    .product::<f64>()
            })
            .collect();
        let total: f64 = joint.iter().sum();
        log_marginal += total.ln();
        for (p, j) in es.posterior(i).iter().zip(&joint) {
            assert!((p - j / total).abs() < 1e-14);
        }
    }
    assert!((es.log_marginal - log_marginal).abs() < 1e-12);
    // expected count of category 1 of item 1 at node 2 is the posterior mass
    // of the two persons who chose it
    let want = es.posterior(0)[2] + es.posterior(2)[2];
    assert!((es.expected[1].get(2, 1) - want).abs() < 1e-14);
}

#[test]
fn m_step_agrees_with_grid_search() {
    let grid = QuadratureGrid::default();
    let truth = ItemParams::new(1.1, vec![0.3]).unwrap();
    // counts from a slightly different item so the optimum is not the truth
    let counts = ExpectedCounts::from_fn(grid.len(), 2, |q, k| {
        let x = grid.nodes()[q];
        let p = gpcm_category_probs(x, &truth).unwrap()[k];
        500.0 * grid.weights()[q] * (p + if k == 1 { 0.05 * x.tanh() } else { -0.05 * x.tanh() }).clamp(1e-6, 1.0)
    })
    .unwrap();
    let objective = |a: f64, d: f64| -> f64 {
        let item = ItemParams::new(a, vec![d]).unwrap();
        (0..grid.len())
            .map(|q| {
                let p = gpcm_category_probs(grid.nodes()[q], &item).unwrap();
                (0..2).map(|k| counts.get(q, k) * p[k].ln()).sum::<f64>()
            })
            .sum()
    };
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..=400 {
        for j in 0..=400 {
            let (a, d) = (0.8 + i as f64 * 0.002, -0.2 + j as f64 * 0.0025);
            let v = objective(a, d);
            if v > best.0 {
                best = (v, a, d);
            }
        }
    }
    let out = m_step_item(&counts, &grid, &ItemParams::new(1.0, vec![0.0]).unwrap(), &EmConfig::default()).unwrap();
    assert!((out.discrimination() - best.1).abs() < 0.004, "{} vs {}", out.discrimination(), best.1);
    assert!((out.steps()[0] - best.2).abs() < 0.005, "{} vs {}", out.steps()[0], best.2);
    assert!(objective(out.discrimination(), out.steps()[0]) >= best.0 - 1e-9);
}

#[test]
fn eap_is_stable_under_grid_refinement() {
    let bank = passage_bank();
    let data = simulate(&bank, 300, 21);
    let coarse = eap_abilities(&data, &bank, &QuadratureGrid::default()).unwrap();
    let fine = eap_abilities(&data, &bank, &QuadratureGrid::standard_normal(601, 5.0).unwrap()).unwrap();
    for (a, b) in coarse.theta.values().iter().zip(fine.theta.values()) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn collapsed_fit_scores_recoded_data() {
    // item 0 never shows category 0 or 2
    let rows: Vec<Vec<u16>> = (0..60u16).map(|i| vec![[1, 3][(i % 2) as usize], i % 3, (i / 3) % 2]).collect();
    let data = ResponseMatrix::from_rows(&rows, vec![4, 3, 2]).unwrap();
    let fit = fit_mmle(&data, &[4, 3, 2], &EmConfig::default()).unwrap();
    assert_eq!(fit.collapses.len(), 1);
    assert_eq!(fit.collapses[0].item, 0);
    assert_eq!(fit.collapses[0].map, vec![0, 0, 0, 1]);
    assert!(eap_abilities(&data, &fit.bank_hat, &QuadratureGrid::default()).is_err());
    let recoded = apply_collapses(&data, &fit.collapses).unwrap();
    assert_eq!(recoded.n_categories(), &[2, 3, 2]);
    assert_eq!(recoded.get(1, 0), 1);
    let eap = eap_abilities(&recoded, &fit.bank_hat, &QuadratureGrid::default()).unwrap();
    assert_eq!(eap.theta.len(), 60);
    assert_eq!(apply_collapses(&data, &[]).unwrap(), data);
}

#[test]
fn rejects_empty_and_constant_data() {
    let empty = ResponseMatrix::new(0, vec![2], vec![]).unwrap();
    assert!(fit_mmle(&empty, &[2], &EmConfig::default()).is_err());
    let constant = ResponseMatrix::from_rows(&[vec![1, 0], vec![1, 1], vec![1, 0]], vec![2, 2]).unwrap();
    assert!(fit_mmle(&constant, &[2, 2], &EmConfig::default()).is_err());
}
