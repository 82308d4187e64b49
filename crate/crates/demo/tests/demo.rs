use skd_demo::{breakdown, ranked_shape, ranked_variance, soften, Sample};

fn softmax(z: &[f64], tau: f64) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| (v / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn kl(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).map(|(a, b)| a * (a.ln() - b.ln())).sum()
}

#[test]
fn soften_matches_the_direct_formula() {
    let p = soften(&[1.0, 2.0, 3.0], 4.0).unwrap();
    for (a, b) in p.iter().zip(softmax(&[1.0, 2.0, 3.0], 4.0)) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(soften(&[1.0], 0.0).is_err());
}

#[test]
fn breakdown_matches_hand_computed_terms() {
    let (main, aux, prev) = ([2.0, 0.5, -1.0], [1.0, 1.5, 0.0], [0.3, -0.2, 1.1]);
    let b = breakdown(&Sample { main: &main, aux: &aux, previous: &prev, label: 0 }, 0.2, 1.0, 1.0, 4.0).unwrap();
    let ce = |z: &[f64]| -softmax(z, 1.0)[0].ln();
    let rg = kl(&softmax(&aux, 1.0), &softmax(&main, 1.0));
    let mut ps = prev.to_vec();
    ps.sort_by(f64::total_cmp);
    let mut cs = main.to_vec();
    cs.sort_by(f64::total_cmp);
    let sr = 16.0 * kl(&softmax(&ps, 4.0), &softmax(&cs, 4.0));
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
    assert!(rel(b.main_ce, ce(&main)) < 1e-12);
    assert!(rel(b.aux_ce, ce(&aux)) < 1e-12);
    assert!(rel(b.reverse_guidance, rg) < 1e-12);
    assert!(rel(b.shape_regularization, sr) < 1e-12);
    assert!(rel(b.total, ce(&main) + ce(&aux) + 0.2 * rg + sr) < 1e-12);
}

#[test]
fn absent_inputs_drop_their_terms() {
    let b = breakdown(&Sample { main: &[1.0, 0.0], aux: &[], previous: &[], label: 1 }, 0.2, 1.0, 1.0, 4.0).unwrap();
    assert_eq!(b.total, b.main_ce);
    assert_eq!(b.aux_ce, 0.0);
    let mismatch = Sample { main: &[1.0, 0.0], aux: &[], previous: &[1.0, 2.0, 3.0], label: 0 };
    assert!(breakdown(&mismatch, 0.2, 1.0, 1.0, 4.0).is_err());
}

#[test]
fn ranked_shape_and_variance() {
    assert_eq!(ranked_shape(&[3.0, -1.0, 2.0]).unwrap(), vec![-1.0, 2.0, 3.0]);
    // rows [0,1] and [3,1] rank to [0,1] and [1,3]: variances 0.25 and 1, mean 0.625
    assert!((ranked_variance(&[0.0, 1.0, 3.0, 1.0], 2).unwrap() - 0.625).abs() < 1e-15);
    assert!(ranked_variance(&[0.0, 1.0, 3.0], 2).is_err());
}
