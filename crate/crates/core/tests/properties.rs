mod support;

use proptest::prelude::*;
use skd_core::analysis::{pearson, ranked_output_variance};
use skd_core::losses::{self, logits};
use skd_core::optim::LrSchedule;
use skd_core::{LogitVector, OneHotLabel, ProbabilityDistribution, Temperature, Tensor};
use support::oracle;

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn lv(v: &[f64]) -> LogitVector {
    LogitVector::new(v.to_vec()).unwrap()
}

fn tau(t: f64) -> Temperature {
    Temperature::new(t).unwrap()
}

fn logit_vec(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, k)
}

fn permutation(k: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..k).collect::<Vec<_>>()).prop_shuffle()
}

fn permute(z: &[f64], perm: &[usize]) -> Vec<f64> {
    perm.iter().map(|&i| z[i]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn softened_sums_to_one(k in prop::sample::select(vec![2usize, 10, 100]),
                            t in prop::sample::select(vec![0.5, 1.0, 4.0]),
                            seed in any::<u64>()) {
        let mut rng = support::rng(seed);
        let z = support::random_logits(&mut rng, k, 20.0);
        let p = losses::softened_distribution(&lv(&z), tau(t)).unwrap();
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softened_is_shift_invariant(z in logit_vec(7), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let a = losses::softened_distribution(&lv(&z), Temperature::ONE).unwrap();
        let b = losses::softened_distribution(&lv(&shifted), Temperature::ONE).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn huge_temperature_is_near_uniform(z in logit_vec(6)) {
        let p = losses::softened_distribution(&lv(&z), tau(1e6)).unwrap();
        for v in p.probs() {
            prop_assert!((v - 1.0 / 6.0).abs() < 1e-4);
        }
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_equal(a in logit_vec(5), b in logit_vec(5)) {
        let p = losses::softened_distribution(&lv(&a), Temperature::ONE).unwrap();
        let q = losses::softened_distribution(&lv(&b), Temperature::ONE).unwrap();
        prop_assert!(losses::kl_divergence(&q, &p).unwrap().value >= 0.0);
        prop_assert!(losses::kl_divergence(&p, &p).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_is_finite_and_non_negative(z in prop::collection::vec(-1e4f64..1e4, 4), label in 0usize..4) {
        let y = OneHotLabel::new(label, 4).unwrap();
        let v = logits::cross_entropy(&lv(&z), &y).unwrap().value;
        prop_assert!(v.is_finite() && v >= 0.0);
        prop_assert!(v <= -oracle::FLOOR.ln() + 1e-9);
        let p = losses::softened_distribution(&lv(&z), Temperature::ONE).unwrap();
        let v = losses::cross_entropy(&p, &y).unwrap().value;
        prop_assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn rank_is_sorted_and_permutation_invariant(z in logit_vec(6), perm in permutation(6)) {
        let r = losses::rank_ascending(&lv(&z));
        prop_assert!(r.values().windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(permute(&z, r.source_permutation()), r.values().to_vec());
        let rp = losses::rank_ascending(&lv(&permute(&z, &perm)));
        prop_assert_eq!(rp.values(), r.values());
        let again = losses::rank_ascending(&LogitVector::new(r.values().to_vec()).unwrap());
        prop_assert_eq!(again.values(), r.values());
    }

    #[test]
    fn losses_are_affine_in_coefficients(zs in logit_vec(5), zt in logit_vec(5), prev in logit_vec(5),
                                         a0 in 0.0f64..2.0, a1 in 0.0f64..2.0) {
        let y = OneHotLabel::new(1, 5).unwrap();
        let prev = losses::rank_ascending(&lv(&prev));
        let sr = losses::shape_regularization_loss(&prev, &losses::rank_ascending(&lv(&zs)), tau(4.0)).unwrap();
        let rg = logits::reverse_guidance_loss(&lv(&zs), &lv(&zt), tau(1.0), false).unwrap().value;
        let drg = |a| logits::drg_loss(&lv(&zs), &lv(&zt), &y, tau(1.0), a, false).unwrap().value;
        prop_assert!(((drg(a1) - drg(a0)) - (a1 - a0) * rg).abs() < 1e-9);
        let dsr = |b| logits::dsr_loss(&lv(&zs), &y, &sr, b).unwrap().value;
        prop_assert!(((dsr(a1) - dsr(a0)) - (a1 - a0) * sr.value).abs() < 1e-9);
        let comb = |a, b| logits::combined_loss(&lv(&zs), &lv(&zt), &y, Some(&sr), tau(1.0), a, b, false).unwrap().value;
        prop_assert!(((comb(a1, 1.0) - comb(a0, 1.0)) - (a1 - a0) * rg).abs() < 1e-9);
        prop_assert!(((comb(0.2, a1) - comb(0.2, a0)) - (a1 - a0) * sr.value).abs() < 1e-9);
    }

    #[test]
    fn pearson_ignores_positive_affine_maps(x in prop::collection::vec(-10.0f64..10.0, 5..20), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.sin() + i as f64 * 0.1).collect();
        if let Ok(r) = pearson(&x, &y) {
            let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let neg: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&ax, &y).unwrap() - r).abs() < 1e-12);
            prop_assert!((pearson(&neg, &y).unwrap() + r).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_never_increases(milestones in prop::collection::btree_set(1usize..100, 0..5), factor in 0.01f64..1.0) {
        let s = LrSchedule { initial: 0.1, milestones: milestones.into_iter().collect(), factor };
        prop_assert!((1..120).all(|e| s.lr_at(e) <= s.lr_at(e - 1)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn shape_term_is_bitwise_permutation_invariant(prev in logit_vec(8), cur in logit_vec(8), perm in permutation(8)) {
        let prev = losses::rank_ascending(&lv(&prev));
        let a = losses::shape_regularization_loss(&prev, &losses::rank_ascending(&lv(&cur)), tau(4.0)).unwrap();
        let b = losses::shape_regularization_loss(&prev, &losses::rank_ascending(&lv(&permute(&cur, &perm))), tau(4.0)).unwrap();
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn ranked_variance_is_exactly_permutation_invariant(rows in prop::collection::vec(logit_vec(5), 2..12),
                                                        perms in prop::collection::vec(permutation(5), 12)) {
        let n = rows.len();
        let flat: Vec<f64> = rows.concat();
        let shuffled: Vec<f64> = rows.iter().zip(&perms).flat_map(|(r, p)| permute(r, p)).collect();
        let a = ranked_output_variance(&Tensor::new(vec![n, 5], flat).unwrap()).unwrap();
        let b = ranked_output_variance(&Tensor::new(vec![n, 5], shuffled).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn logit_gradients_match_finite_differences(zs in logit_vec(5), zt in logit_vec(5), prev in logit_vec(5),
                                                label in 0usize..5, t in 0.5f64..5.0) {
        let y = OneHotLabel::new(label, 5).unwrap();
        let prev_sorted = oracle::sorted(&prev);
        let prev_ranked = losses::rank_ascending(&lv(&prev));
        let sr_of = |z: &[f64]| losses::shape_regularization_loss(&prev_ranked, &losses::rank_ascending(&lv(z)), tau(t)).unwrap();

        let check = |name: &str, analytic: &[f64], f: &dyn Fn(&[f64]) -> f64, at: &[f64]| {
            let numeric = oracle::central_diff(f, at, H);
            let err = oracle::rel_err(analytic, &numeric);
            assert!(err < GRAD_TOL, "{name}: rel err {err:e}\n{analytic:?}\n{numeric:?}");
        };

        let g = logits::cross_entropy(&lv(&zs), &y).unwrap().grad.unwrap();
        check("ce", &g.student, &|z| oracle::ce_logits(z, label), &zs);

        let g = logits::kl_divergence(&lv(&zt), &lv(&zs), tau(t)).unwrap().grad.unwrap();
        check("kl/student", &g.student, &|z| oracle::kl(&oracle::softmax(&zt, t), &oracle::softmax(z, t)), &zs);
        check("kl/teacher", &g.teacher.unwrap(), &|z| oracle::kl(&oracle::softmax(z, t), &oracle::softmax(&zs, t)), &zt);

        let g = logits::kd_loss(&lv(&zs), &lv(&zt), &y, tau(t)).unwrap().grad.unwrap();
        check("kd", &g.student, &|z| oracle::kd(z, &zt, label, t), &zs);

        let g = logits::hard_label_loss(&lv(&zs), &lv(&zt), &y).unwrap().grad.unwrap();
        check("hl/student", &g.student, &|z| oracle::hl(z, &zt, label), &zs);
        check("hl/teacher", &g.teacher.unwrap(), &|z| oracle::hl(&zs, z, label), &zt);

        let g = logits::reverse_guidance_loss(&lv(&zs), &lv(&zt), tau(t), false).unwrap().grad.unwrap();
        check("rg/student", &g.student, &|z| oracle::rg(z, &zt, t), &zs);
        check("rg/teacher", &g.teacher.unwrap(), &|z| oracle::rg(&zs, z, t), &zt);

        let g = logits::drg_loss(&lv(&zs), &lv(&zt), &y, tau(t), 0.2, false).unwrap().grad.unwrap();
        check("drg/student", &g.student, &|z| oracle::drg(z, &zt, label, t, 0.2), &zs);
        check("drg/teacher", &g.teacher.unwrap(), &|z| oracle::drg(&zs, z, label, t, 0.2), &zt);

        let g = sr_of(&zs).grad.unwrap();
        check("sr", &g.student, &|z| oracle::sr(&prev_sorted, z, t), &zs);

        let g = logits::dsr_loss(&lv(&zs), &y, &sr_of(&zs), 1.0).unwrap().grad.unwrap();
        check("dsr", &g.student, &|z| oracle::dsr(z, label, &prev_sorted, t, 1.0), &zs);

        let g = logits::combined_loss(&lv(&zs), &lv(&zt), &y, Some(&sr_of(&zs)), tau(1.0), 0.2, 1.0, false).unwrap().grad.unwrap();
        check("combined/student", &g.student, &|z| oracle::combined(z, &zt, label, &prev_sorted, 1.0, t, 0.2, 1.0), &zs);
        check("combined/teacher", &g.teacher.unwrap(), &|z| oracle::combined(&zs, z, label, &prev_sorted, 1.0, t, 0.2, 1.0), &zt);
    }
}

#[test]
fn kl_zero_only_for_equal_inputs() {
    let p = ProbabilityDistribution::new(vec![0.5, 0.5]).unwrap();
    let q = ProbabilityDistribution::new(vec![0.5, 0.5 - 1e-9]).unwrap();
    let v = losses::kl_divergence(&p, &q).unwrap().value;
    assert!((0.0..1e-12).contains(&v));
    let r = ProbabilityDistribution::new(vec![0.6, 0.4]).unwrap();
    assert!(losses::kl_divergence(&p, &r).unwrap().value > 1e-3);
}
