mod common;

use mhparse::crf::*;
use mhparse::instance::InstanceParsing;
use mhparse::metrics::*;
use mhparse::numcore::Tensor;
use mhparse::scene::Grid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn weak(potts: f64) -> CrfConfig {
    CrfConfig {
        potts_strength: potts,
        ..CrfConfig::default()
    }
}

fn random_dataset(r: &mut ChaCha8Rng, images: usize) -> (Vec<InstanceParsing>, Vec<InstanceParsing>) {
    (0..images).map(|_| common::random_pair(r)).unzip()
}

/// Same dataset with every confidence redrawn so that no two are equal.
fn distinct_confidences(preds: &mut [InstanceParsing], r: &mut ChaCha8Rng) {
    for p in preds.iter_mut() {
        for c in p.confidences.iter_mut() {
            *c = r.random_range(0.01..0.99);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn marginals_are_distributions_at_every_iteration(seed in any::<u64>(), potts in 0.0f64..3.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_crf_problem(&mut r);
        let mf = mean_field(&p, &weak(potts)).unwrap();
        prop_assert_eq!(mf.history.len(), CrfConfig::default().iterations);
        for q in &mf.history {
            for k in 0..p.pixels() {
                let row = &q.data()[k * p.labels()..(k + 1) * p.labels()];
                prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn marginals_stay_within_the_influence_bound(seed in any::<u64>(), potts in 0.0f64..0.5) {
        // Every message lies in [0, μΣκ], so no log-odds can move by more
        // than the bound from the unary-only marginals.
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_crf_problem(&mut r);
        let cfg = weak(potts);
        let base = mean_field(&p, &weak(0.0)).unwrap();
        let mf = mean_field(&p, &cfg).unwrap();
        let l = p.labels();
        for k in 0..p.pixels() {
            let b = influence_bound(&p, &cfg, k);
            for q in &mf.history {
                for lab in 0..l {
                    let ratio = (q.data()[k * l + lab] / base.marginals().data()[k * l + lab]).ln();
                    prop_assert!(ratio.abs() <= b + 1e-9, "pixel {} ratio {} bound {}", k, ratio, b);
                }
            }
        }
    }

    #[test]
    fn zero_potts_reduces_to_unary_argmax(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_crf_problem(&mut r);
        let mf = mean_field(&p, &weak(0.0)).unwrap();
        prop_assert_eq!(mf.labels.data().to_vec(), unary_argmax(&p));
        let no_kernels = CrfConfig { w1: 0.0, w2: 0.0, w3: 0.0, ..CrfConfig::default() };
        prop_assert_eq!(mean_field(&p, &no_kernels).unwrap(), mf);
    }

    #[test]
    fn confidence_transforms_preserving_order_keep_ap(seed in any::<u64>(), t in 0.05f64..0.95) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (preds, gts) = random_dataset(&mut r, 3);
        let mut squashed = preds.clone();
        for p in squashed.iter_mut() {
            p.confidences.iter_mut().for_each(|c| *c = c.powi(3) * 0.5 + 0.1);
        }
        prop_assert_eq!(ap_p(&preds, &gts, t).unwrap(), ap_p(&squashed, &gts, t).unwrap());
    }

    #[test]
    fn ap_does_not_increase_with_threshold(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (preds, gts) = random_dataset(&mut r, 3);
        let eval = Evaluation::new(&preds, &gts).unwrap();
        let aps: Vec<f64> = (1..20).map(|i| eval.ap_p(i as f64 / 20.0)).collect();
        prop_assert!(aps.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", aps);
    }

    #[test]
    fn ap_and_pcp_ignore_image_order(seed in any::<u64>(), t in 0.05f64..0.95) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (mut preds, gts) = random_dataset(&mut r, 4);
        distinct_confidences(&mut preds, &mut r);
        let (rp, rg): (Vec<_>, Vec<_>) = preds.iter().cloned().zip(gts.iter().cloned()).rev().unzip();
        prop_assert!((ap_p(&preds, &gts, t).unwrap() - ap_p(&rp, &rg, t).unwrap()).abs() < 1e-12);
        prop_assert!((pcp(&preds, &gts, t).unwrap() - pcp(&rp, &rg, t).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pcp_is_one_exactly_when_every_part_of_every_person_is_found(seed in any::<u64>(), t in 0.05f64..0.95) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (preds, gts) = random_dataset(&mut r, 2);
        let eval = Evaluation::new(&preds, &gts).unwrap();
        let m = eval.matches(t);
        let mut perfect = true;
        for (img, mr) in m.iter().enumerate() {
            for g in 0..gts[img].instance_count() {
                let Some(p) = mr.predictions.iter().position(|x| x.0 == Some(g)) else {
                    perfect = false;
                    continue;
                };
                for c in 1..19u8 {
                    let in_gt = gts[img].instance_ids.data().iter().zip(gts[img].categories.data())
                        .any(|(&id, &cat)| id as usize == g + 1 && cat == c);
                    if in_gt {
                        let iou = common::oracle_category_iou(&preds[img], p as u16 + 1, &gts[img], g as u16 + 1, c).unwrap();
                        perfect &= iou > t;
                    }
                }
            }
        }
        let v = eval.pcp(t);
        prop_assert!(v <= 1.0);
        prop_assert_eq!(v == 1.0, perfect);
    }

    #[test]
    fn ap_vol_is_the_mean_over_nine_thresholds(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (preds, gts) = random_dataset(&mut r, 3);
        let direct: f64 = (1..=9).map(|i| ap_p(&preds, &gts, i as f64 / 10.0).unwrap()).sum::<f64>() / 9.0;
        prop_assert!((ap_p_vol(&preds, &gts).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn mean_average_iou_ignores_image_order(seed in any::<u64>()) {
        let mut scenes: Vec<_> = (0..5).map(|i| common::scene(seed % 1000 + i)).collect();
        let a = mean_average_iou(&scenes);
        scenes.reverse();
        prop_assert!((a - mean_average_iou(&scenes)).abs() < 1e-12);
    }
}

#[test]
fn unary_independent_problem_matches_exact_marginals() {
    // Without coupling the Gibbs distribution factorises per pixel, so mean
    // field is exact after one iteration.
    let q = Grid::from_vec(2, 2, vec![0.9, 0.2, 0.6, 0.0]).unwrap();
    let mask = Grid::from_vec(2, 2, vec![true, true, false, false]).unwrap();
    let p = CrfProblem::new(q, vec![mask], Tensor::zeros(&[2, 2, 1]), Tensor::zeros(&[2, 2, 3])).unwrap();
    let (exact, _) = common::exact_crf(&p, &weak(0.0));
    let mf = mean_field(&p, &weak(0.0)).unwrap();
    for (a, b) in mf.marginals().data().iter().zip(&exact) {
        assert!((a - b).abs() < 1e-12);
    }
    // pixel 0: background 0.101, person 1.8
    let m = mf.marginals().data();
    assert!((m[1] - 1.8 / 1.901).abs() < 1e-12);
    // pixel 1: background 0.801 beats person 0.4; pixel 2: person 0.6 beats 0.401
    assert_eq!(mf.labels.data(), &[1, 0, 1, 0]);
}

#[test]
fn kernel_matches_scalar_formula() {
    let cfg = CrfConfig {
        w1: 0.5,
        w2: 2.0,
        w3: 1.5,
        theta: 0.8,
        theta_bp: 4.0,
        theta_bi: 0.3,
        theta_s: 2.0,
        ..CrfConfig::default()
    };
    let a = PixelFeatures { feature: &[0.2, -0.1], color: &[0.1, 0.5, 0.9], position: (1.0, 2.0) };
    let b = PixelFeatures { feature: &[0.5, 0.3], color: &[0.2, 0.4, 0.6], position: (3.0, 1.0) };
    let want = 0.5 * (-0.25f64 / 1.28).exp() + 2.0 * (-5.0f64 / 32.0 - 0.11 / 0.18).exp() + 1.5 * (-5.0f64 / 8.0).exp();
    assert!((pairwise_kernel(&cfg, a, b) - want).abs() < 1e-12);
    // with w1 = 0 the learned features no longer matter
    let no_feat = CrfConfig { w1: 0.0, ..cfg };
    let c = PixelFeatures { feature: &[9.0, 9.0], ..b };
    assert_eq!(pairwise_kernel(&no_feat, a, b), pairwise_kernel(&no_feat, a, c));
}

#[test]
fn ap_vol_of_a_mid_overlap_prediction_is_five_ninths() {
    // One person of 20 pixels; the prediction covers 11 of them: IOU 0.55.
    let gt = InstanceParsing::new(Grid::filled(1, 20, 1u16), Grid::filled(1, 20, 1u8), vec![1.0]).unwrap();
    let ids = Grid::from_fn(1, 20, |_, x| u16::from(x < 11));
    let pred = InstanceParsing::new(ids.clone(), ids.map(|v| v as u8), vec![0.7]).unwrap();
    assert!((part_overlap(&pred, 1, &gt, 1).unwrap() - 0.55).abs() < 1e-15);
    assert!((ap_p_vol(&[pred], &[gt]).unwrap() - 5.0 / 9.0).abs() < 1e-12);
}

#[test]
fn perfect_predictions_score_one_with_any_confidences() {
    let gts: Vec<InstanceParsing> = (0..4).map(|s| InstanceParsing::from_scene(&common::scene(s))).collect();
    let mut preds = gts.clone();
    let mut r = ChaCha8Rng::seed_from_u64(0);
    distinct_confidences(&mut preds, &mut r);
    for t in vol_thresholds() {
        assert_eq!(ap_p(&preds, &gts, t).unwrap(), 1.0);
        assert_eq!(pcp(&preds, &gts, t).unwrap(), 1.0);
    }
    let empty: Vec<InstanceParsing> = gts.iter().map(|g| InstanceParsing::empty(g.instance_ids.height(), g.instance_ids.width())).collect();
    assert_eq!(ap_p(&empty, &gts, 0.5).unwrap(), 0.0);
    assert_eq!(pcp(&empty, &gts, 0.5).unwrap(), 0.0);
    assert!(ap_p(&preds, &gts, 1.0).is_err());
}
