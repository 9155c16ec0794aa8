use proptest::prelude::*;
use sourcenet_train::sampler::balance_weights;
use sourcenet_train::Loss;

fn label() -> impl Strategy<Value = [f32; 6]> {
    (prop::array::uniform5(-1.2f32..1.2), 2.0f32..6.0).prop_map(|(d, mw)| [d[0], d[1], d[2], d[3], d[4], mw])
}

proptest! {
    #[test]
    fn focal_is_bounded_by_l1_and_nonnegative(pred in -50.0f64..50.0, target in -50.0f64..50.0, gamma in 0.5f64..3.0, beta in 0.1f64..4.0) {
        let (l, d) = Loss::FocalL1 { gamma, beta }.element(pred, target);
        prop_assert!(l >= 0.0);
        prop_assert!(l <= (pred - target).abs() + 1e-12);
        prop_assert!(d.is_finite());
        // Descent direction points at the target.
        prop_assert!(d * (pred - target) >= 0.0);
    }

    #[test]
    fn mse_gradient_is_mean_scaled(pred in prop::collection::vec(-10.0f64..10.0, 1..20)) {
        let target = vec![0.5; pred.len()];
        let (l, g) = Loss::Mse.eval(&pred, &target).unwrap();
        let n = pred.len() as f64;
        let want: f64 = pred.iter().map(|p| (p - 0.5) * (p - 0.5)).sum::<f64>() / n;
        prop_assert!((l - want).abs() <= 1e-12 * (1.0 + want));
        for (p, gi) in pred.iter().zip(&g) {
            prop_assert!((gi - 2.0 * (p - 0.5) / n).abs() < 1e-12);
        }
    }

    #[test]
    fn balance_weights_have_unit_mean_and_ignore_magnitude(labels in prop::collection::vec(label(), 1..60), bins in 1usize..5) {
        let w = balance_weights(&labels, bins);
        prop_assert_eq!(w.len(), labels.len());
        prop_assert!(w.iter().all(|v| *v > 0.0 && v.is_finite()));
        prop_assert!((w.iter().sum::<f64>() / w.len() as f64 - 1.0).abs() < 1e-9);
        // Identical labels share a weight; Mw does not enter the binning.
        let mut shifted = labels.clone();
        shifted.iter_mut().for_each(|l| l[5] += 1.0);
        prop_assert_eq!(balance_weights(&shifted, bins), w);
    }
}
