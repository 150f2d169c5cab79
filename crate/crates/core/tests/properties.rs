use std::path::Path;

use proptest::prelude::*;

use mpe_psn::datagen::{from_csv, to_csv, LabeledBatch};
use mpe_psn::losses::{mem_loss, KappaAxis};
use mpe_psn::network::{predictions, spike_rate};
use mpe_psn::numerics::Tensor;

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..6, 1usize..5, 1usize..8)
}

fn tensor_with(values: impl Strategy<Value = f64> + Clone + 'static) -> impl Strategy<Value = Tensor> {
    dims().prop_flat_map(move |(t, b, n)| {
        prop::collection::vec(values.clone(), t * b * n).prop_map(move |v| Tensor::new(&[t, b, n], v).unwrap())
    })
}

/// Reorders the batch axis of a `[T, B, N]` tensor.
fn permute_batch(x: &Tensor, perm: &[usize]) -> Tensor {
    let (_, b, n) = x.dims3().unwrap();
    Tensor::from_fn(x.shape(), |i| {
        let (t, rest) = (i / (b * n), i % (b * n));
        let (s, j) = (rest / n, rest % n);
        x.data()[(t * b + perm[s]) * n + j]
    })
}

proptest! {
    #[test]
    fn spike_rate_is_a_percentage(o in tensor_with(prop::bool::ANY.prop_map(f64::from))) {
        let rate = spike_rate(&o).unwrap();
        prop_assert!((0.0..=100.0).contains(&rate));
        prop_assert_eq!(rate, 100.0 * o.mean().unwrap());
    }

    #[test]
    fn predictions_ignore_shift_and_positive_scale(
        (t, b, k, v) in (1usize..5, 1usize..4, 2usize..5)
            .prop_flat_map(|(t, b, k)| (Just(t), Just(b), Just(k), prop::collection::vec(-20i32..20, t * b * k))),
        shift in -50i32..50,
        scale_pow in 0i32..6,
    ) {
        // integer logits keep every sum exact
        let logits = Tensor::new(&[t, b, k], v.iter().map(|&x| f64::from(x)).collect()).unwrap();
        let scale = f64::powi(2.0, scale_pow);
        let moved = logits.map(|x| (x + f64::from(shift)) * scale);
        prop_assert_eq!(predictions(&logits).unwrap(), predictions(&moved).unwrap());
    }

    #[test]
    fn mem_loss_is_nonnegative_and_batch_order_free(
        (u_hat, u, kappa, perm) in dims().prop_flat_map(|(t, b, n)| {
            let v = prop::collection::vec(-3.0f64..3.0, t * b * n);
            (
                v.clone().prop_map(move |x| Tensor::new(&[t, b, n], x).unwrap()),
                v.prop_map(move |x| Tensor::new(&[t, b, n], x).unwrap()),
                prop::collection::vec(0.0f64..2.0, t).prop_map(move |k| Tensor::new(&[t], k).unwrap()),
                Just((0..b).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
    ) {
        let base = mem_loss(&u_hat, &u, &kappa, KappaAxis::Time).unwrap();
        prop_assert!(base >= 0.0);
        let moved = mem_loss(&permute_batch(&u_hat, &perm), &permute_batch(&u, &perm), &kappa, KappaAxis::Time).unwrap();
        prop_assert!((base - moved).abs() <= 1e-12 * base.max(1.0));
        prop_assert_eq!(mem_loss(&u, &u, &kappa, KappaAxis::Time).unwrap(), 0.0);
    }

    #[test]
    fn dataset_csv_round_trip(
        (x, y, classes) in (1usize..4, 1usize..5, 1usize..6, 2usize..4).prop_flat_map(|(t, b, n, k)| (
            prop::collection::vec(-1e3f64..1e3, t * b * n).prop_map(move |v| Tensor::new(&[t, b, n], v).unwrap()),
            prop::collection::vec(0..k, b),
            Just(k),
        ))
    ) {
        let batch = LabeledBatch::new(x, y, classes).unwrap();
        let back = from_csv(&to_csv(&batch), Path::new("mem.csv")).unwrap();
        prop_assert_eq!(back.x, batch.x);
        prop_assert_eq!(back.y, batch.y);
        prop_assert_eq!(back.classes, batch.classes);
    }
}
