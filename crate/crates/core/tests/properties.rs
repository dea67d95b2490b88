use percept_age::dataset::{denormalize_age, normalize_age};
use percept_age::evaluation::{mae, PredictionRow, PredictionSet};
use percept_age::tensor::{read_ptns, write_ptns, Tape, Tensor};
use proptest::prelude::*;

fn tensor() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..5, 0..4).prop_flat_map(|shape| {
        let n = shape.iter().product::<usize>();
        prop::collection::vec(-1e6f64..1e6, n).prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
    })
}

proptest! {
    #[test]
    fn ptns_round_trip_is_bitwise(t in tensor()) {
        let mut buf = Vec::new();
        write_ptns(&t, &mut buf).unwrap();
        prop_assert_eq!(read_ptns(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn age_normalisation_round_trips(age in 0.0f64..=100.0) {
        let back = denormalize_age(normalize_age(age).unwrap()).unwrap();
        prop_assert!((back - age).abs() <= 1e-12);
    }

    #[test]
    fn ages_outside_the_scale_are_rejected(age in prop_oneof![-1e3f64..-1e-9, 100.0f64 + 1e-9..1e3]) {
        prop_assert!(normalize_age(age).is_err());
    }

    #[test]
    fn mae_is_symmetric_and_bounded(pairs in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..50)) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = mae(&p, &t).unwrap();
        prop_assert_eq!(m, mae(&t, &p).unwrap());
        let worst = p.iter().zip(&t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!((0.0..=worst + 1e-12).contains(&m));
    }

    #[test]
    fn prediction_csv_round_trips(values in prop::collection::vec((0.0f64..100.0, prop::option::of(0.0f64..100.0)), 1..20)) {
        let all_real = values.iter().all(|v| v.1.is_some());
        let rows: Vec<PredictionRow> = values
            .iter()
            .enumerate()
            .map(|(i, &(a, r))| PredictionRow {
                image_id: format!("id{i}"),
                apparent_pred: a,
                real_pred: if all_real { r } else { None },
            })
            .collect();
        let set = PredictionSet::new(rows).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        prop_assert_eq!(PredictionSet::read_csv(buf.as_slice()).unwrap(), set);
    }

    #[test]
    fn relu_output_is_non_negative(xs in prop::collection::vec(-10.0f64..10.0, 1..30)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(xs.clone()));
        let y = tape.relu(x).unwrap();
        for (out, inp) in tape.value(y).data().iter().zip(&xs) {
            prop_assert_eq!(*out, inp.max(0.0));
        }
    }
}
