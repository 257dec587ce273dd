use chda_core::field::row_anomalies;
use chda_core::io::{read_field, write_field, BinReader, BinWriter};
use chda_core::localization::{gaspari_cohn, plain_pseudo_optimal};
use chda_core::{GridSpec, LogPermField, Matrix};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gaspari_cohn_is_a_bounded_decreasing_taper(r in 0.0f64..30.0, dr in 0.0f64..5.0, c in 0.5f64..10.0) {
        let a = gaspari_cohn(r, c);
        let b = gaspari_cohn(r + dr, c);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a + 1e-12);
        if r >= 2.0 * c {
            prop_assert_eq!(a, 0.0);
        }
    }

    #[test]
    fn pseudo_optimal_entries_are_in_unit_interval(z in matrix(12, 6), d in matrix(12, 3)) {
        let t = plain_pseudo_optimal(&z, &d, 1e-3).unwrap();
        prop_assert!(t.entries().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn pseudo_optimal_is_scale_invariant(z in matrix(15, 4), d in matrix(15, 2), a in 0.1f64..10.0, b in 0.1f64..10.0) {
        let mut zs = z.clone();
        zs.as_mut_slice().iter_mut().for_each(|v| *v *= a);
        let mut ds = d.clone();
        ds.as_mut_slice().iter_mut().for_each(|v| *v *= b);
        let t0 = plain_pseudo_optimal(&z, &d, 0.0).unwrap();
        let t1 = plain_pseudo_optimal(&zs, &ds, 0.0).unwrap();
        for (x, y) in t0.entries().as_slice().iter().zip(t1.entries().as_slice()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn deviations_sum_to_zero(m in matrix(9, 5)) {
        let a = row_anomalies(&m);
        for c in 0..5 {
            let s: f64 = (0..9).map(|r| a.deviations[(r, c)]).sum();
            prop_assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn field_round_trip_is_bit_exact(v in prop::collection::vec(-1e6f64..1e6, 12)) {
        let f = LogPermField::new(GridSpec::new(4, 3, 5.0, 5.0, 1.0).unwrap(), v).unwrap();
        let mut w = BinWriter::new(Vec::new());
        write_field(&mut w, &f).unwrap();
        let bytes = w.into_inner();
        let g = read_field(&mut BinReader::new(bytes.as_slice())).unwrap();
        prop_assert_eq!(f, g);
    }
}
