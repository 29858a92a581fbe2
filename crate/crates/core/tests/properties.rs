use proptest::collection::vec;
use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

use radsym::io::{decode, encode};
use radsym::rearrange::{distribution_function, polarize, sample_polarizers, schwarz_symmetrize, sorted_values};
use radsym::{make_domain, GridFunction, Shape};

fn field(values: Vec<f64>) -> GridFunction {
    let domain = make_domain(2, Shape::Ball { radius: 1.0 }, 1.0, 0.25).unwrap();
    GridFunction::new(domain, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_round_trip_is_bit_exact(values in vec(0.0f64..1e6, 64)) {
        let u = field(values);
        let back = decode(&encode(&u)).unwrap();
        prop_assert!(back.values().iter().zip(u.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn symmetrization_is_equimeasurable_and_idempotent(values in vec(0.0f64..4.0, 64)) {
        let u = field(values);
        let star = schwarz_symmetrize(&u).unwrap();
        prop_assert_eq!(sorted_values(&u), sorted_values(&star));
        prop_assert_eq!(schwarz_symmetrize(&star).unwrap(), star.clone());
        for t in [0.0, 0.5, 1.0, 2.0] {
            prop_assert_eq!(distribution_function(&u, t), distribution_function(&star, t));
        }
    }

    #[test]
    fn polarization_is_idempotent_and_fixes_u_star(values in vec(0.0f64..4.0, 64), seed in 0u64..1000) {
        let u = field(values);
        let star = schwarz_symmetrize(&u).unwrap();
        for q in &sample_polarizers(u.domain(), seed, 5).unwrap().items {
            let once = polarize(&u, q).unwrap();
            prop_assert_eq!(polarize(&once, q).unwrap(), once.clone());
            prop_assert_eq!(sorted_values(&once), sorted_values(&u));
            prop_assert_eq!(polarize(&star, q).unwrap(), star.clone());
        }
    }
}
