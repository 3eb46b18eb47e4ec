use mixdrift::discrete::{ToralAutomorphism, TransportMap};
use mixdrift::flows::{flow_map, FlowOptions};
use mixdrift::metrics::{fourier_observables, tv};
use mixdrift::torus::{torus_distance, wrap_coord};
use mixdrift::velocity::{ScheduledShearField, ShearProfile, ShearSchedule};
use mixdrift::{GibbsMeasure, Potential, Profile1d};
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = f64> {
    0.0..1.0f64
}

fn profile() -> impl Strategy<Value = ShearProfile> {
    prop_oneof![Just(ShearProfile::Sawtooth), Just(ShearProfile::Sine), Just(ShearProfile::LocalizedTent)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wrapped_coordinates_land_in_unit_interval(c in -1e6..1e6f64) {
        let w = wrap_coord(c);
        prop_assert!((0.0..1.0).contains(&w));
        prop_assert!(((c - w) - (c - w).round()).abs() < 1e-6);
    }

    #[test]
    fn torus_distance_is_a_symmetric_bounded_metric(a in prop::array::uniform2(unit()), b in prop::array::uniform2(unit())) {
        let d = torus_distance(&a, &b);
        prop_assert!((d - torus_distance(&b, &a)).abs() < 1e-15);
        prop_assert!(d <= 0.5f64.hypot(0.5) + 1e-12);
        let shifted = [wrap_coord(b[0] + 3.0), wrap_coord(b[1] - 2.0)];
        prop_assert!((torus_distance(&a, &shifted) - d).abs() < 1e-12);
    }

    #[test]
    fn tv_is_symmetric_and_bounded(p in prop::collection::vec(0.0..1.0f64, 2..20)) {
        let s: f64 = p.iter().sum::<f64>().max(1e-12);
        let p: Vec<f64> = p.iter().map(|v| v / s).collect();
        let q: Vec<f64> = p.iter().rev().cloned().collect();
        let d = tv(&p, &q);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - tv(&q, &p)).abs() < 1e-15);
        prop_assert!(tv(&p, &p) == 0.0);
    }

    #[test]
    fn schedule_is_a_pure_function_of_seed_and_index(seed in any::<u64>(), n in 0u64..10_000, dim in 2usize..=8, p in profile()) {
        let a = ShearSchedule::new(seed, dim, p).unwrap();
        let b = ShearSchedule::new(seed, dim, p).unwrap();
        let t = a.tuple(n);
        prop_assert_eq!(t, b.tuple(n));
        prop_assert!(t.i < t.j && t.j < dim);
        prop_assert!((0.0..1.0).contains(&t.alpha) && (0.0..=1.0).contains(&t.beta));
        prop_assert!(t.orientation == 1 || t.orientation == 2);
    }

    #[test]
    fn transport_map_round_trips(x in prop::array::uniform2(unit()), kappa in 0.1..1.0f64) {
        let m = GibbsMeasure::normalize(Potential::separable(2, Profile1d::SinSquared).unwrap(), kappa, 256).unwrap();
        let t = TransportMap::new(&m).unwrap();
        let mut y = x;
        t.forward(&mut y);
        t.inverse(&mut y);
        prop_assert!(torus_distance(&x, &y) < 1e-8, "{:?} -> {:?}", x, y);
    }

    #[test]
    fn automorphism_is_invertible_on_lattice(k in prop::array::uniform2(-50i128..50)) {
        let m = ToralAutomorphism::blocks(2).unwrap();
        prop_assert_eq!(m.determinant().abs(), 1);
        let d = m.dual(&k);
        prop_assert_eq!(d.iter().all(|v| *v == 0), k.iter().all(|v| *v == 0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // μ-preservation makes the Jacobian satisfy ρ(φ(x)) det Dφ(x) = ρ(x).
    #[test]
    fn flow_jacobian_transports_the_density(x in prop::array::uniform2(unit()), seed in 0u64..1000, p in profile()) {
        let m = GibbsMeasure::normalize(Potential::DoubleWell, 0.3, 256).unwrap();
        let field = ScheduledShearField::new(ShearSchedule::new(seed, 2, p).unwrap(), &m).unwrap();
        let opts = FlowOptions { rtol: 1e-10, atol: 1e-12, ..FlowOptions::default() };
        let r = flow_map(&field, 0.0, 1.0, &x, &opts).unwrap();
        let j = &r.jacobian;
        let det = j[0] * j[3] - j[1] * j[2];
        let lhs = m.density(r.position.coords()) * det;
        prop_assert!((lhs / m.density(&x) - 1.0).abs() < 1e-5, "det {} ratio {}", det, lhs / m.density(&x));
    }
}

#[test]
fn fourier_dictionary_has_one_member_per_signed_mode_pair() {
    assert_eq!(fourier_observables(2, 2).len(), 24);
    assert_eq!(fourier_observables(2, 1).len(), 8);
    assert_eq!(fourier_observables(3, 1).len(), 26);
}
