use cdma_otfs::channel::{DdChannel, DdOperator, Path, PathKind, PathSet};
use cdma_otfs::crb::{crb_range, crb_velocity, CrbInputs};
use cdma_otfs::frame::{demap_qpsk, map_bits_qpsk, spread, DdFrame, GridConfig, Scheme, SpreadingPlan};
use cdma_otfs::linalg::norm_sqr;
use cdma_otfs::receiver::{count_bit_errors, MmseDetector};
use cdma_otfs::sensing::{correlation_power, pick_peaks, MlRefiner};
use cdma_otfs::sequences::{build_sequence_matrix, family_capacity, Family};
use num_complex::Complex64;
use proptest::prelude::*;

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![Just(Family::Gold), Just(Family::Hadamard), Just(Family::ZadoffChu)]
}

fn scheme() -> impl Strategy<Value = Scheme> {
    prop_oneof![
        Just(Scheme::PureOtfs),
        Just(Scheme::DelayCdma),
        Just(Scheme::DopplerCdma),
        Just(Scheme::DelayDopplerCdma)
    ]
}

fn gain() -> impl Strategy<Value = Complex64> {
    (0.2f64..2.0, 0.0f64..std::f64::consts::TAU).prop_map(|(r, t)| Complex64::from_polar(r, t))
}

fn grid(m: usize, n: usize) -> GridConfig {
    GridConfig::new(m, n, 120e3, 40e9).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_sequence_has_unit_energy(family in family(), len_exp in 3u32..7, extra in 0usize..4) {
        let len = (1usize << len_exp) + if family == Family::Hadamard { 0 } else { extra };
        let cap = family_capacity(family, len).unwrap();
        let c = build_sequence_matrix(family, len, cap.min(len)).unwrap();
        for col in c.columns() {
            prop_assert!((col.energy() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spreading_preserves_energy_under_orthogonal_load(scheme in scheme(), family in prop_oneof![Just(Family::Hadamard), Just(Family::ZadoffChu)], seed in any::<u64>()) {
        let g = grid(8, 8);
        let plan = SpreadingPlan::from_params(&g, scheme, family, scheme.max_n_mult(&g)).unwrap();
        let bits: Vec<u8> = (0..2 * plan.n_s()).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
        let s = map_bits_qpsk(&bits).unwrap();
        let x = spread(&plan, &s).unwrap();
        prop_assert!((x.energy() - norm_sqr(&s)).abs() < 1e-9);
    }

    #[test]
    fn qpsk_round_trip(bits in proptest::collection::vec(0u8..2, 2..64usize).prop_filter("even", |b| b.len() % 2 == 0)) {
        let (_, back) = demap_qpsk(&map_bits_qpsk(&bits).unwrap());
        prop_assert_eq!(back, bits);
    }

    #[test]
    fn single_path_channel_is_unitary(g in gain(), tau in 0.0f64..7.0, nu in -3.5f64..3.5, xs in proptest::collection::vec(gain(), 64)) {
        let h = DdChannel::new(&[Path::new(g, tau, nu)], 8, 8).unwrap();
        let y = h.apply(&xs);
        prop_assert!((norm_sqr(&y) - g.norm_sqr() * norm_sqr(&xs)).abs() < 1e-9 * norm_sqr(&xs));
    }

    #[test]
    fn fast_operator_matches_dense(gs in proptest::collection::vec((gain(), 0usize..6, -3.0f64..3.0, 0.0f64..1.0), 1..4), xs in proptest::collection::vec(gain(), 64)) {
        let paths: Vec<Path> = gs.iter().map(|&(g, d, nu, frac)| Path::new(g, d as f64 + frac, nu)).collect();
        let h = DdChannel::new(&paths, 8, 8).unwrap();
        let dense = h.to_dense();
        let a = h.apply(&xs);
        let b = cdma_otfs::linalg::mul_vec(&dense, &xs);
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).norm() < 1e-10);
        }
    }

    #[test]
    fn path_record_round_trips(gs in proptest::collection::vec((gain(), 0.0f64..7.0, -3.0f64..3.0), 1..5)) {
        let set = PathSet {
            paths: gs.iter().map(|&(g, d, nu)| Path::new(g, d, nu)).collect(),
            grid: grid(8, 8),
            kind: PathKind::Communication,
            truth: Vec::new(),
        };
        let back = PathSet::from_record(&set.to_record()).unwrap();
        prop_assert_eq!(back, set);
    }

    #[test]
    fn noiseless_mmse_recovers_bits(scheme in scheme(), seed in any::<u64>(), g in gain(), d in 0usize..4, nu in 0usize..8) {
        let gr = grid(8, 8);
        let plan = SpreadingPlan::from_params(&gr, scheme, Family::ZadoffChu, scheme.max_n_mult(&gr)).unwrap();
        let h = DdChannel::new(&[Path::new(g, d as f64, nu as f64)], 8, 8).unwrap();
        let bits: Vec<u8> = (0..2 * plan.n_s()).map(|i| ((seed.rotate_left(i as u32 % 64)) & 1) as u8).collect();
        let x = spread(&plan, &map_bits_qpsk(&bits).unwrap()).unwrap();
        let y = h.apply(x.vec());
        let det = MmseDetector::new(&h, &plan, 1e-9).unwrap();
        prop_assert_eq!(count_bit_errors(&det.detect(&y).unwrap().bits_hat, &bits).unwrap(), 0);
    }

    #[test]
    fn correlation_peak_sits_at_the_path(seed in any::<u64>(), d in 0usize..8, nu in 0usize..8, g in gain()) {
        let plan = SpreadingPlan::from_params(&grid(8, 8), Scheme::PureOtfs, Family::ZadoffChu, 64).unwrap();
        let bits: Vec<u8> = (0..128).map(|i| ((seed.rotate_left(i as u32 % 64) ^ (i as u64 / 7)) & 1) as u8).collect();
        let x = spread(&plan, &map_bits_qpsk(&bits).unwrap()).unwrap();
        let h = DdChannel::new(&[Path::new(g, d as f64, nu as f64)], 8, 8).unwrap();
        let y = h.apply(x.vec());
        let power = correlation_power(&x, &y).unwrap();
        // Cauchy-Schwarz: no cell can exceed |g|^2 ||x||^4
        let bound = g.norm_sqr() * x.energy().powi(2);
        prop_assert!(power.iter().all(|&p| p <= bound * (1.0 + 1e-9)));
        prop_assert!((power[d + 8 * nu] - bound).abs() < 1e-9 * bound);
        let est = pick_peaks(&power, 8, 8, 1, 0).unwrap();
        prop_assert_eq!((est.targets[0].delay, est.targets[0].doppler), (d, nu));
    }

    #[test]
    fn ml_metric_is_bounded_by_received_energy(seed in any::<u64>(), tau in 0.0f64..7.0, nu in 0.0f64..7.0, ct in 0.0f64..7.0, cn in 0.0f64..7.0) {
        let plan = SpreadingPlan::from_params(&grid(8, 8), Scheme::DelayCdma, Family::ZadoffChu, 8).unwrap();
        let bits: Vec<u8> = (0..128).map(|i| ((seed.rotate_left(i as u32 % 64)) & 1) as u8).collect();
        let x = spread(&plan, &map_bits_qpsk(&bits).unwrap()).unwrap();
        let h = DdChannel::new(&[Path::new(Complex64::new(1.0, 0.0), tau, nu)], 8, 8).unwrap();
        let y = DdFrame::from_vec(8, 8, &h.apply(x.vec())).unwrap();
        let r = MlRefiner::new(&x, &y).unwrap();
        let top = r.metric(tau, nu);
        prop_assert!((top - y.energy()).abs() < 1e-8 * y.energy());
        prop_assert!(r.metric(ct, cn) <= y.energy() * (1.0 + 1e-9));
    }

    #[test]
    fn crb_shrinks_with_power_and_grows_with_noise(n0 in 1e-3f64..10.0, p in 1e-2f64..10.0, k in 1.01f64..4.0) {
        let base = CrbInputs { n0, p_avg: p, gain2: 1.0, grid: grid(16, 16) };
        let louder = CrbInputs { p_avg: p * k, ..base };
        let noisier = CrbInputs { n0: n0 * k, ..base };
        prop_assert!(crb_range(&louder).unwrap() < crb_range(&base).unwrap());
        prop_assert!(crb_velocity(&noisier).unwrap() > crb_velocity(&base).unwrap());
        let ratio = crb_range(&noisier).unwrap() / crb_range(&base).unwrap();
        prop_assert!((ratio - k.sqrt()).abs() < 1e-12 * k);
    }
}
