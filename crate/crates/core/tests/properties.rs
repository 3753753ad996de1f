use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use onebit::bounds::{assemble_bound, kl_inv_gamma};
use onebit::data::{folds, read_dataset, sample_observations, split, write_dataset, GroundTruth, NoiseSpec, TruthKind};
use onebit::hinge_vb::{avb, avb_terms, update_scales, update_variances, FactorizationState, ScalePosterior};
use onebit::model::{Dataset, FactorMatrix, ObservedEntry, PriorConfig, PriorFamily};
use onebit::special::GigParams;

fn family(gamma: bool) -> PriorFamily {
    if gamma {
        PriorFamily::Gamma
    } else {
        PriorFamily::InvGamma
    }
}

fn random_dataset(m1: usize, m2: usize, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let entries = (0..n)
        .map(|_| ObservedEntry::new(rng.random_range(0..m1), rng.random_range(0..m2), if rng.random_bool(0.5) { 1 } else { -1 }))
        .collect();
    Dataset::new(m1, m2, entries).unwrap()
}

fn random_state(m1: usize, m2: usize, prior: &PriorConfig, rng: &mut ChaCha8Rng) -> FactorizationState {
    let k = prior.k;
    let l0 = FactorMatrix::from_fn(m1, k, |_, _| rng.sample(StandardNormal));
    let r0 = FactorMatrix::from_fn(m2, k, |_, _| rng.sample(StandardNormal));
    let mut s = FactorizationState::from_means(l0, r0, prior, 0.5).unwrap();
    s.vl = FactorMatrix::from_fn(m1, k, |_, _| rng.random_range(0.01..2.0));
    s.vr = FactorMatrix::from_fn(m2, k, |_, _| rng.random_range(0.01..2.0));
    s.scales = update_scales(&s, prior).unwrap();
    s
}

#[derive(Debug)]
struct Case {
    prior: PriorConfig,
    data: Dataset,
    state: FactorizationState,
    lambda: f64,
}

fn case() -> impl Strategy<Value = Case> {
    (1usize..7, 1usize..7, 1usize..4, 1usize..30, any::<bool>(), 0.3f64..4.0, 0.1f64..5.0, 0.1f64..100.0, any::<u64>())
        .prop_map(|(m1, m2, k, n, gamma, alpha, beta, lambda, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prior = PriorConfig::new(family(gamma), alpha, beta, k).unwrap();
            let data = random_dataset(m1, m2, n, &mut rng);
            let state = random_state(m1, m2, &prior, &mut rng);
            Case { prior, data, state, lambda }
        })
}

fn scale_objective(post: &ScalePosterior, s: f64, half_dim: f64) -> f64 {
    s * post.mean_inv() + half_dim * post.mean_log() + post.kl_to_prior()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverse_gamma_kl_is_nonnegative(a1 in 0.2f64..50.0, b1 in 0.01f64..100.0, a2 in 0.2f64..50.0, b2 in 0.01f64..100.0) {
        prop_assert!(kl_inv_gamma(a1, b1, a2, b2).unwrap() >= -1e-12);
        prop_assert!(kl_inv_gamma(a1, b1, a1, b1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn scale_kl_is_nonnegative(c in case()) {
        for sp in &c.state.scales {
            prop_assert!(sp.kl_to_prior() >= -1e-9 * sp.kl_to_prior().abs().max(1.0));
        }
    }

    #[test]
    fn bound_grows_with_confidence(avb_value in 0.0f64..5.0, n in 1usize..100_000, lambda in 0.1f64..1e6, e1 in 1e-6f64..1.0, e2 in 1e-6f64..1.0) {
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        // smaller epsilon is higher confidence
        prop_assert!(assemble_bound(avb_value, n, lo, lambda).total >= assemble_bound(avb_value, n, hi, lambda).total);
    }

    #[test]
    fn bound_is_convex_in_lambda(avb_value in 0.0f64..5.0, n in 1usize..100_000, eps in 1e-6f64..0.99, l1 in 0.1f64..1e5, l2 in 0.1f64..1e5) {
        let f = |l: f64| assemble_bound(avb_value, n, eps, l).total;
        let mid = f(0.5 * (l1 + l2));
        prop_assert!(mid <= 0.5 * (f(l1) + f(l2)) + 1e-12 * mid.abs().max(1.0));
    }

    #[test]
    fn avb_is_at_least_the_hinge_risk(c in case()) {
        let t = avb_terms(&c.state, &c.data, &c.prior, c.lambda).unwrap();
        prop_assert!(t.data_term >= 0.0);
        prop_assert!(t.prior_term >= -1e-12);
        prop_assert!(t.total() >= t.hinge - 1e-12);
    }

    #[test]
    fn variance_update_never_increases_avb(c in case()) {
        let before = avb(&c.state, &c.data, &c.prior, c.lambda).unwrap();
        let (vl, vr) = update_variances(&c.state, &c.data, &c.prior, c.lambda).unwrap();
        let mut s = c.state.clone();
        s.vl = vl;
        s.vr = vr;
        let after = avb(&s, &c.data, &c.prior, c.lambda).unwrap();
        prop_assert!(after <= before + 1e-10 * before.abs().max(1.0), "{after} > {before}");
    }

    #[test]
    fn avb_is_invariant_to_factor_order(c in case(), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..c.prior.k).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let a = avb(&c.state, &c.data, &c.prior, c.lambda).unwrap();
        let b = avb(&c.state.permute_factors(&perm), &c.data, &c.prior, c.lambda).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn gamma_prior_scale_update_is_optimal(s in 1e-3f64..1e3, m in 2usize..200, alpha in 0.3f64..5.0, beta in 0.1f64..10.0, bump in 0.02f64..0.5) {
        let prior = PriorConfig::new(PriorFamily::Gamma, alpha, beta, 1).unwrap();
        let half_dim = 0.5 * m as f64;
        let best = ScalePosterior::optimal(s, m / 2, m - m / 2, &prior).unwrap();
        let f_best = scale_objective(&best, s, half_dim);
        let eta = alpha - half_dim;
        let others = [
            GigParams::new(2.0 * beta, s, eta).unwrap(),
            GigParams::new(2.0 * beta, 2.0 * s * (1.0 + bump), eta).unwrap(),
            GigParams::new(2.0 * beta, 2.0 * s * (1.0 - bump), eta).unwrap(),
            GigParams::new(2.0 * beta * (1.0 + bump), 2.0 * s, eta).unwrap(),
            GigParams::new(2.0 * beta, 2.0 * s, eta + bump).unwrap(),
        ];
        for p in others {
            let f = scale_objective(&ScalePosterior::gig(p, &prior).unwrap(), s, half_dim);
            prop_assert!(f_best <= f + 1e-9 * f.abs().max(1.0), "{p:?}: {f_best} > {f}");
        }
    }

    #[test]
    fn inverse_gamma_scale_update_is_optimal(s in 1e-3f64..1e3, m in 2usize..200, alpha in 0.3f64..5.0, beta in 0.1f64..10.0, bump in 0.02f64..0.5) {
        let prior = PriorConfig::new(PriorFamily::InvGamma, alpha, beta, 1).unwrap();
        let half_dim = 0.5 * m as f64;
        let best = ScalePosterior::optimal(s, m / 2, m - m / 2, &prior).unwrap();
        let f_best = scale_objective(&best, s, half_dim);
        let (shape, scale) = (alpha + half_dim, beta + s);
        for (a, b) in [(shape * (1.0 + bump), scale), (shape, scale * (1.0 - bump)), (shape * (1.0 - bump), scale * (1.0 + bump))] {
            let f = scale_objective(&ScalePosterior::inv_gamma(a, b, &prior).unwrap(), s, half_dim);
            prop_assert!(f_best <= f + 1e-9 * f.abs().max(1.0));
        }
    }

    #[test]
    fn dataset_text_round_trip(m1 in 1usize..50, m2 in 1usize..50, n in 1usize..200, seed in any::<u64>()) {
        let data = random_dataset(m1, m2, n, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf).unwrap();
        prop_assert_eq!(read_dataset(buf.as_slice()).unwrap(), data);
    }

    #[test]
    fn split_partitions_the_entries(n in 2usize..300, frac in 0.01f64..0.99, seed in any::<u64>()) {
        let data = random_dataset(20, 20, n, &mut ChaCha8Rng::seed_from_u64(seed));
        let train_count = ((n as f64 * frac) as usize).clamp(1, n - 1);
        let (train, test) = split(&data, train_count, seed).unwrap();
        prop_assert_eq!(train.len(), train_count);
        prop_assert_eq!(train.len() + test.len(), n);
        let mut all: Vec<_> = train.entries().iter().chain(test.entries()).map(|e| (e.row, e.col, e.label)).collect();
        let mut orig: Vec<_> = data.entries().iter().map(|e| (e.row, e.col, e.label)).collect();
        all.sort_unstable();
        orig.sort_unstable();
        prop_assert_eq!(all, orig);
    }

    #[test]
    fn folds_partition_the_indices(n in 2usize..500, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let f = folds(n, k, seed).unwrap();
        prop_assert_eq!(f.len(), k);
        let sizes: Vec<usize> = f.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn switch_noise_is_symmetric_in_the_sign_of_the_truth(p in 0.01f64..0.99, seed in any::<u64>()) {
        let truth = GroundTruth::generate(TruthKind::TypeA, 15, 12, 2, seed).unwrap();
        let mut flipped = truth.clone();
        flipped.matrix = truth.matrix.scaled(-1.0);
        let noise = NoiseSpec::Switch { p };
        let a = sample_observations(&truth, noise, 300, true, seed).unwrap();
        let b = sample_observations(&flipped, noise, 300, true, seed).unwrap();
        for (x, y) in a.data.entries().iter().zip(b.data.entries()) {
            prop_assert_eq!((x.row, x.col), (y.row, y.col));
            prop_assert_eq!(x.label, -y.label);
        }
    }
}

#[test]
fn switch_noise_flips_at_the_requested_rate() {
    let truth = GroundTruth::generate(TruthKind::TypeB, 50, 40, 3, 1).unwrap();
    for p in [0.05, 0.2, 0.45] {
        let n = 40_000;
        let obs = sample_observations(&truth, NoiseSpec::Switch { p }, n, true, 9).unwrap();
        let flips = obs
            .data
            .entries()
            .iter()
            .zip(obs.clean.entries())
            .filter(|(a, b)| a.label != b.label)
            .count() as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((flips - n as f64 * p).abs() < 5.0 * sd, "p = {p}: {flips} flips");
    }
}
