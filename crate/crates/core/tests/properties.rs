mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use thmm::emissions::{
    reestimate_bm_drift, reestimate_nonparametric, BmDriftEmission, EmissionModel,
    EuclideanEmission, NonparametricEmission,
};
use thmm::evaluate::{adjusted_rand_index, align_labels, confusion_matrix, Labeling};
use thmm::hmm_engine::{forward_backward, posteriors, reestimate, LogEmissions};
use thmm::init::{init_kmeans, init_random_obs};
use thmm::path_grid::{derivative, integrate, make_path, smooth, sobolev_sq_distance};
use thmm::*;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, n)
}

fn path_strategy() -> impl Strategy<Value = Path> {
    (3usize..60).prop_flat_map(|n| values(n).prop_map(move |v| Path::new(Grid::new(n).unwrap(), v).unwrap()))
}

fn path_pair() -> impl Strategy<Value = (Path, Path)> {
    (3usize..60).prop_flat_map(|n| {
        (values(n), values(n)).prop_map(move |(a, b)| {
            let g = Grid::new(n).unwrap();
            (Path::new(g, a).unwrap(), Path::new(g, b).unwrap())
        })
    })
}

fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=k, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn discrete_fundamental_theorem(p in path_strategy()) {
        let total = integrate(&derivative(&p), p.grid()).unwrap();
        prop_assert!((total - p.increment()).abs() <= 1e-12 * p.values().iter().map(|v| v.abs()).fold(1.0, f64::max));
    }

    #[test]
    fn sobolev_is_a_symmetric_nonnegative_distance((a, b) in path_pair()) {
        for order in [SobolevOrder::First, SobolevOrder::Second] {
            let ab = sobolev_sq_distance(&a, &b, order).unwrap();
            let ba = sobolev_sq_distance(&b, &a, order).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            prop_assert_eq!(sobolev_sq_distance(&a, &a, order).unwrap(), 0.0);
        }
        if a != b {
            prop_assert!(sobolev_sq_distance(&a, &b, SobolevOrder::First).unwrap() > 0.0);
        }
    }

    #[test]
    fn smoothing_is_linear((a, b) in path_pair(), alpha in -3.0..3.0f64, beta in -3.0..3.0f64, bw in 0.01..0.5f64) {
        let g = a.grid();
        let combo = Path::new(g, a.values().iter().zip(b.values()).map(|(x, y)| alpha * x + beta * y).collect()).unwrap();
        let lhs = smooth(&combo, bw).unwrap();
        let (sa, sb) = (smooth(&a, bw).unwrap(), smooth(&b, bw).unwrap());
        for ((l, x), y) in lhs.values().iter().zip(sa.values()).zip(sb.values()) {
            prop_assert!((l - (alpha * x + beta * y)).abs() <= 1e-12 * 100.0);
        }
    }

    #[test]
    fn make_path_is_idempotent_on_normalized_input(p in path_strategy()) {
        let times: Vec<f64> = p.grid().nodes().collect();
        let again = make_path(&times, p.values(), p.grid().n_points()).unwrap();
        for (x, y) in again.values().iter().zip(p.values()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn quadratic_families_have_nonpositive_log_emission((a, b) in path_pair(), c in -10.0..10.0f64, x in values(3), m in values(3)) {
        let bm = BmDriftEmission { drift: c };
        prop_assert!(bm.log_emission(&a) <= 0.0);
        for order in [SobolevOrder::First, SobolevOrder::Second] {
            let e = NonparametricEmission { mean_path: b.clone(), order };
            prop_assert!(e.log_emission(&a).unwrap() <= 0.0);
        }
        let e = EuclideanEmission { mean: m };
        prop_assert!(e.log_emission(&Precision::identity(3), &x).unwrap() <= 0.0);
    }

    #[test]
    fn equal_weight_bm_drift_is_mean_increment(seed in 0u64..10_000, n in 1usize..20) {
        let obs = random_paths(Family::BmDrift, 0.5, n, Grid::new(21).unwrap(), seed);
        let est = reestimate_bm_drift(&vec![0.7; n], &obs).unwrap();
        let mean_inc = obs.iter().map(|p| p.increment()).sum::<f64>() / n as f64;
        prop_assert!((est - mean_inc).abs() <= 1e-12 * mean_inc.abs().max(1.0));
    }

    #[test]
    fn nonparametric_mean_in_convex_hull(seed in 0u64..10_000, n in 1usize..12) {
        let mut r = rng(seed);
        let obs = random_paths(Family::Nonparametric, 0.5, n, Grid::new(31).unwrap(), seed);
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
        let m = reestimate_nonparametric(&w, &obs).unwrap();
        for (k, v) in m.values().iter().enumerate() {
            let lo = obs.iter().map(|p| p.values()[k]).fold(f64::INFINITY, f64::min);
            let hi = obs.iter().map(|p| p.values()[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }

    #[test]
    fn initializers_stay_in_convex_hull(seed in 0u64..10_000, n in 2usize..15, p in 1usize..4) {
        prop_assume!(p <= n);
        let obs = random_paths(Family::Nonparametric, 0.5, n, Grid::new(21).unwrap(), seed);
        let hull = |m: &Path| m.values().iter().enumerate().all(|(k, v)| {
            let lo = obs.iter().map(|p| p.values()[k]).fold(f64::INFINITY, f64::min);
            let hi = obs.iter().map(|p| p.values()[k]).fold(f64::NEG_INFINITY, f64::max);
            *v >= lo - 1e-12 && *v <= hi + 1e-12
        });
        let km = init_kmeans(&obs, p, SobolevOrder::First, Seed(seed), 50).unwrap();
        prop_assert!(km.iter().all(hull));
        prop_assert_eq!(km, init_kmeans(&obs, p, SobolevOrder::First, Seed(seed), 50).unwrap());
        let ro = init_random_obs(&obs, p, Seed(seed)).unwrap();
        prop_assert!(ro.iter().all(hull));
        prop_assert_eq!(ro, init_random_obs(&obs, p, Seed(seed)).unwrap());
    }
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

fn hmm_instance() -> impl Strategy<Value = (MarkovChain, Vec<Vec<f64>>, u64)> {
    (1usize..5, 1usize..25, any::<u64>()).prop_map(|(p, t, seed)| {
        let mut r = rng(seed);
        (random_chain(&mut r, p), random_log_b(&mut r, t, p), seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn forward_backward_is_consistent((chain, rows, _) in hmm_instance()) {
        let tr = forward_backward(&chain, &log_emissions(&rows)).unwrap();
        for (a, b) in tr.log_alpha.iter().zip(&tr.log_beta) {
            let m = a.iter().zip(b).map(|(x, y)| x + y).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + a.iter().zip(b).map(|(x, y)| (x + y - m).exp()).sum::<f64>().ln();
            prop_assert!(rel_close(lse, tr.log_likelihood, 1e-8));
        }
    }

    #[test]
    fn reestimated_chain_is_row_stochastic((chain, rows, seed) in hmm_instance()) {
        let lb = log_emissions(&rows);
        let post = posteriors(&forward_backward(&chain, &lb).unwrap(), &chain, &lb).unwrap();
        let obs = Observations::vectors((0..rows.len()).map(|t| vec![t as f64]).collect()).unwrap();
        let mut r = rng(seed);
        let model = ThmmModel::new(chain.clone(), random_model(Family::Euclidean, 0.5, &obs, chain.n_states(), &mut r)).unwrap();
        let (next, _) = reestimate(&model, &post, &obs).unwrap();
        prop_assert!((next.chain.eta().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for row in next.chain.trans() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn posteriors_and_viterbi_ignore_row_shifts((chain, rows, seed) in hmm_instance()) {
        let mut r = rng(seed);
        let shifted: Vec<Vec<f64>> = rows.iter().map(|row| {
            let c = r.random_range(-50.0..50.0);
            row.iter().map(|x| x + c).collect()
        }).collect();
        let (a, b) = (log_emissions(&rows), log_emissions(&shifted));
        let pa = posteriors(&forward_backward(&chain, &a).unwrap(), &chain, &a).unwrap();
        let pb = posteriors(&forward_backward(&chain, &b).unwrap(), &chain, &b).unwrap();
        for (x, y) in pa.gamma.iter().flatten().zip(pb.gamma.iter().flatten()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        for (x, y) in pa.xi.iter().flatten().flatten().zip(pb.xi.iter().flatten().flatten()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        prop_assert_eq!(viterbi(&chain, &a).unwrap(), viterbi(&chain, &b).unwrap());
    }

    #[test]
    fn viterbi_beats_sampled_paths((chain, rows, seed) in hmm_instance()) {
        let best = viterbi(&chain, &log_emissions(&rows)).unwrap();
        let best_lp = log_joint(&chain, &rows, &best);
        let states = thmm::simulate::sample_states(&chain, rows.len() * 1000, Seed(seed));
        for seq in states.chunks(rows.len()) {
            prop_assert!(log_joint(&chain, &rows, seq) <= best_lp + 1e-12 * best_lp.abs());
        }
    }
}

fn permute_model(model: &ThmmModel, perm: &[usize]) -> ThmmModel {
    // new state k is old state perm[k]
    let eta = perm.iter().map(|&i| model.chain.eta()[i]).collect();
    let trans = perm
        .iter()
        .map(|&i| perm.iter().map(|&j| model.chain.trans()[i][j]).collect())
        .collect();
    let emissions = match &model.emissions {
        EmissionModel::BmDrift(s) => EmissionModel::BmDrift(perm.iter().map(|&i| s[i]).collect()),
        EmissionModel::Ou(s) => EmissionModel::Ou(perm.iter().map(|&i| s[i]).collect()),
        EmissionModel::FbmDrift(s) => EmissionModel::FbmDrift(perm.iter().map(|&i| s[i]).collect()),
        EmissionModel::Nonparametric(s) => EmissionModel::Nonparametric(perm.iter().map(|&i| s[i].clone()).collect()),
        EmissionModel::Euclidean { precision, states } => EmissionModel::Euclidean {
            precision: precision.clone(),
            states: perm.iter().map(|&i| states[i].clone()).collect(),
        },
    };
    ThmmModel::new(MarkovChain::new(eta, trans).unwrap(), emissions).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn baum_welch_is_permutation_equivariant(seed in 0u64..100_000, fam in 0usize..4) {
        let family = [Family::BmDrift, Family::Ou, Family::FbmDrift, Family::Nonparametric][fam];
        let mut r = rng(seed);
        let obs = Observations::paths(random_paths(family, 0.7, 20, Grid::new(31).unwrap(), seed)).unwrap();
        let p = 3;
        let model = ThmmModel::new(random_chain(&mut r, p), random_model(family, 0.7, &obs, p, &mut r)).unwrap();
        let perm = [2, 0, 1];
        let opts = FitOptions { tol: 0.0, max_iter: 15 };
        let (fa, ra) = baum_welch(&model, &obs, opts).unwrap();
        let (fb, rb) = baum_welch(&permute_model(&model, &perm), &obs, opts).unwrap();
        for (x, y) in ra.loglik_trace.iter().zip(&rb.loglik_trace) {
            prop_assert!(rel_close(*x, *y, 1e-9));
        }
        let expected = permute_model(&fa, &perm);
        for (x, y) in expected.chain.trans().iter().flatten().zip(fb.chain.trans().iter().flatten()) {
            prop_assert!((x - y).abs() <= 1e-8);
        }
        let la = expected.emissions.log_emissions(&obs).unwrap();
        let lb = fb.emissions.log_emissions(&obs).unwrap();
        for t in 0..obs.len() {
            for j in 0..p {
                prop_assert!(rel_close(la.get(t, j), lb.get(t, j), 1e-8));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

fn labeling_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2usize..60).prop_flat_map(|n| (labels(n, 5), labels(n, 5)))
}

proptest! {
    #[test]
    fn ari_is_symmetric((a, b) in labeling_pair()) {
        let (la, lb) = (Labeling::new(a).unwrap(), Labeling::new(b).unwrap());
        let ab = adjusted_rand_index(&la, &lb).unwrap();
        let ba = adjusted_rand_index(&lb, &la).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn ari_ignores_relabeling((a, b) in labeling_pair(), perm in Just((1..=5).collect::<Vec<usize>>()).prop_shuffle()) {
        let relabeled: Vec<usize> = b.iter().map(|l| perm[l - 1]).collect();
        let la = Labeling::new(a).unwrap();
        let x = adjusted_rand_index(&la, &Labeling::new(b).unwrap()).unwrap();
        let y = adjusted_rand_index(&la, &Labeling::new(relabeled).unwrap()).unwrap();
        prop_assert!((x - y).abs() <= 1e-12);
    }

    #[test]
    fn alignment_never_lowers_the_trace((a, b) in labeling_pair()) {
        let (truth, pred) = (Labeling::new(a).unwrap(), Labeling::new(b).unwrap());
        let trace = |m: Vec<Vec<usize>>| (0..m.len()).map(|i| m[i][i]).sum::<usize>();
        let before = trace(confusion_matrix(&truth, &pred).unwrap());
        let al = align_labels(&truth, &pred).unwrap();
        let after = trace(confusion_matrix(&truth, &al.apply(&pred)).unwrap());
        prop_assert!(after >= before);
        prop_assert_eq!(after, al.trace);
    }
}

#[test]
fn log_emissions_reject_nan() {
    assert!(LogEmissions::from_rows(vec![vec![f64::NAN]]).is_err());
}
