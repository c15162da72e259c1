use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use units_ml::belief::{
    dissonance, eta_schedule, evidential_loss, incorrect_belief, lambda_schedule, one_hot, opinion_from_evidence,
    sample_belief_vector, verify_bound, ScheduleConfig, TaskBelief,
};
use units_ml::episode::{make_synthetic, sample_task, LabelBudget, SamplerConfig, SyntheticSpec};
use units_ml::meta::select;

fn evidence_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..1e3f64], 2..=10)
}

/// Dirichlet-like belief vector with total mass in (0, 1].
fn belief_vec() -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(1e-3..1.0f64, 2..=10), 1e-3..=1.0f64).prop_map(|(w, mass)| {
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| mass * v / total).collect()
    })
}

proptest! {
    #[test]
    fn beliefs_and_vacuity_sum_to_one(e in evidence_vec()) {
        let o = opinion_from_evidence(&e).unwrap();
        prop_assert!((o.beliefs.iter().sum::<f64>() + o.vacuity - 1.0).abs() <= 1e-9);
        prop_assert!(o.vacuity > 0.0 && o.vacuity <= 1.0);
        prop_assert!(o.beliefs.iter().all(|&b| b >= 0.0));
    }

    #[test]
    fn dissonance_is_permutation_invariant(b in belief_vec(), seed in any::<u64>()) {
        let mut p = b.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(p.as_mut_slice(), &mut rng);
        prop_assert!((dissonance(&p) - dissonance(&b)).abs() <= 1e-12);
    }

    #[test]
    fn zero_padding_changes_nothing(b in belief_vec(), pad in 1usize..4, y in 0usize..10) {
        let y = y % b.len();
        let mut padded = b.clone();
        padded.extend(std::iter::repeat_n(0.0, pad));
        prop_assert_eq!(dissonance(&padded), dissonance(&b));
        prop_assert_eq!(
            incorrect_belief(&padded, &one_hot(y, padded.len())).unwrap(),
            incorrect_belief(&b, &one_hot(y, b.len())).unwrap()
        );
    }

    #[test]
    fn dissonance_is_bounded_by_belief_mass(b in belief_vec()) {
        let d = dissonance(&b);
        prop_assert!(d >= 0.0);
        prop_assert!(d <= b.iter().sum::<f64>() + 1e-12);
    }

    #[test]
    fn incorrect_belief_bounds_dissonance(b in belief_vec()) {
        let check = verify_bound(&b, true);
        prop_assert!(check.holds, "slack {}", check.min_slack);
    }

    #[test]
    fn loss_is_cross_entropy_of_expected_probabilities(e in evidence_vec(), y in 0usize..10) {
        let y = y % e.len();
        let alpha: Vec<f64> = e.iter().map(|v| v + 1.0).collect();
        let s: f64 = alpha.iter().sum();
        let ce = -(alpha[y] / s).ln();
        let loss = evidential_loss(&e, &one_hot(y, e.len()), 0.0).unwrap();
        prop_assert!((loss - ce).abs() <= 1e-12);
    }

    #[test]
    fn loss_penalty_adds_eta_times_incorrect_belief(e in evidence_vec(), y in 0usize..10, eta in 0.0..10.0f64) {
        let y = y % e.len();
        let t = one_hot(y, e.len());
        let o = opinion_from_evidence(&e).unwrap();
        let expected = evidential_loss(&e, &t, 0.0).unwrap() + eta * incorrect_belief(&o.beliefs, &t).unwrap();
        prop_assert!((evidential_loss(&e, &t, eta).unwrap() - expected).abs() <= 1e-9);
    }

    #[test]
    fn schedules_are_monotone(epoch in 0u64..200, cap in 0.0..20.0f64) {
        let cfg = ScheduleConfig { eta_cap: cap, ..ScheduleConfig::default() };
        prop_assert!(lambda_schedule(epoch + 1, &cfg) <= lambda_schedule(epoch, &cfg));
        prop_assert!(eta_schedule(epoch + 1, &cfg) >= eta_schedule(epoch, &cfg));
        prop_assert!((0.5..=0.99).contains(&lambda_schedule(epoch, &cfg)));
        prop_assert!(eta_schedule(epoch, &cfg) <= cap);
    }

    #[test]
    fn selection_ignores_positive_rescaling(
        uncs in prop::collection::vec(0.0..1.0f64, 1..20),
        scale in 1e-3..1e3f64,
        k in 1usize..20,
    ) {
        let tb = |u: f64| TaskBelief { vb: 0.0, cb: 0.0, ib: None, unc: Some(u) };
        let a: Vec<TaskBelief> = uncs.iter().map(|&u| tb(u)).collect();
        let b: Vec<TaskBelief> = uncs.iter().map(|&u| tb(u * scale)).collect();
        let k = k.min(uncs.len());
        let picked = select(&a, k);
        prop_assert_eq!(picked.len(), k);
        // rescaling can only reorder values that round to the same float
        let ranks = |s: &[TaskBelief], idx: &[usize]| idx.iter().map(|&i| s[i].unc.unwrap()).collect::<Vec<_>>();
        let rescaled = select(&b, k);
        let mut x = ranks(&a, &picked);
        let mut y: Vec<f64> = ranks(&b, &rescaled).iter().map(|v| v / scale).collect();
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        for (p, q) in x.iter().zip(&y) {
            prop_assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
        }
        let max = uncs.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(a[picked[0]].unc.unwrap(), max);
    }

    #[test]
    fn sampled_tasks_are_well_formed(
        seed in any::<u64>(),
        n_way in 2usize..6,
        k_shot in 1usize..3,
        q_query in 1usize..3,
        queries in 1usize..4,
    ) {
        let spec = SyntheticSpec { num_classes: 6, dim: 3, samples_per_class: 20, radius: 2.0, noise_sigma: 1.0 };
        let ds = make_synthetic(&spec, 5).unwrap();
        let cfg = SamplerConfig { n_way, k_shot, q_query, queries_per_task: queries };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut task = sample_task(&ds, &cfg, &mut rng).unwrap();

        let mut classes = task.classes.clone();
        classes.sort_unstable();
        classes.dedup();
        prop_assert_eq!(classes.len(), n_way);

        let mut rows = task.all_rows();
        let total = rows.len();
        rows.sort_unstable();
        rows.dedup();
        prop_assert_eq!(rows.len(), total);
        prop_assert_eq!(total, n_way * (k_shot + q_query * queries));

        for (r, &y) in task.support.rows.iter().zip(&task.support.labels) {
            prop_assert_eq!(ds.labels()[*r], task.classes[y]);
        }
        prop_assert!(task.query_sets.iter().all(|q| q.labels().is_none()));
        let mut budget = LabelBudget::limited(1);
        let labels = task.reveal_labels(0, &mut budget).unwrap().to_vec();
        for (r, y) in task.query_sets[0].rows.iter().zip(labels) {
            prop_assert_eq!(ds.labels()[*r], task.classes[y]);
        }
        prop_assert!(task.reveal_labels(0, &mut LabelBudget::unlimited()).is_err());
        if queries > 1 {
            prop_assert!(task.reveal_labels(1, &mut budget).is_err());
        }
    }
}

#[test]
fn bound_holds_on_a_hundred_thousand_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut min_slack = f64::INFINITY;
    for _ in 0..100_000 {
        let check = verify_bound(&sample_belief_vector(&mut rng), true);
        assert!(check.holds, "slack {}", check.min_slack);
        min_slack = min_slack.min(check.min_slack);
    }
    assert!(min_slack < 1e-3, "bound should be nearly tight, min slack {min_slack}");
}

#[test]
fn bound_is_tight_at_two_equal_beliefs() {
    let check = verify_bound(&[0.4, 0.4], true);
    assert!(check.min_slack.abs() <= 1e-12);
}

#[test]
fn published_schedule_values() {
    let cfg = ScheduleConfig::default();
    assert_eq!(lambda_schedule(0, &cfg), 0.99);
    assert_eq!(lambda_schedule(50, &cfg), 0.5);
    assert_eq!(lambda_schedule(80, &cfg), 0.5);
    for e in 0..30 {
        assert!((eta_schedule(e, &cfg) - (8.0f64).min(0.8 * e as f64)).abs() <= 1e-12);
    }
}

#[test]
fn published_dissonance_fixture() {
    let o = opinion_from_evidence(&[4.0, 2.0, 0.0]).unwrap();
    assert!((o.vacuity - 1.0 / 3.0).abs() <= 1e-15);
    assert!((dissonance(&o.beliefs) - 4.0 / 9.0).abs() <= 1e-15);
}
