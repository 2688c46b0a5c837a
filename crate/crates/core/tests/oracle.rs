use latsep::checks::{self, Instance};
use latsep::oracle::{exact_map, exact_posterior, log_sum_exp, sequence_at, sequence_index};
use latsep::separator::beam_search;
use latsep::TokenSeq;

#[test]
fn table_entries_are_global_scores() {
    let inst = Instance::random(4, 3, 3, 2, 0.1).unwrap();
    for lambda in [0.0, 1.0, 2.5] {
        let table = exact_posterior(&inst.m, inst.priors(), &inst.likelihood, lambda).unwrap();
        assert_eq!(table.scores().len(), 729);
        for (idx, &v) in table.scores().iter().enumerate() {
            let z1 = TokenSeq(sequence_at(idx / 27, 3, 3));
            let z2 = TokenSeq(sequence_at(idx % 27, 3, 3));
            assert!((v - inst.score(&z1, &z2, lambda).unwrap()).abs() < 1e-12);
            assert_eq!(table.index_of(&z1, &z2), idx);
            assert_eq!(table.pair(idx), (z1, z2));
        }
        let total: f64 = table.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((table.log_partition() - log_sum_exp(table.scores())).abs() == 0.0);
    }
}

#[test]
fn exact_map_is_first_maximum() {
    for seed in 0..5 {
        let inst = Instance::random(seed, 2, 4, 3, 0.0).unwrap();
        let table = exact_posterior(&inst.m, inst.priors(), &inst.likelihood, 1.0).unwrap();
        let v = table.scores();
        let best = (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
        assert_eq!(exact_map(&table), table.pair(best));
    }
}

#[test]
fn exhaustive_beam_enumerates_table() {
    let inst = Instance::random(8, 2, 3, 2, 0.1).unwrap();
    let table = exact_posterior(&inst.m, inst.priors(), &inst.likelihood, 1.0).unwrap();
    let beams = beam_search(&inst.m, inst.priors(), &inst.likelihood, 1.0, 64).unwrap();
    let mut seen = vec![false; 64];
    for h in &beams {
        let i = table.index_of(&h.z1, &h.z2);
        assert!(!seen[i]);
        seen[i] = true;
        assert!((h.logscore - table.scores()[i]).abs() < 1e-12);
    }
    assert!(seen.iter().all(|&s| s));
}

#[test]
fn sequence_index_is_lexicographic() {
    let mut all: Vec<Vec<usize>> = (0..64).map(|i| sequence_at(i, 4, 3)).collect();
    let sorted = {
        let mut s = all.clone();
        s.sort();
        s
    };
    assert_eq!(all, sorted);
    for z in all.drain(..) {
        assert_eq!(sequence_at(sequence_index(&z, 4), 4, 3), z);
    }
}

#[test]
fn k_mismatch_and_range_errors() {
    let a = Instance::random(1, 3, 2, 1, 0.1).unwrap();
    let b = Instance::random(1, 4, 2, 1, 0.1).unwrap();
    assert!(exact_posterior(&a.m, a.priors(), &b.likelihood, 1.0).is_err());
    assert!(exact_posterior(&TokenSeq(vec![0, 3]), a.priors(), &a.likelihood, 1.0).is_err());
}

#[test]
fn oracle_suite_passes() {
    for r in [
        checks::check_beam_map(0..3, &[0.0, 1.0, 3.0]).unwrap(),
        checks::check_stepwise_scores(2, 0.5).unwrap(),
        checks::check_prior_normalization().unwrap(),
        checks::check_likelihood_rows(1).unwrap(),
        checks::check_factorization(4).unwrap(),
        checks::check_ancestral_fidelity(5, 3.0, 200_000).unwrap(),
    ] {
        assert!(r.pass, "{r:?}");
    }
}
