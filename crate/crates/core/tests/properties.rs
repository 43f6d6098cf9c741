mod common;

use std::collections::HashSet;
use std::sync::Arc;

use pagewise::actor::{map_to_valid, recall_pool, CandidatePool, ProtoPage};
use pagewise::encoder::Item;
use pagewise::env::{generate_catalog, generate_logs, read_logs, write_logs, LoggingPolicy, Simulator, UserConfig};
use pagewise::eval::{compute_metrics, RankedList};
use pagewise::tensor::{soft_update, ParameterSet, Tensor};
use proptest::prelude::*;

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.95f64..0.95, dim).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn pool_and_slots() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (2usize..8).prop_flat_map(|dim| (prop::collection::vec(unit_vec(dim), 10..40), prop::collection::vec(unit_vec(dim), 10)))
}

fn items_of(embs: &[Vec<f64>]) -> Vec<Item> {
    embs.iter().enumerate().map(|(i, e)| Item::new(i as u32 * 7 + 3, e.clone(), i % 3).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mapping_matches_brute_force((pool, slots) in pool_and_slots()) {
        let items = items_of(&pool);
        let dim = slots[0].len();
        let proto = ProtoPage::new(Tensor::new(vec![5, 2, dim], slots.concat()).unwrap()).unwrap();
        let page = map_to_valid(&proto, &CandidatePool::new(items.iter().cloned()).unwrap()).unwrap();
        let got: Vec<u32> = page.items().iter().map(|i| i.id).collect();
        prop_assert_eq!(got.iter().collect::<HashSet<_>>().len(), 10);
        prop_assert_eq!(got, common::brute_force_map(&slots, &items));
    }

    #[test]
    fn recall_pool_is_the_neighbour_union(space in prop::collection::vec(unit_vec(4), 12..60), k in 1usize..15, anchors in 1usize..5) {
        let items = items_of(&space);
        let history = &items[..anchors];
        let pool = recall_pool(history, &[], &items, k).unwrap();
        let mut want = HashSet::new();
        for a in history {
            let mut scored: Vec<(f64, u32)> = items.iter().map(|it| (cos(&a.embedding, &it.embedding), it.id)).collect();
            scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
            want.extend(scored.iter().take(k).map(|s| s.1));
        }
        let got: HashSet<u32> = pool.items().map(|i| i.id).collect();
        prop_assert!(got.len() <= anchors * k);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn metrics_stay_in_unit_interval(rewards in prop::collection::vec(prop::sample::select(vec![0.0, 1.0, 5.0]), 1..50)) {
        let n = rewards.len() as u32;
        let m = compute_metrics(&RankedList { ids: (0..n).collect(), rewards }, 20);
        for v in [Some(m.precision), m.recall, m.f1, m.ndcg, m.ap].into_iter().flatten() {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        if let (Some(r), Some(f)) = (m.recall, m.f1) {
            let h = if m.precision + r == 0.0 { 0.0 } else { 2.0 * m.precision * r / (m.precision + r) };
            prop_assert!((f - h).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_update_with_tau_one_copies(a in prop::collection::vec(-5.0f64..5.0, 6), b in prop::collection::vec(-5.0f64..5.0, 6)) {
        let mut target = ParameterSet::new();
        let mut online = ParameterSet::new();
        target.insert("w", Tensor::new(vec![2, 3], a).unwrap()).unwrap();
        online.insert("w", Tensor::new(vec![2, 3], b.clone()).unwrap()).unwrap();
        soft_update(&mut target, &online, 1.0).unwrap();
        prop_assert_eq!(target.get("w").unwrap().data(), &b[..]);
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

#[test]
fn logs_survive_a_file_round_trip() {
    let catalog = Arc::new(generate_catalog(80, 8, 4).unwrap());
    let sim = Simulator::new(catalog.clone(), UserConfig::default(), 9).unwrap();
    for policy in [LoggingPolicy::Random, LoggingPolicy::Greedy] {
        let logs = generate_logs(&sim, 12, 5, policy).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logs.jsonl");
        write_logs(&path, &logs, 5, 2).unwrap();
        let back = read_logs(&path, &catalog).unwrap();
        assert_eq!(back.len(), logs.len());
        for (a, b) in logs.iter().zip(&back) {
            assert_eq!(a.history, b.history);
            assert_eq!(a.steps.len(), b.steps.len());
            for (x, y) in a.steps.iter().zip(&b.steps) {
                assert_eq!(x.feedback, y.feedback);
                assert_eq!(x.reward.to_bits(), y.reward.to_bits());
                assert_eq!(x.page.items(), y.page.items());
            }
        }
    }
}

#[test]
fn greedy_logging_beats_random_logging() {
    let catalog = Arc::new(generate_catalog(200, 10, 6).unwrap());
    let sim = Simulator::new(catalog, UserConfig::default(), 3).unwrap();
    let mean = |p| {
        let logs = generate_logs(&sim, 100, 5, p).unwrap();
        logs.iter().map(|s| s.total_reward()).sum::<f64>() / logs.len() as f64
    };
    assert!(mean(LoggingPolicy::Greedy) > mean(LoggingPolicy::Random));
}
