mod common;

use common::small_world;
use hgwrec::model::{train, window_of, ModelConfig, Predictor};
use hgwrec::recsys::{hit_ratio, mrr, next_item_points, recommend_points, recommend_topk, PopularityBaseline, Recommendation};
use hgwrec::synthgen::{generate, GenConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn popularity_matches_counting_oracle() {
    // job 3 dominates, then 1, then 0 and 2 tie
    let train = [3, 3, 3, 3, 1, 1, 1, 0, 2, 3, 1, 0, 2];
    let base = PopularityBaseline::fit(5, train);
    let truth = [3, 1, 0, 2, 4, 3, 3, 2];
    let recs: Vec<Recommendation> = (0..truth.len()).map(|i| base.recommend(0, i, 2)).collect();
    assert_eq!(recs[0].ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![3, 1]);
    // top-2 is {3, 1}; hits are the four truths in that set
    assert_eq!(hit_ratio(&recs, &truth, 2).unwrap(), 4.0 / 8.0);
    assert_eq!(mrr(&recs, &truth, 2).unwrap(), (1.0 + 0.5 + 1.0 + 1.0) / 8.0);
    let recs4: Vec<Recommendation> = (0..truth.len()).map(|i| base.recommend(0, i, 4)).collect();
    // the 0/2 tie resolves to job 0 at rank 3
    assert_eq!(recs4[0].ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![3, 1, 0, 2]);
    assert_eq!(hit_ratio(&recs4, &truth, 4).unwrap(), 7.0 / 8.0);
}

#[test]
fn skewed_fixture_popularity_hit_fraction() {
    let (ds, _) = generate(&GenConfig { n_users: 60, n_jobs: 30, n_topics: 3, vocab_size: 60, seed: 2, ..GenConfig::default() }).unwrap();
    let all: Vec<usize> = (0..ds.sessions.len()).collect();
    let base = PopularityBaseline::from_sessions(&ds, &all);
    let mut counts = vec![0usize; ds.jobs.len()];
    for i in &ds.interactions {
        counts[i.job] += 1;
    }
    let mut order: Vec<usize> = (0..ds.jobs.len()).collect();
    order.sort_by(|a, b| counts[*b].cmp(&counts[*a]).then(a.cmp(b)));
    let top: Vec<usize> = order[..10].to_vec();
    let points = next_item_points(&ds, &all, &vec![0; ds.sessions.len()], 2, 20);
    let truth: Vec<usize> = points.iter().map(|p| p.truth).collect();
    let expected = truth.iter().filter(|t| top.contains(t)).count() as f64 / truth.len() as f64;
    let recs = base.recommend_points(&points, 10);
    assert_eq!(hit_ratio(&recs, &truth, 10).unwrap(), expected);
}

#[test]
fn trained_recommendations_are_deterministic() {
    let (ds, prep, mut cfg) = small_world(3);
    cfg.epochs = 2;
    let out = train(&ds, &prep, &cfg).unwrap();
    let mcfg = ModelConfig::from(&cfg);
    let pred = Predictor::new(&out.params, &prep.inputs, &mcfg).unwrap();
    let points = next_item_points(&ds, &prep.split.test, &prep.session_group, 2, mcfg.window);
    let a = recommend_points(&pred, &points, 10).unwrap();
    let b = recommend_points(&pred, &points, 10).unwrap();
    assert_eq!(a, b);
    for r in &a {
        assert!(r.ranked.windows(2).all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
    }
    let all = recommend_topk(&pred, 0, 0, points[0].group, &points[0].window, 10_000).unwrap();
    assert_eq!(all.ranked.len(), ds.jobs.len());
}

#[test]
fn drifted_users_follow_their_new_preference() {
    let mut before = 0.0;
    let mut after = 0.0;
    for seed in 0..3 {
        let gen = GenConfig { n_users: 80, n_jobs: 40, n_topics: 4, vocab_size: 120, seed, ..GenConfig::default() };
        let (ds, truth) = generate(&gen).unwrap();
        let (_, prep, cfg) = small_world(seed);
        let out = train(&ds, &prep, &cfg).unwrap();
        let mcfg = ModelConfig::from(&cfg);
        let pred = Predictor::new(&out.params, &prep.inputs, &mcfg).unwrap();
        let prefs = truth.preference_table(&ds);
        for (s, next) in ds.sessions.iter().enumerate().zip(ds.sessions.iter().enumerate().skip(1)) {
            let ((si, pre), (ti, post)) = (s, next);
            let versions = (pre.resume_version, post.resume_version);
            if pre.user != post.user || versions.1 != versions.0 + 1 {
                continue;
            }
            let new_topic = prefs[post.user][versions.1];
            if new_topic == prefs[pre.user][versions.0] {
                continue;
            }
            let count = |sess: usize| {
                let jobs: Vec<usize> = ds.sessions[sess].jobs().collect();
                let rec = recommend_topk(&pred, 0, sess, prep.session_group[sess], &window_of(&jobs, mcfg.window), 10).unwrap();
                rec.ranked.iter().filter(|(j, _)| ds.jobs[*j].label == new_topic).count() as f64
            };
            before += count(si);
            after += count(ti);
        }
    }
    assert!(after > before, "new-topic jobs before {before}, after {after}");
}

proptest! {
    #[test]
    fn metric_invariants(seed in 0u64..10_000, n in 1usize..40, jobs in 2usize..30, k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs: Vec<Recommendation> = (0..n)
            .map(|i| {
                let mut ids: Vec<usize> = (0..jobs).collect();
                ids.shuffle(&mut rng);
                ids.truncate(k.min(jobs));
                Recommendation { user: 0, session: i, ranked: ids.into_iter().enumerate().map(|(r, j)| (j, -(r as f64))).collect() }
            })
            .collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..jobs)).collect();
        let h = hit_ratio(&recs, &truth, k).unwrap();
        let m = mrr(&recs, &truth, k).unwrap();
        prop_assert!(m <= h);

        let mut relabel: Vec<usize> = (0..jobs).collect();
        relabel.shuffle(&mut rng);
        let recs2: Vec<Recommendation> = recs
            .iter()
            .map(|r| Recommendation { ranked: r.ranked.iter().map(|&(j, s)| (relabel[j], s)).collect(), ..r.clone() })
            .collect();
        let truth2: Vec<usize> = truth.iter().map(|&t| relabel[t]).collect();
        prop_assert_eq!(hit_ratio(&recs2, &truth2, k).unwrap(), h);
        prop_assert_eq!(mrr(&recs2, &truth2, k).unwrap(), m);
    }
}
