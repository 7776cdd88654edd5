use std::collections::{BTreeMap, BTreeSet};

use moods_core::annotations::{AnnotationPatch, AnnotationStore};
use moods_core::domain::{local_date, EventId, ParticipantId, PhysiologicalEvent, StressRatingLevel, SECONDS_PER_DAY};
use moods_core::events::{
    select_for_prompt, update_percentiles, Band, EventEngine, PercentileBands, PromptDecision, SamplingPolicy, ScoredEvent,
};
use moods_core::lexicon::{normalize_stressor, seed_stressors, StressorLexicon};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

const T0: i64 = 1_709_251_200; // 2024-03-01T00:00:00Z

/// Smallest sample value with at least `pct`% of the sample at or below it.
fn brute_nearest_rank(xs: &[f64], pct: f64) -> f64 {
    let n = xs.len() as f64;
    let mut best = f64::INFINITY;
    for &v in xs {
        let at_or_below = xs.iter().filter(|&&x| x <= v).count() as f64;
        if at_or_below * 100.0 >= pct * n && v < best {
            best = v;
        }
    }
    best
}

fn bands() -> impl Strategy<Value = PercentileBands> {
    prop::collection::vec(0.0..100.0f64, 3).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        PercentileBands::fixed(v[0], v[1], v[2])
    })
}

proptest! {
    #[test]
    fn band_is_a_monotone_step_function(b in bands(), x in 0.0..100.0f64, y in 0.0..100.0f64) {
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        prop_assert!(b.band_of(lo) <= b.band_of(hi));
        let expected = if x > b.p95 { Band::Top } else if x > b.p75 { Band::High } else if x > b.p25 { Band::Mid } else { Band::Low };
        prop_assert_eq!(b.band_of(x), expected);
    }

    #[test]
    fn selection_is_deterministic(b in bands(), score in 0.0..100.0f64, seed in any::<u64>(), id in "[a-z0-9]{1,12}") {
        let policy = SamplingPolicy::default();
        let e = PhysiologicalEvent::new(id.as_str(), "P1", T0, T0 + 600, score, 0).unwrap();
        let first = select_for_prompt(&e, &b, &policy, seed);
        prop_assert_eq!(first, select_for_prompt(&e, &b, &policy, seed));
        if b.band_of(score) == Band::Top {
            prop_assert!(first);
        }
        prop_assert_eq!(policy.selection_probability(score, &b), policy.probabilities.get(b.band_of(score)));
    }

    #[test]
    fn beta_percentiles_match_brute_force(seed in any::<u64>(), n in prop::sample::select(vec![100usize, 333, 1000])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta = Beta::new(2.0, 5.0).unwrap();
        let history: Vec<ScoredEvent> = (0..n)
            .map(|i| ScoredEvent {
                event_id: EventId(format!("e{i}")),
                start: T0 + (i as i64) * 3000,
                score: 100.0 * beta.sample(&mut rng),
            })
            .collect();
        let as_of = history.last().unwrap().start + 1;
        let policy = SamplingPolicy { window_days: 365, ..Default::default() };
        let got = update_percentiles(&history, as_of, &policy);
        let scores: Vec<f64> = history.iter().map(|e| e.score).collect();
        prop_assert!(!got.cold_start);
        prop_assert_eq!(got.p25, brute_nearest_rank(&scores, 25.0));
        prop_assert_eq!(got.p75, brute_nearest_rank(&scores, 75.0));
        prop_assert_eq!(got.p95, brute_nearest_rank(&scores, 95.0));
    }

    #[test]
    fn budgets_and_refractory_hold(
        seed in any::<u64>(),
        gaps in prop::collection::vec(60i64..3600, 50..400),
        scores in prop::collection::vec(0.0..100.0f64, 400),
        tz in prop::sample::select(vec![-300, 0, 330]),
    ) {
        let policy = SamplingPolicy::default();
        let mut engine = EventEngine::new(ParticipantId("P1".into()), policy.clone(), seed);
        let mut issued: BTreeMap<(chrono::NaiveDate, Band), u32> = BTreeMap::new();
        let mut times = Vec::new();
        let mut t = T0;
        for (i, gap) in gaps.iter().enumerate() {
            t += gap;
            let e = PhysiologicalEvent::new(format!("e{i}").as_str(), "P1", t, t + 300, scores[i], tz).unwrap();
            if let PromptDecision::Issued(ticket) = engine.ingest(&e, t + 400) {
                *issued.entry((local_date(ticket.issued_at, tz), ticket.band)).or_default() += 1;
                times.push(ticket.issued_at);
            }
        }
        for ((_, band), count) in &issued {
            if let Some(cap) = policy.daily_cap(*band) {
                prop_assert!(*count <= cap, "{band:?}: {count} > {cap}");
            }
        }
        times.sort_unstable();
        prop_assert!(times.windows(2).all(|w| w[1] - w[0] >= policy.refractory_s));
    }

    #[test]
    fn lexicon_grows_by_novel_entries(words in prop::collection::vec("[a-z]{3,10}( [a-z]{2,8})?", 0..30)) {
        let seed = seed_stressors();
        let mut lex = StressorLexicon::seeded(T0);
        prop_assert_eq!(lex.len(), 80);
        let mut novel = BTreeSet::new();
        for (i, w) in words.iter().enumerate() {
            let key = normalize_stressor(w);
            let fresh = !seed.contains(&key) && novel.insert(key);
            prop_assert_eq!(lex.record_use(w, T0 + i as i64), fresh);
        }
        prop_assert_eq!(lex.len(), 80 + novel.len());
    }

    #[test]
    fn autocomplete_is_sound_and_complete(
        extra in prop::collection::vec("[a-z]{2,9}", 0..20),
        query in "[a-zA-Z]{1,3}",
        limit in 1usize..120,
    ) {
        let mut lex = StressorLexicon::seeded(T0);
        for w in &extra {
            lex.record_use(w, T0);
        }
        let q = query.to_lowercase();
        let got = lex.autocomplete(&query, limit);
        prop_assert!(got.len() <= limit);
        prop_assert!(got.iter().all(|s| s.to_lowercase().contains(&q)));
        let prefixed: Vec<&str> = lex.entries().map(|e| e.text.as_str()).filter(|t| t.starts_with(&q)).collect();
        if prefixed.len() <= limit {
            for p in prefixed {
                prop_assert!(got.iter().any(|g| g == p), "missing {p}");
            }
        }
    }

    #[test]
    fn edits_never_predate_creation(
        edits in prop::collection::vec((-7200i64..7200, 0usize..5, any::<bool>()), 1..12),
    ) {
        let pid = ParticipantId("P1".into());
        let mut store = AnnotationStore::new(pid.clone(), StressorLexicon::seeded(T0));
        let mut engine = EventEngine::new(pid, SamplingPolicy::default(), 1);
        let e = PhysiologicalEvent::new("e1", "P1", T0, T0 + 300, 99.0, 0).unwrap();
        let PromptDecision::Issued(ticket) = engine.ingest(&e, T0 + 600) else { panic!("top band always prompts") };
        let created = T0 + 900;
        store.submit_rating(&ticket, &e, StressRatingLevel::Stressed, created).unwrap();
        let mut versions = vec![1];
        for (offset, level, private) in edits {
            let patch = AnnotationPatch {
                rating: Some(StressRatingLevel::ALL[level]),
                is_private: Some(private),
                ..Default::default()
            };
            let ann = store.edit_annotation(&EventId("e1".into()), patch, created + offset).unwrap();
            prop_assert_eq!(ann.created_at, created);
            if let Some(edited) = ann.edited_at {
                prop_assert!(edited >= ann.created_at);
            }
            prop_assert!(ann.version >= *versions.last().unwrap());
            versions.push(ann.version);
        }
    }
}

#[test]
fn cold_start_thresholds_until_enough_history() {
    let policy = SamplingPolicy::default();
    let history: Vec<ScoredEvent> = (0..99)
        .map(|i| ScoredEvent { event_id: EventId(format!("e{i}")), start: T0 + i * 60, score: i as f64 })
        .collect();
    let b = update_percentiles(&history, T0 + SECONDS_PER_DAY, &policy);
    assert!(b.cold_start);
    assert_eq!((b.p25, b.p75, b.p95), (25.0, 75.0, 95.0));
}
