use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use deid_core::corpus::{self, CorpusSpec};
use deid_core::orchestrator::{
    consolidate, ingest_dir, read_journal, recount, run_pool, submit_request, FaultPlan,
    LocalDirStore, ObjectStore, PoolConfig, Queue, RuleCatalog, ScalePolicy, ScriptRefs,
    SubmitRequest,
};
use deid_core::pseudonym::{MappingStore, Mode, PseudonymError, StudyRegistration};
use deid_core::regression::{parse_suite, run_suite, PET_CT_SUITE};
use deid_core::rules::RuleSet;

#[test]
fn irreversible_request_through_disk_stores() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus::generate(&CorpusSpec::default_mix(60, 4, true)).unwrap();
    corpus::generate_corpus(&CorpusSpec::default_mix(60, 4, true), &dir.path().join("corpus")).unwrap();

    let input = Arc::new(LocalDirStore::new(dir.path().join("input")).unwrap());
    let ingested = ingest_dir(&dir.path().join("corpus/inputs"), &*input).unwrap();
    assert_eq!(ingested, c.instances.len());
    let output = Arc::new(LocalDirStore::new(dir.path().join("output")).unwrap());

    let store_path = dir.path().join("mappings.jsonl");
    let mappings = MappingStore::open(&store_path).unwrap();
    let accessions = c.accessions();
    mappings
        .register_study(StudyRegistration {
            study_id: "IRR".into(),
            mode: Mode::Irreversible,
            approved_accessions: accessions.iter().skip(1).cloned().collect(),
            seed: 5,
            delivery_window: 600,
        })
        .unwrap();
    let queue = Arc::new(Queue::new(Duration::from_millis(200), 3));
    let submitted = submit_request(
        &mappings,
        &*input,
        &queue,
        &SubmitRequest {
            request_id: "req-1".into(),
            study_id: "IRR".into(),
            accessions: accessions.clone(),
            scripts: ScriptRefs::default(),
        },
    )
    .unwrap();
    assert_eq!(submitted.rejected.len(), 1);

    let journal = dir.path().join("journal.jsonl");
    let cfg = PoolConfig {
        policy: ScalePolicy {
            per_worker_rate: None,
            delivery_window: 1.0,
            min_workers: 1,
            max_workers: 3,
        },
        cadence: Duration::from_millis(20),
        poll: Duration::from_millis(1),
        faults: Some(FaultPlan {
            probability: 0.3,
            seed: 11,
        }),
        journal: Some(journal.clone()),
        ..PoolConfig::default()
    };
    let report = run_pool(&cfg, queue, input, output.clone(), Arc::new(RuleCatalog::new())).unwrap();

    let delivered: usize = c
        .instances
        .iter()
        .filter(|i| i.record.accession != accessions[0])
        .count();
    assert_eq!(report.manifest.len(), delivered);
    assert_eq!(recount(&report.manifest), report.counts);
    assert!(report.manifest.iter().all(|m| m.accession.starts_with("ACN")));

    let raw = read_journal(&journal).unwrap();
    assert_eq!(raw.len(), report.journal_entries);
    let norm = |v: Vec<_>| v.iter().map(deid_core::orchestrator::ManifestEntry::normalized).collect::<Vec<_>>();
    assert_eq!(norm(consolidate(&raw)), norm(report.manifest.clone()));

    let keys: BTreeSet<_> = output.list("").unwrap().into_iter().collect();
    let expected: BTreeSet<_> = report.manifest.iter().filter_map(|m| m.output_key.clone()).collect();
    assert_eq!(keys, expected);

    assert!(mappings.purge_links("IRR").unwrap() > 0);
    drop(mappings);
    let reopened = MappingStore::open(&store_path).unwrap();
    assert!(reopened.is_purged("IRR"));
    let text = std::fs::read_to_string(&store_path).unwrap();
    assert!(!text.contains("PHI-"));
    assert!(matches!(
        reopened.get_or_create_mapping("IRR", &accessions[1], "x"),
        Err(PseudonymError::StudyPurged(_))
    ));
}

#[test]
fn regression_suite_detects_a_broken_scrubber() {
    let dir = tempfile::tempdir().unwrap();
    corpus::write_pet_ct_fixtures(dir.path(), 9).unwrap();
    let suite = parse_suite(PET_CT_SUITE).unwrap();
    assert!(run_suite(&suite, &RuleSet::defaults(), dir.path()).unwrap().passed());

    let mut rules = RuleSet::defaults();
    rules.scrub = deid_core::rules::parse_scrub_script("").unwrap();
    let report = run_suite(&suite, &rules, dir.path()).unwrap();
    assert!(!report.passed());
    let failing: Vec<_> = report.scenarios.iter().filter(|s| !s.passed()).map(|s| s.name.as_str()).collect();
    assert_eq!(failing.len(), 1, "{failing:?}");
}
