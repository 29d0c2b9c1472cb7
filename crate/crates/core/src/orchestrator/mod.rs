//! Queue-driven execution: requests become work items, an autoscaled pool of
//! worker threads runs the engine on them, writes outputs to an object store
//! and records every instance in a manifest.

mod manifest;
mod queue;
mod scale;
mod store;

use std::collections::HashMap;
use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use manifest::{
    consolidate, human_bytes, parse_jsonl, read_journal, recount, render_jsonl, render_table,
    write_atomic, ManifestEntry, ManifestSink, ManifestWriter, ThroughputRow, MANIFEST_HEADER,
};
pub use queue::{DeadLetter, Lease, Queue, QueueSpool, QueueStats, SPOOL_HEADER};
pub use scale::{autoscale_tick, RateEstimator, ScalePolicy};
pub use store::{ingest_dir, LatencyStore, LocalDirStore, MemoryStore, ObjectStore};

use crate::dicom::{parse_file, tags};
use crate::engine::{deid_bytes, Counts, ErrorKind, Outcome, OutcomeKind};
use crate::pseudonym::{Eligibility, MappingStore, Mode, PseudonymError};
use crate::rules::{
    RuleSet, ScriptParams, DEFAULT_ANON_SCRIPT, DEFAULT_FILTER_SCRIPT, DEFAULT_SCRUB_SCRIPT,
};

pub const BUILTIN_SCRIPT: &str = "builtin";
pub const DEFAULT_VISIBILITY: Duration = Duration::from_secs(60);
pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_CADENCE: Duration = Duration::from_secs(5);
pub const DEFAULT_WARMUP_ITEMS: usize = 30;

/// Script identifiers: a file path, or `builtin` for the shipped script.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScriptRefs {
    pub filter: String,
    pub scrub: String,
    pub anon: String,
}

impl Default for ScriptRefs {
    fn default() -> Self {
        ScriptRefs {
            filter: BUILTIN_SCRIPT.into(),
            scrub: BUILTIN_SCRIPT.into(),
            anon: BUILTIN_SCRIPT.into(),
        }
    }
}

/// Parsed rule sets by reference, loaded once per process.
#[derive(Debug, Default)]
pub struct RuleCatalog {
    cache: Mutex<HashMap<ScriptRefs, Arc<RuleSet>>>,
}

impl RuleCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, refs: ScriptRefs, rules: Arc<RuleSet>) {
        self.cache.lock().unwrap().insert(refs, rules);
    }

    pub fn resolve(&self, refs: &ScriptRefs) -> Result<Arc<RuleSet>, String> {
        if let Some(r) = self.cache.lock().unwrap().get(refs) {
            return Ok(r.clone());
        }
        let read = |r: &str, builtin: &str| -> Result<String, String> {
            if r == BUILTIN_SCRIPT {
                Ok(builtin.to_string())
            } else {
                std::fs::read_to_string(r).map_err(|e| format!("{r}: {e}"))
            }
        };
        let rules = RuleSet::parse(
            &read(&refs.filter, DEFAULT_FILTER_SCRIPT)?,
            &read(&refs.scrub, DEFAULT_SCRUB_SCRIPT)?,
            &read(&refs.anon, DEFAULT_ANON_SCRIPT)?,
        )
        .map_err(|(kind, e)| format!("{kind} script: {e}"))?;
        let rules = Arc::new(rules);
        self.cache
            .lock()
            .unwrap()
            .insert(refs.clone(), rules.clone());
        Ok(rules)
    }
}

/// One accession's worth of work. Carries everything a worker needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkItem {
    pub request_id: String,
    pub study_id: String,
    pub mode: Mode,
    pub real_accession: Option<String>,
    pub scripts: ScriptRefs,
    pub params: ScriptParams,
    /// Input object keys, sorted.
    pub inputs: Vec<String>,
    pub attempt: u32,
}

impl WorkItem {
    /// Accession as it may appear in manifests for this study's mode.
    pub fn manifest_accession(&self) -> String {
        match (self.mode, &self.real_accession) {
            (Mode::Reversible, Some(real)) => real.clone(),
            _ => self.params.accession.clone(),
        }
    }

    /// Instance id for manifests; opaque unless the study is reversible.
    pub fn instance_id(&self, input_key: &str) -> String {
        match self.mode {
            Mode::Reversible => input_key.to_string(),
            Mode::Irreversible => opaque_id(&self.params.study_salt, input_key),
        }
    }
}

fn opaque_id(salt: &str, key: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update([0]);
    h.update(key.as_bytes());
    hex::encode(&h.finalize()[..12])
}

#[derive(Debug, Clone)]
pub struct SubmitRequest {
    pub request_id: String,
    pub study_id: String,
    pub accessions: Vec<String>,
    pub scripts: ScriptRefs,
}

#[derive(Debug, Clone, Default)]
pub struct SubmitReport {
    pub items: Vec<WorkItem>,
    /// `(accession, reason)` for everything not enqueued.
    pub rejected: Vec<(String, String)>,
}

/// Validate accessions, create their mappings and build one work item each.
/// Inputs are the objects under `<accession>/` in the input store; the real
/// MRN is read from the first parseable one.
pub fn plan_request(
    mappings: &MappingStore,
    input: &dyn ObjectStore,
    req: &SubmitRequest,
) -> Result<SubmitReport, PseudonymError> {
    let reg = mappings.registration(&req.study_id)?;
    let mut report = SubmitReport::default();
    for accession in &req.accessions {
        if let Eligibility::Ineligible(why) = mappings.validate_accession(&req.study_id, accession)? {
            report.rejected.push((accession.clone(), why));
            continue;
        }
        let inputs = input.list(&format!("{accession}/"))?;
        let mrn = inputs.iter().find_map(|k| {
            let ds = parse_file(&input.get(k).ok()?).ok()?;
            ds.string(tags::PATIENT_ID).filter(|s| !s.is_empty())
        });
        let Some(mrn) = mrn else {
            let why = if inputs.is_empty() {
                "no input objects"
            } else {
                "no readable PatientID in inputs"
            };
            report.rejected.push((accession.clone(), why.into()));
            continue;
        };
        let m = match mappings.get_or_create_mapping(&req.study_id, accession, &mrn) {
            Ok(m) => m,
            Err(e @ (PseudonymError::IneligibleAccession(_) | PseudonymError::MrnMismatch)) => {
                report.rejected.push((accession.clone(), e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        report.items.push(WorkItem {
            request_id: req.request_id.clone(),
            study_id: req.study_id.clone(),
            mode: reg.mode,
            real_accession: Some(accession.clone()),
            scripts: req.scripts.clone(),
            params: mappings.script_params(&m)?,
            inputs,
            attempt: 0,
        });
    }
    Ok(report)
}

pub fn submit_request(
    mappings: &MappingStore,
    input: &dyn ObjectStore,
    queue: &Queue,
    req: &SubmitRequest,
) -> Result<SubmitReport, PseudonymError> {
    let report = plan_request(mappings, input, req)?;
    for item in &report.items {
        queue.enqueue(item.clone());
    }
    Ok(report)
}

/// Where a simulated crash interrupts an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KillPoint {
    BeforeWrite,
    /// After the output for this input index is written.
    AfterOutput(usize),
    BeforeManifest,
    BeforeAck,
}

/// Each item is killed with `probability` on its first delivery, at a point
/// drawn from the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultPlan {
    pub probability: f64,
    pub seed: u64,
}

impl FaultPlan {
    pub fn kill_point(&self, item: &WorkItem) -> Option<KillPoint> {
        if item.attempt > 0 {
            return None;
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(item.request_id.as_bytes());
        h.update([0]);
        h.update(item.study_id.as_bytes());
        h.update([0]);
        h.update(item.params.accession.as_bytes());
        let d = h.finalize();
        let u = u64::from_le_bytes(d[..8].try_into().unwrap()) as f64 / 2f64.powi(64);
        if u >= self.probability {
            return None;
        }
        let n = u32::from_le_bytes(d[9..13].try_into().unwrap()) as usize;
        Some(match d[8] % 4 {
            0 => KillPoint::BeforeWrite,
            1 => KillPoint::AfterOutput(n % item.inputs.len().max(1)),
            2 => KillPoint::BeforeManifest,
            _ => KillPoint::BeforeAck,
        })
    }
}

/// Shared handles for one worker.
#[derive(Clone)]
pub struct WorkerContext {
    pub queue: Arc<Queue>,
    pub input: Arc<dyn ObjectStore>,
    pub output: Arc<dyn ObjectStore>,
    pub catalog: Arc<RuleCatalog>,
    pub manifest: ManifestSink,
    pub faults: Option<FaultPlan>,
    pub rate: Arc<RateEstimator>,
    pub poll: Duration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkerExit {
    pub processed: usize,
    pub killed: bool,
}

struct Killed;

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn error_outcome(kind: ErrorKind, detail: String, bytes_in: u64) -> Outcome {
    Outcome {
        kind: OutcomeKind::Error { kind, detail },
        transforms: Vec::new(),
        bytes_in,
        bytes_out: 0,
    }
}

pub fn output_key(item: &WorkItem, sop_uid: Option<&str>, input_key: &str) -> String {
    let name = match sop_uid {
        Some(uid) if !uid.is_empty() => uid.to_string(),
        _ => opaque_id(&item.params.study_salt, input_key),
    };
    format!("{}/{}/{name}.dcm", item.study_id, item.params.accession)
}

fn process_item(ctx: &WorkerContext, lease: &Lease, worker: &str) -> Result<(), Killed> {
    let t0 = Instant::now();
    let item = &lease.item;
    let kill = ctx.faults.and_then(|f| f.kill_point(item));
    let final_attempt = item.attempt + 1 >= ctx.queue.max_attempts();
    let rules = ctx.catalog.resolve(&item.scripts);
    if kill == Some(KillPoint::BeforeWrite) {
        return Err(Killed);
    }

    let mut entries = Vec::with_capacity(item.inputs.len());
    let mut failures = Vec::new();
    for (i, key) in item.inputs.iter().enumerate() {
        let started_ms = now_ms();
        let (output, mut outcome) = match (&rules, ctx.input.get(key)) {
            (Err(e), _) => (None, error_outcome(ErrorKind::RuleError, e.clone(), 0)),
            (_, Err(e)) => (
                None,
                error_outcome(ErrorKind::Delivery, format!("cannot read input: {e}"), 0),
            ),
            (Ok(rules), Ok(bytes)) => deid_bytes(&bytes, rules, &item.params),
        };
        let mut out_key = None;
        if let Some(out) = output {
            let k = output_key(item, out.sop_instance_uid.as_deref(), key);
            match ctx.output.put(&k, &out.bytes) {
                Ok(()) => out_key = Some(k),
                Err(e) => {
                    outcome = error_outcome(
                        ErrorKind::Delivery,
                        format!("cannot write output: {e}"),
                        outcome.bytes_in,
                    )
                }
            }
        }
        if let OutcomeKind::Error { detail, .. } = &outcome.kind {
            failures.push(format!("{}: {detail}", item.instance_id(key)));
        }
        entries.push(ManifestEntry {
            request_id: item.request_id.clone(),
            study_id: item.study_id.clone(),
            accession: item.manifest_accession(),
            instance: item.instance_id(key),
            outcome,
            output_key: out_key,
            worker: worker.to_string(),
            attempt: item.attempt,
            started_ms,
            finished_ms: now_ms(),
        });
        if kill == Some(KillPoint::AfterOutput(i)) {
            return Err(Killed);
        }
    }
    if kill == Some(KillPoint::BeforeManifest) {
        return Err(Killed);
    }
    if !failures.is_empty() && !final_attempt {
        ctx.queue.nack(lease, &failures.join("; "));
        return Ok(());
    }
    for e in entries {
        // the writer only goes away after all workers have stopped
        let _ = ctx.manifest.send(e);
    }
    if kill == Some(KillPoint::BeforeAck) {
        return Err(Killed);
    }
    if failures.is_empty() {
        ctx.queue.ack(lease);
    } else {
        ctx.queue.dead_letter(lease, &failures.join("; "));
    }
    ctx.rate.record(t0.elapsed());
    Ok(())
}

/// Lease and process items until the queue drains, `stop` is set, or a
/// simulated crash ends the worker.
pub fn run_worker(ctx: &WorkerContext, worker_id: &str, stop: &AtomicBool) -> WorkerExit {
    let mut exit = WorkerExit::default();
    while !stop.load(Ordering::Relaxed) {
        match ctx.queue.lease() {
            Some(lease) => match process_item(ctx, &lease, worker_id) {
                Ok(()) => exit.processed += 1,
                Err(Killed) => {
                    log::debug!("{worker_id}: killed on {}", lease.item.params.accession);
                    exit.killed = true;
                    break;
                }
            },
            None if ctx.queue.is_drained() => break,
            None => thread::sleep(ctx.poll),
        }
    }
    exit
}

#[derive(Debug, Clone)]
pub struct PoolConfig {
    pub policy: ScalePolicy,
    pub cadence: Duration,
    /// Sleep between checks while waiting on leases or workers.
    pub poll: Duration,
    pub warmup_items: usize,
    pub faults: Option<FaultPlan>,
    /// Append-only raw manifest journal.
    pub journal: Option<PathBuf>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            policy: ScalePolicy::default(),
            cadence: DEFAULT_CADENCE,
            poll: Duration::from_millis(5),
            warmup_items: DEFAULT_WARMUP_ITEMS,
            faults: None,
            journal: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleEvent {
    pub at_ms: u64,
    pub depth: usize,
    pub desired: usize,
}

#[derive(Debug, Clone)]
pub struct PoolReport {
    /// One entry per input instance, latest attempt wins.
    pub manifest: Vec<ManifestEntry>,
    pub journal_entries: usize,
    pub counts: Counts,
    pub row: ThroughputRow,
    pub duration: Duration,
    pub dead_letters: Vec<DeadLetter>,
    pub peak_workers: usize,
    pub workers_started: usize,
    pub kills: usize,
    pub measured_rate: Option<f64>,
    pub scale_events: Vec<ScaleEvent>,
}

struct Running {
    stop: Arc<AtomicBool>,
    handle: JoinHandle<WorkerExit>,
}

/// Run an autoscaled pool until the queue is empty and every lease resolved.
pub fn run_pool(
    cfg: &PoolConfig,
    queue: Arc<Queue>,
    input: Arc<dyn ObjectStore>,
    output: Arc<dyn ObjectStore>,
    catalog: Arc<RuleCatalog>,
) -> io::Result<PoolReport> {
    cfg.policy
        .validate()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    let started = Instant::now();
    let writer = ManifestWriter::start(cfg.journal.clone())?;
    let rate = Arc::new(RateEstimator::new(cfg.warmup_items));
    let ctx = WorkerContext {
        queue: queue.clone(),
        input,
        output,
        catalog,
        manifest: writer.sink(),
        faults: cfg.faults,
        rate: rate.clone(),
        poll: cfg.poll,
    };

    let mut running: Vec<Running> = Vec::new();
    let mut retiring: Vec<Running> = Vec::new();
    let mut target = 0usize;
    let mut last_tick: Option<Instant> = None;
    let mut report_events = Vec::new();
    let (mut started_n, mut kills, mut peak) = (0usize, 0usize, 0usize);
    let join = |r: Running, kills: &mut usize| {
        if r.handle.join().expect("worker panicked").killed {
            *kills += 1;
        }
    };

    loop {
        let (done, alive): (Vec<_>, Vec<_>) =
            running.drain(..).partition(|r| r.handle.is_finished());
        running = alive;
        for r in done {
            join(r, &mut kills);
        }
        let depth = queue.depth();
        if depth == 0 {
            break;
        }
        if last_tick.is_none_or(|t| t.elapsed() >= cfg.cadence) {
            let policy = ScalePolicy {
                per_worker_rate: cfg.policy.per_worker_rate.or_else(|| rate.rate()),
                ..cfg.policy
            };
            target = autoscale_tick(&policy, depth, running.len());
            report_events.push(ScaleEvent {
                at_ms: started.elapsed().as_millis() as u64,
                depth,
                desired: target,
            });
            last_tick = Some(Instant::now());
            while running.len() > target {
                let r = running.pop().expect("nonempty");
                r.stop.store(true, Ordering::Relaxed);
                retiring.push(r);
            }
        }
        // Replace crashed workers as well as scaling up.
        while running.len() < target {
            started_n += 1;
            let id = format!("w{started_n}");
            let stop = Arc::new(AtomicBool::new(false));
            let ctx = ctx.clone();
            let flag = stop.clone();
            let handle = thread::Builder::new()
                .name(id.clone())
                .spawn(move || run_worker(&ctx, &id, &flag))?;
            running.push(Running { stop, handle });
        }
        peak = peak.max(running.len());
        thread::sleep(cfg.poll);
    }
    for r in running.drain(..).chain(retiring.drain(..)) {
        r.stop.store(true, Ordering::Relaxed);
        join(r, &mut kills);
    }
    report_events.push(ScaleEvent {
        at_ms: started.elapsed().as_millis() as u64,
        depth: 0,
        desired: autoscale_tick(&cfg.policy, 0, 0),
    });

    // Items that ran out of attempts without any worker recording them.
    let dead_letters = queue.dead_letters();
    for d in dead_letters.iter().filter(|d| !d.recorded) {
        for key in &d.item.inputs {
            let _ = ctx.manifest.send(ManifestEntry {
                request_id: d.item.request_id.clone(),
                study_id: d.item.study_id.clone(),
                accession: d.item.manifest_accession(),
                instance: d.item.instance_id(key),
                outcome: error_outcome(
                    ErrorKind::Delivery,
                    format!("dead-lettered after {} attempts: {}", d.item.attempt, d.reason),
                    0,
                ),
                output_key: None,
                worker: String::new(),
                attempt: d.item.attempt,
                started_ms: now_ms(),
                finished_ms: now_ms(),
            });
        }
    }
    drop(ctx);
    let journal = writer.finish()?;
    let duration = started.elapsed();
    let manifest = consolidate(&journal);
    let counts = recount(&manifest);
    Ok(PoolReport {
        journal_entries: journal.len(),
        row: ThroughputRow::new(&counts, duration),
        counts,
        manifest,
        duration,
        dead_letters,
        peak_workers: peak,
        workers_started: started_n,
        kills,
        measured_rate: rate.rate(),
        scale_events: report_events,
    })
}

/// Human-readable pool summary.
pub fn render_summary(request_id: &str, report: &PoolReport) -> String {
    let mut s = format!("request {request_id}\n");
    s.push_str(&render_table(&[("total".to_string(), report.row)]));
    s.push_str(&format!(
        "instances {}  errors {}  dead-lettered items {}  workers started {} (peak {})  kills {}\n",
        report.counts.total(),
        report.counts.errors,
        report.dead_letters.len(),
        report.workers_started,
        report.peak_workers,
        report.kills
    ));
    if let Some(r) = report.measured_rate {
        s.push_str(&format!("measured per-worker rate {r:.2} items/s\n"));
    }
    s
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dicom::{write_file, DataSet, Element, Vr};
    use crate::pseudonym::StudyRegistration;

    pub(crate) fn item(accession: &str) -> WorkItem {
        WorkItem {
            request_id: "r1".into(),
            study_id: "S".into(),
            mode: Mode::Reversible,
            real_accession: Some(accession.into()),
            scripts: ScriptRefs::default(),
            params: ScriptParams::new(&format!("ACN-{accession}"), "MRN1", 3, "salt").unwrap(),
            inputs: vec![format!("{accession}/1.dcm")],
            attempt: 0,
        }
    }

    fn instance(accession: &str, n: u32, make: &str) -> Vec<u8> {
        let mut ds = DataSet::new();
        ds.insert(Element::text(tags::IMAGE_TYPE, Vr::CS, &["ORIGINAL", "PRIMARY"]));
        ds.put_text(tags::SOP_CLASS_UID, Vr::UI, "1.2.840.10008.5.1.4.1.1.2");
        ds.put_text(tags::SOP_INSTANCE_UID, Vr::UI, &format!("1.2.3.{n}"));
        ds.put_text(tags::ACCESSION_NUMBER, Vr::SH, accession);
        ds.put_text(tags::MODALITY, Vr::CS, "CT");
        ds.put_text(tags::MANUFACTURER, Vr::LO, make);
        ds.put_text(tags::PATIENT_ID, Vr::LO, &format!("PAT-{accession}"));
        ds.put_u16(tags::ROWS, 2);
        ds.put_u16(tags::COLUMNS, 2);
        ds.put_u16(tags::BITS_ALLOCATED, 8);
        ds.insert(Element::new(tags::PIXEL_DATA, Vr::OB, vec![1, 2, 3, 4]));
        write_file(&ds)
    }

    struct Setup {
        mappings: MappingStore,
        input: Arc<MemoryStore>,
    }

    fn setup(accessions: usize) -> Setup {
        let mappings = MappingStore::in_memory();
        let input = Arc::new(MemoryStore::new());
        let mut approved = Vec::new();
        for a in 0..accessions {
            let acc = format!("A{a:03}");
            for n in 0..3 {
                let make = if n == 2 { "Vidar" } else { "Acme" };
                input
                    .put(&format!("{acc}/{n}.dcm"), &instance(&acc, a as u32 * 10 + n, make))
                    .unwrap();
            }
            approved.push(acc);
        }
        mappings
            .register_study(StudyRegistration {
                study_id: "S".into(),
                mode: Mode::Irreversible,
                approved_accessions: approved.into_iter().collect(),
                seed: 7,
                delivery_window: 60,
            })
            .unwrap();
        Setup { mappings, input }
    }

    fn request(accessions: &[&str]) -> SubmitRequest {
        SubmitRequest {
            request_id: "req".into(),
            study_id: "S".into(),
            accessions: accessions.iter().map(|s| s.to_string()).collect(),
            scripts: ScriptRefs::default(),
        }
    }

    fn fast_pool(max: usize) -> PoolConfig {
        PoolConfig {
            policy: ScalePolicy {
                per_worker_rate: None,
                delivery_window: 1.0,
                min_workers: max,
                max_workers: max,
            },
            cadence: Duration::from_millis(10),
            poll: Duration::from_millis(1),
            ..PoolConfig::default()
        }
    }

    #[test]
    fn submit_rejects_ineligible() {
        let s = setup(2);
        let q = Queue::new(DEFAULT_VISIBILITY, 3);
        let r = submit_request(&s.mappings, &*s.input, &q, &request(&["A000", "A001", "ZZZ"])).unwrap();
        assert_eq!(r.items.len(), 2);
        assert_eq!(r.rejected, vec![("ZZZ".to_string(), "not approved".to_string())]);
        assert_eq!(q.depth(), 2);
        assert!(r.items.iter().all(|i| i.inputs.len() == 3));
        assert!(matches!(
            submit_request(&s.mappings, &*s.input, &q, &SubmitRequest { study_id: "nope".into(), ..request(&[]) }),
            Err(PseudonymError::UnknownStudy(_))
        ));
    }

    #[test]
    fn pool_processes_everything() {
        let s = setup(10);
        let q = Arc::new(Queue::new(DEFAULT_VISIBILITY, 3));
        let accs: Vec<String> = (0..10).map(|a| format!("A{a:03}")).collect();
        let accs: Vec<&str> = accs.iter().map(String::as_str).collect();
        submit_request(&s.mappings, &*s.input, &q, &request(&accs)).unwrap();
        let out = Arc::new(MemoryStore::new());
        let rep = run_pool(&fast_pool(1), q.clone(), s.input.clone(), out.clone(), Arc::new(RuleCatalog::new())).unwrap();
        assert!(q.is_drained());
        assert_eq!(rep.counts.total(), 30);
        assert_eq!(rep.counts.filtered, 10);
        assert_eq!(rep.counts.anonymized, 20);
        assert_eq!(out.len(), 20);
        for key in out.list("").unwrap() {
            assert!(key.starts_with("S/ACN"), "{key}");
            assert!(!key.contains("A00"), "{key}");
        }
        assert!(rep.manifest.iter().all(|e| e.accession.starts_with("ACN")));
        assert_eq!(rep.scale_events.last().unwrap().desired, 0);
    }

    #[test]
    fn empty_queue_terminates() {
        let q = Arc::new(Queue::new(DEFAULT_VISIBILITY, 3));
        let rep = run_pool(
            &PoolConfig::default(),
            q,
            Arc::new(MemoryStore::new()),
            Arc::new(MemoryStore::new()),
            Arc::new(RuleCatalog::new()),
        )
        .unwrap();
        assert!(rep.manifest.is_empty());
        assert_eq!(rep.workers_started, 0);
    }

    #[test]
    fn poison_item_dead_letters() {
        let s = setup(1);
        s.input.put("A000/9.dcm", b"garbage").unwrap();
        let q = Arc::new(Queue::new(DEFAULT_VISIBILITY, 3));
        submit_request(&s.mappings, &*s.input, &q, &request(&["A000"])).unwrap();
        let out = Arc::new(MemoryStore::new());
        let rep = run_pool(&fast_pool(1), q, s.input.clone(), out, Arc::new(RuleCatalog::new())).unwrap();
        assert_eq!(rep.dead_letters.len(), 1);
        assert_eq!(rep.dead_letters[0].item.attempt, 2);
        assert_eq!(rep.counts.errors, 1);
        assert_eq!(rep.counts.total(), 4);
    }

    #[test]
    fn faults_converge() {
        let s = setup(12);
        let accs: Vec<String> = (0..12).map(|a| format!("A{a:03}")).collect();
        let accs: Vec<&str> = accs.iter().map(String::as_str).collect();
        let run = |faults: Option<FaultPlan>| {
            let q = Arc::new(Queue::new(Duration::from_millis(30), 3));
            submit_request(&s.mappings, &*s.input, &q, &request(&accs)).unwrap();
            let out = Arc::new(MemoryStore::new());
            let cfg = PoolConfig {
                faults,
                ..fast_pool(2)
            };
            let rep = run_pool(&cfg, q, s.input.clone(), out.clone(), Arc::new(RuleCatalog::new())).unwrap();
            (out.content_hash().unwrap(), rep)
        };
        let (clean, base) = run(None);
        let (faulty, rep) = run(Some(FaultPlan {
            probability: 0.5,
            seed: 1,
        }));
        assert!(rep.kills > 0);
        assert_eq!(clean, faulty);
        let norm = |m: &[ManifestEntry]| m.iter().map(ManifestEntry::normalized).collect::<Vec<_>>();
        assert_eq!(norm(&base.manifest), norm(&rep.manifest));
    }

    #[test]
    fn kill_points_only_on_first_delivery() {
        let plan = FaultPlan {
            probability: 1.0,
            seed: 3,
        };
        let mut it = item("A");
        assert!(plan.kill_point(&it).is_some());
        it.attempt = 1;
        assert!(plan.kill_point(&it).is_none());
        let never = FaultPlan {
            probability: 0.0,
            seed: 3,
        };
        assert!(never.kill_point(&item("A")).is_none());
    }
}
