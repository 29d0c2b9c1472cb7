use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use serde::Serialize;

use deid_core::corpus::{self, BenchConfig, CorpusSpec};
use deid_core::engine::{deid_bytes, Counts, ErrorKind, Outcome, OutcomeKind};
use deid_core::orchestrator::{
    self, ingest_dir, render_jsonl, render_summary, render_table, submit_request,
    write_atomic, LocalDirStore, ManifestEntry, MemoryStore, ObjectStore, PoolConfig, Queue,
    QueueSpool, RuleCatalog, ScalePolicy, SubmitRequest, ThroughputRow,
    DEFAULT_MAX_ATTEMPTS, DEFAULT_VISIBILITY,
};
use deid_core::pseudonym::{ExclusionList, MappingStore, Mode, StudyRegistration};
use deid_core::regression::{self, PET_CT_SUITE};
use deid_core::rules::{
    parse_anon_script, parse_filter_script, parse_scrub_script, RuleError, RuleSet, ScriptParams,
    DEFAULT_ANON_SCRIPT, DEFAULT_FILTER_SCRIPT, DEFAULT_SCRUB_SCRIPT,
};

use crate::config::Config;
use crate::Common;

/// Config file merged with command-line overrides.
#[derive(Debug, Clone)]
pub struct Settings {
    pub cfg: Config,
    pub policy: ScalePolicy,
}

impl Settings {
    pub fn new(c: &Common) -> Result<Self> {
        let mut cfg = Config::load(c.config.as_deref())?;
        let over = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        over(&mut cfg.filter, &c.filter);
        over(&mut cfg.scrub, &c.scrub);
        over(&mut cfg.anon, &c.anon);
        over(&mut cfg.input, &c.input);
        over(&mut cfg.output, &c.output);
        over(&mut cfg.manifest, &c.manifest);
        if c.seed.is_some() {
            cfg.seed = c.seed;
        }
        if let Some(n) = c.workers {
            cfg.scale.min_workers = Some(n);
            if c.max_workers.is_none() {
                cfg.scale.max_workers = Some(n.max(1));
            }
        }
        if c.max_workers.is_some() {
            cfg.scale.max_workers = c.max_workers;
        }
        if c.window.is_some() {
            cfg.scale.window = c.window;
        }
        for (k, v) in &c.params {
            cfg.params.insert(k.clone(), v.clone());
        }
        let policy = cfg.policy()?;
        Ok(Settings { cfg, policy })
    }

    fn seed(&self) -> u64 {
        self.cfg.seed.unwrap_or(1)
    }

    fn rules(&self) -> Result<RuleSet> {
        let refs = self.cfg.script_refs();
        RuleCatalog::new()
            .resolve(&refs)
            .map(|r| (*r).clone())
            .map_err(anyhow::Error::msg)
    }

    fn params(&self) -> Result<ScriptParams> {
        ScriptParams::from_pairs(self.cfg.params.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .context("script parameters (--param key=value)")
    }

    fn mapping_store(&self, flag: &Option<PathBuf>) -> Result<MappingStore> {
        let path = flag
            .as_ref()
            .or(self.cfg.mapping_store.as_ref())
            .context("a mapping store is required (--store / --mapping-store or mapping_store in config)")?;
        let mut store = MappingStore::open(path)
            .with_context(|| format!("opening mapping store {}", path.display()))?;
        if let Some(ex) = &self.cfg.exclusions {
            store = store.with_exclusions(ExclusionList::load(ex)?);
        }
        Ok(store)
    }
}

fn variant(e: &RuleError) -> &'static str {
    match e {
        RuleError::Syntax { .. } => "SyntaxError",
        RuleError::DuplicateKey { .. } => "DuplicateKey",
        RuleError::UnknownAttributeAlias { .. } => "UnknownAttributeAlias",
        RuleError::MissingParam(_) => "MissingParam",
        RuleError::InvalidParams(_) => "InvalidParams",
    }
}

type ScriptCheck = fn(&str) -> Result<(), RuleError>;

pub fn validate(s: &Settings) -> Result<bool> {
    let read = |p: &Option<PathBuf>, builtin: &str| -> Result<(String, String)> {
        match p {
            Some(p) => Ok((
                p.display().to_string(),
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            )),
            None => Ok(("builtin".into(), builtin.to_string())),
        }
    };
    let checks: [(&str, (String, String), ScriptCheck); 3] = [
        ("filter", read(&s.cfg.filter, DEFAULT_FILTER_SCRIPT)?, |t| parse_filter_script(t).map(drop)),
        ("scrub", read(&s.cfg.scrub, DEFAULT_SCRUB_SCRIPT)?, |t| parse_scrub_script(t).map(drop)),
        ("anonymizer", read(&s.cfg.anon, DEFAULT_ANON_SCRIPT)?, |t| parse_anon_script(t).map(drop)),
    ];
    let mut ok = true;
    for (kind, (name, text), check) in checks {
        match check(&text) {
            Ok(()) => println!("{kind} script {name}: ok"),
            Err(e) => {
                ok = false;
                println!("{kind} script {name}: {} {e}", variant(&e));
            }
        }
    }
    Ok(ok)
}

fn run_output_key(out: &deid_core::engine::Output, n: usize) -> String {
    match &out.sop_instance_uid {
        Some(uid) if !uid.is_empty() => format!("{uid}.dcm"),
        _ => format!("instance-{n:06}.dcm"),
    }
}

pub fn run(s: &Settings) -> Result<bool> {
    let input_dir = s.cfg.require(&s.cfg.input, "--in")?;
    let out_dir = s.cfg.require(&s.cfg.output, "--out")?;
    let manifest_path = s
        .cfg
        .manifest
        .clone()
        .unwrap_or_else(|| out_dir.join("manifest.jsonl"));
    let rules = s.rules()?;
    let params = s.params()?;
    let input = LocalDirStore::new(input_dir)?;
    let output = LocalDirStore::new(out_dir)?;

    let started = Instant::now();
    let mut entries = Vec::new();
    let mut counts = Counts::default();
    for (n, key) in input.list("")?.into_iter().enumerate() {
        let t0 = started.elapsed().as_millis() as u64;
        let (out, outcome) = match input.get(&key) {
            Ok(bytes) => deid_bytes(&bytes, &rules, &params),
            Err(e) => (
                None,
                Outcome {
                    kind: OutcomeKind::Error {
                        kind: ErrorKind::Delivery,
                        detail: format!("cannot read input: {e}"),
                    },
                    transforms: Vec::new(),
                    bytes_in: 0,
                    bytes_out: 0,
                },
            ),
        };
        let output_key = match out {
            Some(o) => {
                let k = run_output_key(&o, n);
                output.put(&k, &o.bytes)?;
                Some(k)
            }
            None => None,
        };
        counts.add(&outcome);
        entries.push(ManifestEntry {
            request_id: "run".into(),
            study_id: String::new(),
            accession: params.accession.clone(),
            instance: key,
            outcome,
            output_key,
            worker: "run".into(),
            attempt: 0,
            started_ms: t0,
            finished_ms: started.elapsed().as_millis() as u64,
        });
    }
    write_atomic(&manifest_path, render_jsonl(&entries).as_bytes())?;
    print!(
        "{}",
        render_table(&[("total".into(), ThroughputRow::new(&counts, started.elapsed()))])
    );
    println!(
        "{} instances, {} errors; manifest {}",
        counts.total(),
        counts.errors,
        manifest_path.display()
    );
    Ok(counts.errors == 0)
}

#[derive(Debug, Args)]
pub struct SubmitArgs {
    #[arg(long)]
    pub request: String,
    #[arg(long)]
    pub study: String,
    /// Accession to deliver, repeatable.
    #[arg(long = "accession")]
    pub accessions: Vec<String>,
    /// File with one accession per line.
    #[arg(long, value_name = "PATH")]
    pub accessions_file: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub mapping_store: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub spool: Option<PathBuf>,
    /// Copy a local tree (first path component = accession) into the input store first.
    #[arg(long, value_name = "DIR")]
    pub ingest: Option<PathBuf>,
}

fn read_accessions(list: &[String], file: &Option<PathBuf>) -> Result<Vec<String>> {
    let mut out: Vec<String> = list.to_vec();
    if let Some(f) = file {
        let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        out.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from),
        );
    }
    Ok(out)
}

fn spool_path(s: &Settings, flag: &Option<PathBuf>) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| s.cfg.spool.clone())
        .context("--spool is required (flag or config file)")
}

pub fn submit(s: &Settings, a: &SubmitArgs) -> Result<bool> {
    let input_root = s.cfg.require(&s.cfg.input, "--in")?;
    let input = LocalDirStore::new(input_root)?;
    if let Some(dir) = &a.ingest {
        let n = ingest_dir(dir, &input)?;
        println!("ingested {n} objects from {}", dir.display());
    }
    let mappings = s.mapping_store(&a.mapping_store)?;
    let accessions = read_accessions(&a.accessions, &a.accessions_file)?;
    if accessions.is_empty() {
        bail!("no accessions given (--accession or --accessions-file)");
    }
    let queue = Queue::new(DEFAULT_VISIBILITY, DEFAULT_MAX_ATTEMPTS);
    let report = submit_request(
        &mappings,
        &input,
        &queue,
        &SubmitRequest {
            request_id: a.request.clone(),
            study_id: a.study.clone(),
            accessions,
            scripts: s.cfg.script_refs(),
        },
    )?;
    let spool = QueueSpool::new(spool_path(s, &a.spool)?);
    spool.append(&report.items)?;
    println!(
        "request {}: {} accessions spooled to {}",
        a.request,
        report.items.len(),
        spool.path().display()
    );
    for (acc, why) in &report.rejected {
        println!("  rejected {acc}: {why}");
    }
    Ok(report.rejected.is_empty())
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    #[arg(long, value_name = "PATH")]
    pub spool: Option<PathBuf>,
    /// Append-only journal of every manifest entry, retries included.
    #[arg(long, value_name = "PATH")]
    pub journal: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub dead_letters: Option<PathBuf>,
    /// Per-worker rate (items/s) for scaling; measured during warm-up if absent.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
    pub max_attempts: u32,
    #[arg(long, default_value_t = DEFAULT_VISIBILITY.as_secs())]
    pub visibility_secs: u64,
    /// Autoscaler evaluation interval.
    #[arg(long, default_value_t = 1000)]
    pub cadence_ms: u64,
    /// Purge real-identifier links of irreversible studies once delivered.
    #[arg(long)]
    pub purge: bool,
    #[arg(long, value_name = "PATH")]
    pub mapping_store: Option<PathBuf>,
}

pub fn pool(s: &Settings, a: &PoolArgs) -> Result<bool> {
    let input = Arc::new(LocalDirStore::new(s.cfg.require(&s.cfg.input, "--in")?)?);
    let out_dir = s.cfg.require(&s.cfg.output, "--out")?;
    let output = Arc::new(LocalDirStore::new(out_dir)?);
    let manifest_path = s
        .cfg
        .manifest
        .clone()
        .context("--manifest is required for pool")?;
    let spool = QueueSpool::new(spool_path(s, &a.spool)?);
    let items = spool.load()?;
    let queue = Arc::new(Queue::new(Duration::from_secs(a.visibility_secs), a.max_attempts));
    let studies: BTreeMap<String, Mode> = items.iter().map(|i| (i.study_id.clone(), i.mode)).collect();
    let request_ids: BTreeSet<String> = items.iter().map(|i| i.request_id.clone()).collect();
    for item in items {
        queue.enqueue(item);
    }
    let mut policy = s.policy;
    if a.rate.is_some() {
        policy.per_worker_rate = a.rate;
    }
    let cfg = PoolConfig {
        policy,
        cadence: Duration::from_millis(a.cadence_ms),
        journal: a.journal.clone(),
        ..PoolConfig::default()
    };
    let report = orchestrator::run_pool(&cfg, queue, input, output, Arc::new(RuleCatalog::new()))?;
    write_atomic(&manifest_path, render_jsonl(&report.manifest).as_bytes())?;
    spool.replace(&[])?;
    if let Some(p) = &a.dead_letters {
        let lines: Vec<String> = report
            .dead_letters
            .iter()
            .map(serde_json::to_string)
            .collect::<Result<_, _>>()?;
        write_atomic(p, (lines.join("\n") + "\n").as_bytes())?;
    }
    let label = request_ids.into_iter().collect::<Vec<_>>().join(",");
    print!("{}", render_summary(&label, &report));
    println!("manifest {}", manifest_path.display());

    if a.purge && report.dead_letters.is_empty() {
        let mappings = s.mapping_store(&a.mapping_store)?;
        for (study, mode) in &studies {
            if *mode == Mode::Irreversible {
                let n = mappings.purge_links(study)?;
                println!("study {study}: purged {n} links");
            }
        }
    }
    Ok(report.dead_letters.is_empty() && report.counts.errors == 0)
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    /// Suite file; the built-in PET/CT suite when omitted.
    pub suite: Option<PathBuf>,
    /// Directory the background script paths are relative to.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub scripts: PathBuf,
    /// Root of the fixture directories (defaults to --in, then `.`).
    #[arg(long, value_name = "DIR")]
    pub fixtures: Option<PathBuf>,
    /// Ignore the background script paths and use the shipped scripts.
    #[arg(long)]
    pub builtin_scripts: bool,
    /// JSON report.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

pub fn regress(s: &Settings, a: &RegressArgs) -> Result<bool> {
    let text = match &a.suite {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => PET_CT_SUITE.to_string(),
    };
    let suite = regression::parse_suite(&text)?;
    let rules = if a.builtin_scripts {
        RuleSet::defaults()
    } else {
        regression::load_rules(&suite, &a.scripts)?
    };
    let fixtures = a
        .fixtures
        .clone()
        .or_else(|| s.cfg.input.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let report = regression::run_suite(&suite, &rules, &fixtures)?;
    print!("{}", report.render());
    if let Some(p) = &a.report {
        write_atomic(p, &serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(report.passed())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// Include undecodable instances (compressed, truncated).
    #[arg(long)]
    pub errors: bool,
    /// Write the PET/CT regression fixture tree instead of a mixed corpus.
    #[arg(long)]
    pub pet_ct: bool,
}

pub fn synth(s: &Settings, a: &SynthArgs) -> Result<bool> {
    let out = s.cfg.require(&s.cfg.output, "--out")?;
    fs::create_dir_all(out)?;
    if a.pet_ct {
        let ledger = corpus::write_pet_ct_fixtures(out, s.seed())?;
        write_atomic(&out.join("ledger.jsonl"), corpus::render_ledger(&ledger).as_bytes())?;
        println!("{} fixture files under {}", ledger.len(), out.join("dicom-phi").display());
        return Ok(true);
    }
    let spec = CorpusSpec::default_mix(a.count, s.seed(), a.errors);
    let ledger = corpus::generate_corpus(&spec, out)?;
    let bytes: u64 = ledger.iter().map(|r| r.bytes).sum();
    let accessions: BTreeSet<&str> = ledger.iter().map(|r| r.accession.as_str()).collect();
    println!(
        "{} instances in {} accessions ({}) under {}; ledger {}",
        ledger.len(),
        accessions.len(),
        orchestrator::human_bytes(bytes as f64),
        out.join("inputs").display(),
        out.join("ledger.jsonl").display()
    );
    Ok(true)
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// Worker counts to measure, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub sweep: Vec<usize>,
    /// JSON report (default `bench.json` in --out, else the working directory).
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Serialize)]
struct BenchReport<'a> {
    instances: usize,
    input_bytes: u64,
    seed: u64,
    cpus: usize,
    rows: &'a [corpus::BenchRow],
    outputs_identical: bool,
}

pub fn bench(s: &Settings, a: &BenchArgs) -> Result<bool> {
    if a.sweep.is_empty() || a.sweep.contains(&0) {
        bail!("--sweep needs positive worker counts");
    }
    let corpus = corpus::generate(&CorpusSpec::default_mix(a.count, s.seed(), false))?;
    let cfg = BenchConfig {
        workers: a.sweep.clone(),
        scripts: s.cfg.script_refs(),
        ..BenchConfig::default()
    };
    let out_root = s.cfg.output.clone();
    let rows = corpus::run_benchmark(&corpus, &cfg, |n| -> std::io::Result<Arc<dyn ObjectStore>> {
        Ok(match &out_root {
            Some(root) => Arc::new(LocalDirStore::new(root.join(format!("workers-{n}")))?),
            None => Arc::new(MemoryStore::new()),
        })
    })?;
    let identical = rows.windows(2).all(|w| w[0].output_hash == w[1].output_hash);
    let report = BenchReport {
        instances: corpus.instances.len(),
        input_bytes: corpus.total_bytes(),
        seed: s.seed(),
        cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        rows: &rows,
        outputs_identical: identical,
    };
    let path = a.report.clone().unwrap_or_else(|| match &out_root {
        Some(root) => root.join("bench.json"),
        None => PathBuf::from("bench.json"),
    });
    write_atomic(&path, &serde_json::to_vec_pretty(&report)?)?;
    print!("{}", corpus::render_bench(&rows));
    println!("report {}", path.display());
    Ok(identical && rows.iter().all(|r| r.dead_letters == 0))
}

#[derive(Debug, Subcommand)]
pub enum MapAction {
    /// Register a study and its approved accessions.
    Register {
        #[arg(long)]
        study: String,
        #[arg(long)]
        mode: Mode,
        #[arg(long = "accession")]
        accessions: Vec<String>,
        #[arg(long, value_name = "PATH")]
        accessions_file: Option<PathBuf>,
        /// Delivery window in seconds.
        #[arg(long, default_value_t = 86_400)]
        delivery_window: u64,
    },
    /// Add accessions to a study's approved set.
    Approve {
        #[arg(long)]
        study: String,
        #[arg(long = "accession")]
        accessions: Vec<String>,
        #[arg(long, value_name = "PATH")]
        accessions_file: Option<PathBuf>,
    },
    /// Write a study's mappings as JSON lines (real ids masked when irreversible).
    Export {
        #[arg(long)]
        study: String,
        #[arg(long, value_name = "PATH")]
        to: Option<PathBuf>,
    },
    /// Erase real-identifier links of an irreversible study.
    Purge {
        #[arg(long)]
        study: String,
    },
    /// Real identifiers behind an anonymized accession (reversible studies).
    Resolve {
        #[arg(long)]
        study: String,
        #[arg(long)]
        anon_accession: String,
    },
}

pub fn map(s: &Settings, store: Option<PathBuf>, action: &MapAction) -> Result<bool> {
    let mappings = s.mapping_store(&store)?;
    match action {
        MapAction::Register {
            study,
            mode,
            accessions,
            accessions_file,
            delivery_window,
        } => {
            let approved = read_accessions(accessions, accessions_file)?;
            let id = mappings.register_study(StudyRegistration {
                study_id: study.clone(),
                mode: *mode,
                approved_accessions: approved.iter().cloned().collect(),
                seed: s.seed(),
                delivery_window: *delivery_window,
            })?;
            println!("registered {id} ({mode:?}) with {} accessions", approved.len());
        }
        MapAction::Approve {
            study,
            accessions,
            accessions_file,
        } => {
            let list = read_accessions(accessions, accessions_file)?;
            mappings.approve_accessions(study, &list)?;
            println!("approved {} accessions for {study}", list.len());
        }
        MapAction::Export { study, to } => {
            let rows = mappings.export(study)?;
            let mut text = String::new();
            for m in &rows {
                text.push_str(&serde_json::to_string(m)?);
                text.push('\n');
            }
            match to {
                Some(p) => {
                    write_atomic(p, text.as_bytes())?;
                    println!("{} mappings written to {}", rows.len(), p.display());
                }
                None => print!("{text}"),
            }
        }
        MapAction::Purge { study } => {
            let n = mappings.purge_links(study)?;
            println!("study {study}: purged {n} links");
        }
        MapAction::Resolve {
            study,
            anon_accession,
        } => {
            let (acc, mrn) = mappings.resolve(study, anon_accession)?;
            println!("{anon_accession} -> accession {acc}, mrn {mrn}");
        }
    }
    Ok(true)
}
