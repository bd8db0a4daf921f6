//! Command-line front end.
//!
//! State lives in one directory (`--state-dir`, else `$CROWDSTAR_HOME`,
//! else `./.crowdstar`): the merged event log, per-topic snapshots, the
//! plan log and the feedback log. Every output is either one JSON record
//! per line or an aligned table (`--format`).

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::crowd_summary::ScoreWeights;
use crate::event_model::{
    AskTemplate, Correctness, CrowdId, CrowdPolicy, Timestamp, Topic, TopicSource, UserId,
};
use crate::feature_index::{
    read_snapshots, snapshot_file_name, write_snapshot, AskRecord, FeatureIndex, IndexConfig,
    TopicKey,
};
use crate::ingestion::{write_event_log, ClassifiedEvent, Ingestor, PolicySet};
use crate::router::{
    answer_record, apply_feedback, crowd_candidates, issue, route, FeedbackEvent, PlannedAsk,
    QuestionTask, RouteParams, RouterConfig,
};
use crate::simulator::{
    evaluate, generate, respond, run_summary, ComparisonReport, CrowdStyle, Population, RunLog,
    SimConfig,
};
use crate::skyline::{build_skyline, Dims, SkylineConfig};

pub const DEFAULT_STATE_DIR: &str = ".crowdstar";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// One JSON record per line.
    Lines,
    /// Aligned columns for reading.
    Table,
}

#[derive(Debug, Parser)]
#[command(
    name = "crowdstar",
    version,
    about = "Route questions to the crowd members most likely to answer them"
)]
pub struct Cli {
    /// State directory holding logs and snapshots.
    #[arg(long, global = true, env = "CROWDSTAR_HOME", value_name = "DIR")]
    pub state_dir: Option<PathBuf>,
    /// TOML config file; defaults to <state-dir>/config.toml when present.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Lines)]
    pub format: Format,
    /// Overrides the simulator seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-topic work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Evaluation time in Unix seconds; defaults to the latest logged time.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub now: Option<Timestamp>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate event logs and merge them into the state event log.
    Ingest {
        #[arg(long = "events", required = true, value_name = "PATH")]
        events: Vec<PathBuf>,
    },
    /// Rebuild the feature index and write one snapshot per (crowd, topic).
    Index {
        #[arg(long, value_name = "DIR")]
        snapshot_dir: Option<PathBuf>,
    },
    /// Print skyline levels for a topic, level 1 first.
    Skyline {
        /// Limit to one crowd.
        #[arg(long)]
        crowd: Option<String>,
        #[arg(long)]
        topic: String,
        #[arg(long)]
        dims: Option<Dims>,
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Per-crowd summaries and scores for a topic.
    Summarize {
        #[arg(long)]
        topic: String,
        /// Preset name (equal, survey) or three comma-separated weights.
        #[arg(long)]
        weights: Option<String>,
    },
    /// Plan and issue asks for a question.
    Route {
        #[arg(long)]
        question: String,
        #[arg(long)]
        topic: String,
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        weights: Option<String>,
        /// Defaults to the next free q<NNNNN>.
        #[arg(long)]
        question_id: Option<String>,
    },
    /// Record an answer to a routed question.
    Feedback {
        #[arg(long)]
        question_id: String,
        /// crowd:handle
        #[arg(long)]
        responder: String,
        /// Answer time in Unix seconds.
        #[arg(long, allow_negative_numbers = true)]
        at: Timestamp,
        #[arg(long)]
        correct: Option<bool>,
    },
    /// Generate a synthetic event log from the [simulator] section.
    Simulate {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Play simulated users' answers to questions without feedback yet.
    Respond,
    /// Compare plan/feedback logs, optionally against a baseline.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        plan_log: PathBuf,
        #[arg(long, value_name = "PATH")]
        feedback_log: PathBuf,
        #[arg(long, value_name = "PATH", requires = "baseline_feedback_log")]
        baseline_plan_log: Option<PathBuf>,
        #[arg(long, value_name = "PATH", requires = "baseline_plan_log")]
        baseline_feedback_log: Option<PathBuf>,
        /// Also write the structured report here.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Scores, skyline sizes, plans and feedback in the current state.
    Report,
}

// ---------------------------------------------------------------------------
// Config file

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrowdEntry {
    pub id: CrowdId,
    /// Starting policy, then overridden field by field.
    pub style: CrowdStyle,
    pub correctness: Option<Correctness>,
    pub upvote_weighting: Option<bool>,
    pub topic_source: Option<TopicSource>,
    pub template: Option<AskTemplate>,
}

impl CrowdEntry {
    pub fn policy(&self) -> CrowdPolicy {
        let mut p = self.style.default_policy(self.id.clone());
        if let Some(c) = self.correctness {
            p.correctness = c;
        }
        if let Some(u) = self.upvote_weighting {
            p.upvote_weighting = u;
        }
        if let Some(t) = self.topic_source {
            p.topic_source = t;
        }
        if let Some(t) = &self.template {
            p.template = t.clone();
        }
        p
    }
}

/// `preset = "survey"` or explicit `qualification`, `interest`,
/// `responsiveness` weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSection {
    pub preset: Option<String>,
    pub qualification: Option<f64>,
    pub interest: Option<f64>,
    pub responsiveness: Option<f64>,
}

impl WeightsSection {
    pub fn resolve(&self) -> Result<ScoreWeights> {
        let parts = [self.qualification, self.interest, self.responsiveness];
        match (&self.preset, parts) {
            (None, [None, None, None]) => Ok(ScoreWeights::equal()),
            (Some(name), [None, None, None]) => Ok(ScoreWeights::preset(name)?),
            (None, [Some(q), Some(i), Some(r)]) => Ok(ScoreWeights::new(q, i, r)?),
            _ => bail!("[weights] needs either preset or all three of qualification, interest, responsiveness"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Relative paths resolve against the state directory.
    pub snapshot_dir: PathBuf,
    pub events: PathBuf,
    pub plans: PathBuf,
    pub feedback: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            snapshot_dir: "snapshots".into(),
            events: "events.jsonl".into(),
            plans: "plans.jsonl".into(),
            feedback: "feedback.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Empty means one crowd per simulator crowd with its style's policy.
    pub crowds: Vec<CrowdEntry>,
    /// Empty means the simulator's topics.
    pub topics: Vec<Topic>,
    pub index: IndexConfig,
    pub skyline: SkylineConfig,
    pub weights: WeightsSection,
    pub router: RouterConfig,
    pub simulator: SimConfig,
    pub paths: Paths,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn policies(&self) -> PolicySet {
        if self.crowds.is_empty() {
            self.simulator.policies()
        } else {
            self.crowds
                .iter()
                .map(|c| (c.id.clone(), c.policy()))
                .collect()
        }
    }

    pub fn topics(&self) -> &[Topic] {
        if self.topics.is_empty() {
            &self.simulator.topics
        } else {
            &self.topics
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.crowds {
            if !seen.insert(&c.id) {
                bail!("crowd {} is listed twice", c.id);
            }
        }
        let policies = self.policies();
        for p in policies.values() {
            p.validate()?;
        }
        if !self.crowds.is_empty() {
            if let Some(c) = self
                .simulator
                .crowds
                .iter()
                .find(|c| !policies.contains_key(&c.id))
            {
                bail!("simulator crowd {} has no [[crowds]] entry", c.id);
            }
        }
        self.index.validate()?;
        self.skyline.validate()?;
        self.weights.resolve()?;
        self.simulator.validate()?;
        if !(self.router.activity_gate_hours >= 0.0 && self.router.staleness_hours > 0.0) {
            bail!("[router] gate must be >= 0 and staleness > 0 hours");
        }
        Ok(())
    }

    pub fn route_params(&self) -> Result<RouteParams> {
        Ok(RouteParams {
            weights: self.weights.resolve()?,
            router: self.router.clone(),
            skyline: self.skyline.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// State directory

struct State {
    root: PathBuf,
    cfg: Config,
    policies: PolicySet,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e).with_context(|| format!("cannot read {}", path.display())),
    };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}:{}: bad record", path.display(), n + 1))?,
        );
    }
    Ok(out)
}

fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

impl State {
    fn open(cli: &Cli) -> Result<Self> {
        let root = cli
            .state_dir
            .clone()
            .unwrap_or_else(|| DEFAULT_STATE_DIR.into());
        let mut cfg = match &cli.config {
            Some(path) => Config::load(path)?,
            None if root.join("config.toml").exists() => Config::load(&root.join("config.toml"))?,
            None => Config::default(),
        };
        if let Some(seed) = cli.seed {
            cfg.simulator.seed = seed;
        }
        let policies = cfg.policies();
        Ok(Self {
            root,
            cfg,
            policies,
        })
    }

    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn events_path(&self) -> PathBuf {
        self.path(&self.cfg.paths.events)
    }
    fn plans_path(&self) -> PathBuf {
        self.path(&self.cfg.paths.plans)
    }
    fn feedback_path(&self) -> PathBuf {
        self.path(&self.cfg.paths.feedback)
    }
    fn snapshot_dir(&self) -> PathBuf {
        self.path(&self.cfg.paths.snapshot_dir)
    }

    fn events(&self) -> Result<Vec<ClassifiedEvent>> {
        let path = self.events_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let mut ing = Ingestor::new(&self.policies, self.cfg.topics());
        ing.feed_path(&path)?;
        let (events, report) = ing.finish();
        if report.rejected > 0 {
            bail!(
                "stored event log {} has {} invalid lines",
                path.display(),
                report.rejected
            );
        }
        Ok(events)
    }

    fn plans(&self) -> Result<Vec<PlannedAsk>> {
        read_jsonl(&self.plans_path())
    }

    fn feedback(&self) -> Result<Vec<FeedbackEvent>> {
        read_jsonl(&self.feedback_path())
    }

    /// Latest time seen in any log, or the explicit override.
    fn now(&self, explicit: Option<Timestamp>, events: &[ClassifiedEvent]) -> Result<Timestamp> {
        self.now_from(explicit, events.iter().map(|e| e.event.timestamp))
    }

    /// Like `now`, counting snapshot build times as seen.
    fn now_for(&self, explicit: Option<Timestamp>, index: &FeatureIndex) -> Result<Timestamp> {
        let built = index
            .topic_keys()
            .filter_map(|k| index.knowledge_current_at(k));
        self.now_from(
            explicit,
            index
                .events()
                .iter()
                .map(|e| e.event.timestamp)
                .chain(built),
        )
    }

    fn now_from(
        &self,
        explicit: Option<Timestamp>,
        seen: impl Iterator<Item = Timestamp>,
    ) -> Result<Timestamp> {
        if let Some(t) = explicit {
            return Ok(t);
        }
        let plans = self.plans()?;
        let feedback = self.feedback()?;
        seen.chain(plans.iter().map(|a| a.issued_at))
            .chain(feedback.iter().map(|f| f.answered_at))
            .max()
            .ok_or_else(|| anyhow!("state is empty; ingest events first or pass --now"))
    }

    /// Index restored from snapshots plus the plan and feedback logs.
    fn load_index(&self) -> Result<FeatureIndex> {
        let dir = self.snapshot_dir();
        let snaps = read_snapshots(&dir)?;
        if snaps.is_empty() {
            bail!(
                "no snapshots in {}; run `crowdstar index` first",
                dir.display()
            );
        }
        let asks: Vec<AskRecord> = self.plans()?.iter().map(PlannedAsk::record).collect();
        let mut by_question: BTreeMap<&str, Vec<&AskRecord>> = BTreeMap::new();
        for a in &asks {
            by_question.entry(&a.question_id).or_default().push(a);
        }
        let answers = self
            .feedback()?
            .iter()
            .map(|fb| {
                let asks = by_question
                    .get(fb.question_id.as_str())
                    .map_or(&[][..], Vec::as_slice);
                answer_record(fb, asks)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FeatureIndex::from_snapshots(
            self.cfg.index,
            snaps,
            asks.clone(),
            answers,
        )?)
    }

    fn save_topics<'k>(
        &self,
        index: &FeatureIndex,
        keys: impl IntoIterator<Item = &'k TopicKey>,
    ) -> Result<()> {
        let dir = self.snapshot_dir();
        for key in keys.into_iter().collect::<BTreeSet<_>>() {
            if let Some(snap) = index.snapshot(key) {
                write_snapshot(&dir, &snap)?;
            }
        }
        Ok(())
    }

    fn topic(&self, name: &str) -> Result<Topic> {
        let topic = Topic::new(name)?;
        if !self.cfg.topics().contains(&topic) {
            bail!("topic {topic} is not in the configured topic list");
        }
        Ok(topic)
    }

    fn crowd(&self, name: &str) -> Result<CrowdId> {
        let crowd = CrowdId::new(name)?;
        if !self.policies.contains_key(&crowd) {
            bail!("crowd {crowd} has no policy");
        }
        Ok(crowd)
    }
}

// ---------------------------------------------------------------------------
// Output

struct Out<'w> {
    w: &'w mut dyn Write,
    format: Format,
}

impl Out<'_> {
    fn line(&mut self, value: &impl Serialize) -> Result<()> {
        writeln!(self.w, "{}", serde_json::to_string(value)?)?;
        Ok(())
    }

    fn table(&mut self, headers: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
        for r in rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let fmt_row = |cells: Vec<&str>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        writeln!(self.w, "{}", fmt_row(headers.to_vec()))?;
        for r in rows {
            writeln!(
                self.w,
                "{}",
                fmt_row(r.iter().map(String::as_str).collect())
            )?;
        }
        Ok(())
    }
}

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_ingest(state: &State, paths: &[PathBuf], out: &mut Out) -> Result<()> {
    let existing = state.events()?;
    let mut ing = Ingestor::new(&state.policies, state.cfg.topics())
        .with_known_ids(existing.iter().map(|e| e.event.event_id.clone()));
    for p in paths {
        ing.feed_path(p)?;
    }
    let (new, report) = ing.finish();
    let mut all = existing;
    all.extend(new);
    crate::ingestion::sort_events(&mut all);
    let path = state.events_path();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let file = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut w = io::BufWriter::new(file);
    write_event_log(all.iter().map(|e| &e.event), &mut w)?;
    w.flush()?;
    match out.format {
        Format::Lines => out.line(&json!({
            "accepted": report.accepted,
            "rejected": report.rejected,
            "reject_reasons": report.reject_reasons,
            "time_range": report.time_range,
            "stored": all.len(),
        })),
        Format::Table => {
            let mut rows = vec![
                vec!["accepted".into(), report.accepted.to_string()],
                vec!["rejected".into(), report.rejected.to_string()],
            ];
            rows.extend(
                report
                    .reject_reasons
                    .iter()
                    .map(|(r, n)| vec![format!("  {r}"), n.to_string()]),
            );
            rows.push(vec!["stored".into(), all.len().to_string()]);
            out.table(&["ingest", "count"], &rows)
        }
    }
}

fn cmd_index(
    state: &State,
    snapshot_dir: Option<&Path>,
    now: Option<Timestamp>,
    out: &mut Out,
) -> Result<()> {
    let events = state.events()?;
    let now = state.now(now, &events)?;
    let mut index = FeatureIndex::new(state.cfg.index)?;
    index.add_events(events);
    let mut asks = state.plans()?;
    asks.sort_by_key(|a| a.issued_at);
    for a in asks.iter().filter(|a| a.issued_at <= now) {
        index.record_ask(a.record(), a.issued_at);
    }
    for fb in state.feedback()?.iter().filter(|f| f.answered_at <= now) {
        apply_feedback(fb, &mut index, fb.answered_at)?;
    }
    index.rebuild(now);

    let dir = snapshot_dir.map_or_else(|| state.snapshot_dir(), |d| state.path(d));
    fs::create_dir_all(&dir)?;
    // Drop snapshots of topics that no longer exist.
    let keep: BTreeSet<String> = index.topic_keys().map(snapshot_file_name).collect();
    for entry in fs::read_dir(&dir)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        if name.ends_with(".json") && !keep.contains(&name) {
            fs::remove_file(&path)?;
        }
    }
    let mut rows = Vec::new();
    for snap in index.snapshots() {
        write_snapshot(&dir, &snap)?;
        rows.push((
            snap.crowd.clone(),
            snap.topic.clone(),
            snap.users.len(),
            snap.knowledge_at,
        ));
    }
    match out.format {
        Format::Lines => {
            for (crowd, topic, users, at) in &rows {
                out.line(
                    &json!({"crowd": crowd, "topic": topic, "users": users, "computed_at": at}),
                )?;
            }
            Ok(())
        }
        Format::Table => {
            let rows: Vec<Vec<String>> = rows
                .iter()
                .map(|(c, t, u, at)| {
                    vec![c.to_string(), t.to_string(), u.to_string(), at.to_string()]
                })
                .collect();
            out.table(&["crowd", "topic", "users", "computed_at"], &rows)
        }
    }
}

fn cmd_skyline(
    state: &State,
    crowd: Option<&str>,
    topic: &str,
    dims: Option<Dims>,
    levels: Option<usize>,
    out: &mut Out,
) -> Result<()> {
    let topic = state.topic(topic)?;
    let index = state.load_index()?;
    let crowds: Vec<CrowdId> = match crowd {
        Some(c) => vec![state.crowd(c)?],
        None => state.policies.keys().cloned().collect(),
    };
    let mut cfg = state.cfg.skyline.clone();
    if let Some(d) = dims {
        cfg.dims = d;
    }
    if let Some(k) = levels {
        cfg.max_levels = k;
    }
    let names = cfg.dims.names();
    let mut rows = Vec::new();
    for c in crowds {
        let key = TopicKey::new(c.clone(), topic.clone());
        let Some(state_) = index.topic(&key) else {
            if crowd.is_some() {
                bail!("no index data for {key}");
            }
            continue;
        };
        let sky = build_skyline(&state_.features, &cfg)?;
        for (k, level) in sky.levels.iter().enumerate() {
            for p in level {
                rows.push((c.clone(), p.user.clone(), k + 1, p.coords.clone()));
            }
        }
    }
    // Level 1 first across crowds.
    rows.sort_by(|a, b| (a.2, &a.0, &a.1).cmp(&(b.2, &b.0, &b.1)));
    match out.format {
        Format::Lines => {
            for (c, u, level, coords) in &rows {
                let coords: BTreeMap<&str, f64> = names
                    .iter()
                    .map(String::as_str)
                    .zip(coords.iter().copied())
                    .collect();
                out.line(&json!({"crowd": c, "topic": topic, "user": u, "level": level, "coords": coords}))?;
            }
            Ok(())
        }
        Format::Table => {
            let mut headers = vec!["level", "user"];
            headers.extend(names.iter().map(String::as_str));
            let rows: Vec<Vec<String>> = rows
                .iter()
                .map(|(_, u, level, coords)| {
                    let mut r = vec![level.to_string(), u.to_string()];
                    r.extend(coords.iter().map(|&x| f3(x)));
                    r
                })
                .collect();
            out.table(&headers, &rows)
        }
    }
}

fn params_with(state: &State, weights: Option<&str>) -> Result<RouteParams> {
    let mut params = state.cfg.route_params()?;
    if let Some(w) = weights {
        params.weights = w.parse()?;
    }
    Ok(params)
}

fn cmd_summarize(
    state: &State,
    topic: &str,
    weights: Option<&str>,
    now: Option<Timestamp>,
    out: &mut Out,
) -> Result<()> {
    let topic = state.topic(topic)?;
    let index = state.load_index()?;
    let now = state.now_for(now, &index)?;
    let params = params_with(state, weights)?;
    let crowds = crowd_candidates(&index, &state.policies, &topic, &params, now)?;
    match out.format {
        Format::Lines => {
            for c in &crowds {
                let s = &c.summary;
                out.line(&json!({
                    "crowd": c.crowd,
                    "topic": topic,
                    "qualification": s.qualification,
                    "interest": s.interest,
                    "responsiveness": s.responsiveness,
                    "representatives": s.representative_count,
                    "level_sizes": c.skyline.level_sizes(),
                    "score": c.score,
                    "weights": [params.weights.qualification(), params.weights.interest(), params.weights.responsiveness()],
                }))?;
            }
            Ok(())
        }
        Format::Table => {
            let rows: Vec<Vec<String>> = crowds
                .iter()
                .map(|c| {
                    let s = &c.summary;
                    vec![
                        c.crowd.to_string(),
                        f3(s.qualification),
                        f3(s.interest),
                        f3(s.responsiveness),
                        s.representative_count.to_string(),
                        f3(c.score),
                    ]
                })
                .collect();
            out.table(
                &[
                    "crowd",
                    "qualification",
                    "interest",
                    "responsiveness",
                    "reps",
                    "score",
                ],
                &rows,
            )
        }
    }
}

struct RouteArgs<'a> {
    question: &'a str,
    topic: &'a str,
    budget: usize,
    weights: Option<&'a str>,
    question_id: Option<&'a str>,
}

fn cmd_route(
    state: &State,
    args: RouteArgs,
    now: Option<Timestamp>,
    out: &mut Out,
    err: &mut dyn Write,
) -> Result<()> {
    let topic = state.topic(args.topic)?;
    let mut index = state.load_index()?;
    let plans = state.plans()?;
    let now = state.now_for(now, &index)?;
    let known: BTreeSet<&str> = plans.iter().map(|a| a.question_id.as_str()).collect();
    let question_id = match args.question_id {
        Some(id) if known.contains(id) => bail!("question id {id} was already routed"),
        Some(id) => id.to_string(),
        None => (known.len() + 1..)
            .map(|n| format!("q{n:05}"))
            .find(|id| !known.contains(id.as_str()))
            .expect("unbounded"),
    };
    let task = QuestionTask {
        question_id,
        text: args.question.to_string(),
        topic,
        budget: args.budget,
    };
    let params = params_with(state, args.weights)?;
    let plan = route(&task, &index, &state.policies, &params, now)?;
    issue(&plan, &mut index, now);
    append_jsonl(&state.plans_path(), &plan.asks)?;
    state.save_topics(
        &index,
        &plan
            .asks
            .iter()
            .map(|a| TopicKey::new(a.user.crowd.clone(), a.topic.clone()))
            .collect::<Vec<_>>(),
    )?;

    let alloc: Vec<String> = plan
        .allocations
        .iter()
        .map(|(c, n)| format!("{c}={n}"))
        .collect();
    writeln!(
        err,
        "{}: {:?} split {}, shortfall {}",
        plan.question_id,
        plan.mode,
        alloc.join(" "),
        plan.total_shortfall()
    )?;
    match out.format {
        Format::Lines => plan.asks.iter().try_for_each(|a| out.line(a)),
        Format::Table => {
            let rows: Vec<Vec<String>> = plan
                .asks
                .iter()
                .map(|a| {
                    vec![
                        a.question_id.clone(),
                        a.user.to_string(),
                        a.level.to_string(),
                        a.message.clone(),
                    ]
                })
                .collect();
            out.table(&["question", "user", "level", "message"], &rows)
        }
    }
}

fn cmd_feedback(state: &State, fb: FeedbackEvent, out: &mut Out) -> Result<()> {
    let mut index = state.load_index()?;
    let topic = index
        .asks_for(&fb.question_id)
        .first()
        .map(|a| a.topic.clone())
        .ok_or_else(|| anyhow!("unknown question {}", fb.question_id))?;
    let outcome = apply_feedback(&fb, &mut index, fb.answered_at)?;
    if !outcome.duplicate {
        append_jsonl(&state.feedback_path(), std::slice::from_ref(&fb))?;
        state.save_topics(&index, [&TopicKey::new(fb.responder.crowd.clone(), topic)])?;
    }
    let record = json!({
        "question_id": fb.question_id,
        "responder": fb.responder,
        "answered_at": fb.answered_at,
        "solicited": outcome.solicited,
        "duplicate": outcome.duplicate,
        "latency_hours": outcome.latency_hours,
    });
    match out.format {
        Format::Lines => out.line(&record),
        Format::Table => out.table(
            &[
                "question",
                "responder",
                "solicited",
                "duplicate",
                "latency_h",
            ],
            &[vec![
                fb.question_id.clone(),
                fb.responder.to_string(),
                outcome.solicited.to_string(),
                outcome.duplicate.to_string(),
                outcome.latency_hours.map_or("-".into(), f3),
            ]],
        ),
    }
}

fn cmd_simulate(state: &State, path: &Path, out: &mut Out) -> Result<()> {
    let cfg = &state.cfg.simulator;
    let events = generate(cfg)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut w = io::BufWriter::new(file);
    write_event_log(&events, &mut w)?;
    w.flush()?;
    let users = Population::build(cfg).users.len();
    match out.format {
        Format::Lines => out.line(&json!({
            "events": events.len(),
            "users": users,
            "seed": cfg.seed,
            "out": path.display().to_string(),
        })),
        Format::Table => out.table(
            &["events", "users", "seed", "out"],
            &[vec![
                events.len().to_string(),
                users.to_string(),
                cfg.seed.to_string(),
                path.display().to_string(),
            ]],
        ),
    }
}

fn cmd_respond(state: &State, out: &mut Out) -> Result<()> {
    let plans = state.plans()?;
    let answered: BTreeSet<String> = state
        .feedback()?
        .into_iter()
        .map(|f| f.question_id)
        .collect();
    let pending: Vec<PlannedAsk> = plans
        .into_iter()
        .filter(|a| !answered.contains(&a.question_id))
        .collect();
    let cfg = &state.cfg.simulator;
    let population = Population::build(cfg);
    let feedback = respond(&pending, &population, cfg);
    if !feedback.is_empty() {
        let mut index = state.load_index()?;
        let mut touched = Vec::new();
        for fb in &feedback {
            apply_feedback(fb, &mut index, fb.answered_at)?;
            let topic = index.asks_for(&fb.question_id)[0].topic.clone();
            touched.push(TopicKey::new(fb.responder.crowd.clone(), topic));
        }
        append_jsonl(&state.feedback_path(), &feedback)?;
        state.save_topics(&index, &touched)?;
    }
    match out.format {
        Format::Lines => feedback.iter().try_for_each(|f| out.line(f)),
        Format::Table => {
            let rows: Vec<Vec<String>> = feedback
                .iter()
                .map(|f| {
                    vec![
                        f.question_id.clone(),
                        f.responder.to_string(),
                        f.answered_at.to_string(),
                        f.correct.map_or("-".into(), |c| c.to_string()),
                    ]
                })
                .collect();
            out.table(&["question", "responder", "answered_at", "correct"], &rows)
        }
    }
}

fn write_report(report: &ComparisonReport, out: &mut Out) -> Result<()> {
    match out.format {
        Format::Lines => report.rows.iter().try_for_each(|r| out.line(r)),
        Format::Table => {
            write!(out.w, "{}", report.render_table())?;
            Ok(())
        }
    }
}

fn cmd_evaluate(
    plan_log: &Path,
    feedback_log: &Path,
    baseline: Option<(&Path, &Path)>,
    json_out: Option<&Path>,
    out: &mut Out,
) -> Result<()> {
    if !plan_log.exists() {
        bail!("plan log {} does not exist", plan_log.display());
    }
    let run = RunLog {
        label: "routing".into(),
        asks: read_jsonl(plan_log)?,
        feedback: read_jsonl(feedback_log)?,
    };
    let report = match baseline {
        Some((p, f)) => evaluate(
            &run,
            &RunLog {
                label: "baseline".into(),
                asks: read_jsonl(p)?,
                feedback: read_jsonl(f)?,
            },
        ),
        None => ComparisonReport {
            rows: run_summary(&run),
        },
    };
    if let Some(path) = json_out {
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    write_report(&report, out)
}

fn cmd_report(state: &State, now: Option<Timestamp>, out: &mut Out) -> Result<()> {
    let snaps = read_snapshots(&state.snapshot_dir())?;
    let run = RunLog {
        label: "routing".into(),
        asks: state.plans()?,
        feedback: state.feedback()?,
    };
    let mut crowd_rows = Vec::new();
    if !snaps.is_empty() {
        let index = state.load_index()?;
        let now = state.now_for(now, &index)?;
        // Reporting never refuses on staleness.
        let mut params = state.cfg.route_params()?;
        params.router.staleness_hours = f64::INFINITY;
        let topics: BTreeSet<Topic> = index.topic_keys().map(|k| k.topic.clone()).collect();
        for topic in topics {
            for c in crowd_candidates(&index, &state.policies, &topic, &params, now)? {
                crowd_rows.push((
                    topic.clone(),
                    c.crowd,
                    c.skyline.level_sizes(),
                    c.skyline.pruned.len(),
                    c.score,
                ));
            }
        }
    }
    let grid = ComparisonReport {
        rows: run_summary(&run),
    };
    let questions: BTreeSet<&str> = run.asks.iter().map(|a| a.question_id.as_str()).collect();
    match out.format {
        Format::Lines => {
            for (topic, crowd, sizes, pruned, score) in &crowd_rows {
                out.line(&json!({
                    "record": "crowd",
                    "topic": topic,
                    "crowd": crowd,
                    "level_sizes": sizes,
                    "pruned": pruned,
                    "score": score,
                }))?;
            }
            if !run.asks.is_empty() {
                out.line(&json!({
                    "record": "plans",
                    "questions": questions.len(),
                    "asks": run.asks.len(),
                    "feedback": run.feedback.len(),
                }))?;
            }
            for r in &grid.rows {
                let mut v = serde_json::to_value(r)?;
                v["record"] = json!("grid");
                out.line(&v)?;
            }
            Ok(())
        }
        Format::Table => {
            if crowd_rows.is_empty() && run.asks.is_empty() {
                writeln!(out.w, "(empty)")?;
                return Ok(());
            }
            if !crowd_rows.is_empty() {
                let rows: Vec<Vec<String>> = crowd_rows
                    .iter()
                    .map(|(t, c, sizes, pruned, score)| {
                        let sizes: Vec<String> = sizes.iter().map(usize::to_string).collect();
                        vec![
                            t.to_string(),
                            c.to_string(),
                            sizes.join("/"),
                            pruned.to_string(),
                            f3(*score),
                        ]
                    })
                    .collect();
                out.table(&["topic", "crowd", "levels", "pruned", "score"], &rows)?;
            }
            if !run.asks.is_empty() {
                writeln!(
                    out.w,
                    "\n{} questions, {} asks, {} answers\n",
                    questions.len(),
                    run.asks.len(),
                    run.feedback.len()
                )?;
                write!(out.w, "{}", grid.render_table())?;
            }
            Ok(())
        }
    }
}

fn dispatch(cli: &Cli, out: &mut Out, err: &mut dyn Write) -> Result<()> {
    if let Command::Evaluate {
        plan_log,
        feedback_log,
        baseline_plan_log,
        baseline_feedback_log,
        out: json_out,
    } = &cli.command
    {
        let baseline = baseline_plan_log
            .as_deref()
            .zip(baseline_feedback_log.as_deref());
        return cmd_evaluate(plan_log, feedback_log, baseline, json_out.as_deref(), out);
    }
    let state = State::open(cli)?;
    match &cli.command {
        Command::Ingest { events } => cmd_ingest(&state, events, out),
        Command::Index { snapshot_dir } => cmd_index(&state, snapshot_dir.as_deref(), cli.now, out),
        Command::Skyline {
            crowd,
            topic,
            dims,
            levels,
        } => cmd_skyline(&state, crowd.as_deref(), topic, *dims, *levels, out),
        Command::Summarize { topic, weights } => {
            cmd_summarize(&state, topic, weights.as_deref(), cli.now, out)
        }
        Command::Route {
            question,
            topic,
            budget,
            weights,
            question_id,
        } => cmd_route(
            &state,
            RouteArgs {
                question,
                topic,
                budget: *budget,
                weights: weights.as_deref(),
                question_id: question_id.as_deref(),
            },
            cli.now,
            out,
            err,
        ),
        Command::Feedback {
            question_id,
            responder,
            at,
            correct,
        } => {
            let responder: UserId = responder.parse()?;
            cmd_feedback(
                &state,
                FeedbackEvent {
                    question_id: question_id.clone(),
                    responder,
                    answered_at: *at,
                    correct: *correct,
                },
                out,
            )
        }
        Command::Simulate { out: path } => cmd_simulate(&state, path, out),
        Command::Respond => cmd_respond(&state, out),
        Command::Evaluate { .. } => unreachable!("handled above"),
        Command::Report => cmd_report(&state, cli.now, out),
    }
}

/// Execute a parsed command line. Failures come back as errors.
pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match cli.jobs {
        Some(0) => bail!("--jobs must be at least 1"),
        Some(n) => {
            // Terminal handles are not Send; buffer inside the pool.
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            let (mut o, mut e) = (Vec::new(), Vec::new());
            let result = pool.install(|| {
                let mut out = Out {
                    w: &mut o,
                    format: cli.format,
                };
                dispatch(cli, &mut out, &mut e)
            });
            stdout.write_all(&o)?;
            stderr.write_all(&e)?;
            result
        }
        None => dispatch(
            cli,
            &mut Out {
                w: stdout,
                format: cli.format,
            },
            stderr,
        ),
    }
}

/// Parse `args` and run. Returns the process exit code: 0 on success, 2 on
/// a usage error, 1 on any other failure (after a one-line diagnostic).
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return e.exit_code();
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(()) => 0,
        // A reader that closed early (`| head`) is not a failure.
        Err(e)
            if e.chain().any(|c| {
                c.downcast_ref::<io::Error>()
                    .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
            }) =>
        {
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", format!("{e:#}").replace('\n', " "));
            1
        }
    }
}
