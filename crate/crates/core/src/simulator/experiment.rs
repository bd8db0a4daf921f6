use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;

use rand::seq::{IndexedRandom, IteratorRandom};
use serde::{Deserialize, Serialize};

use super::{respond, Population, SimConfig, SimError};
use crate::event_model::{Timestamp, UserId, SECONDS_PER_DAY, SECONDS_PER_HOUR};
use crate::feature_index::{FeatureIndex, IndexConfig, TopicKey};
use crate::ingestion::{ingest, write_event_log, ClassifiedEvent, IngestReport, PolicySet};
use crate::router::{
    apply_feedback, compose_ask, route, FeedbackEvent, PlannedAsk, QuestionTask, RouteParams,
    RouterError, RoutingPlan,
};

/// A generated population and its ingested activity log.
#[derive(Debug, Clone)]
pub struct World {
    pub config: SimConfig,
    pub population: Population,
    pub policies: PolicySet,
    pub events: Vec<ClassifiedEvent>,
    pub report: IngestReport,
}

impl World {
    /// Generate the log and pass it through ingestion, exactly as a log
    /// file would be.
    pub fn build(config: SimConfig) -> Result<Self, SimError> {
        let raw = super::generate(&config)?;
        let mut buf = Vec::new();
        write_event_log(&raw, &mut buf).expect("in-memory write");
        let policies = config.policies();
        let (events, report) = ingest(&buf[..], &policies, &config.topics)?;
        Ok(Self {
            population: Population::build(&config),
            config,
            policies,
            events,
            report,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Skyline routing with budget split and activity gate.
    Routing,
    /// Budget drawn uniformly from everyone active on the topic.
    UniformRandom,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Routing => "routing",
            Strategy::UniformRandom => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub questions: usize,
    pub budget: usize,
    /// Days of log before the first question.
    pub warmup_days: i64,
    pub strategy: Strategy,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            questions: 100,
            budget: 2,
            warmup_days: 30,
            strategy: Strategy::Routing,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub strategy: Strategy,
    pub plans: Vec<RoutingPlan>,
    pub asks: Vec<PlannedAsk>,
    pub feedback: Vec<FeedbackEvent>,
    /// Asks that could not be placed for lack of eligible candidates.
    pub shortfall: usize,
}

impl ExperimentRun {
    pub fn log(&self) -> RunLog {
        RunLog {
            label: self.strategy.label().to_string(),
            asks: self.asks.clone(),
            feedback: self.feedback.clone(),
        }
    }
}

fn uniform_asks(
    task: &QuestionTask,
    index: &FeatureIndex,
    world: &World,
    now: Timestamp,
) -> Result<Vec<PlannedAsk>, RouterError> {
    let mut candidates: Vec<&UserId> = Vec::new();
    for crowd in world.policies.keys() {
        if let Some(state) = index.topic(&TopicKey::new(crowd.clone(), task.topic.clone())) {
            candidates.extend(state.features.keys());
        }
    }
    let mut rng = world.config.rng(&format!("baseline/{}", task.question_id));
    let chosen = candidates
        .into_iter()
        .choose_multiple(&mut rng, task.budget);
    chosen
        .into_iter()
        .map(|user| {
            Ok(PlannedAsk {
                question_id: task.question_id.clone(),
                user: user.clone(),
                topic: task.topic.clone(),
                level: 0,
                message: compose_ask(task, user, &world.policies[&user.crowd])?,
                issued_at: now,
            })
        })
        .collect()
}

/// Feeds log events and periodic ticks into the index as the clock moves.
struct Clock<'w> {
    world: &'w World,
    index: FeatureIndex,
    cursor: usize,
    next_tick: Timestamp,
    pending: BinaryHeap<Reverse<(Timestamp, usize)>>,
    feedback: Vec<FeedbackEvent>,
}

impl Clock<'_> {
    fn add_events_until(&mut self, t: Timestamp) {
        let events = &self.world.events;
        let end = self.cursor + events[self.cursor..].partition_point(|e| e.event.timestamp <= t);
        self.index
            .add_events(events[self.cursor..end].iter().cloned());
        self.cursor = end;
    }

    fn advance_to(&mut self, t: Timestamp) -> Result<(), SimError> {
        loop {
            let fb_at = self.pending.peek().map(|Reverse((at, _))| *at);
            match fb_at {
                Some(at) if at <= t && at < self.next_tick => {
                    let Reverse((_, i)) = self.pending.pop().expect("peeked");
                    apply_feedback(&self.feedback[i], &mut self.index, at)?;
                }
                _ if self.next_tick <= t => {
                    let tick = self.next_tick;
                    self.add_events_until(tick);
                    self.index.daily_tick(tick);
                    self.next_tick += SECONDS_PER_DAY;
                }
                _ => return Ok(()),
            }
        }
    }
}

/// Ask `exp.questions` questions spread evenly over the horizon after the
/// warm-up, refreshing knowledge daily and folding answers back in as
/// they arrive.
pub fn run_experiment(
    world: &World,
    exp: &ExperimentConfig,
    params: &RouteParams,
    index_cfg: IndexConfig,
) -> Result<ExperimentRun, SimError> {
    let cfg = &world.config;
    let t0 = cfg.start + exp.warmup_days * SECONDS_PER_DAY;
    if exp.warmup_days < 0 || t0 >= cfg.end() {
        return Err(SimError::Config(
            "warmup must end before the horizon".into(),
        ));
    }
    let spacing = ((cfg.end() - t0) / exp.questions.max(1) as i64).max(1);

    let mut clock = Clock {
        world,
        index: FeatureIndex::new(index_cfg)?,
        cursor: 0,
        next_tick: t0 + SECONDS_PER_DAY,
        pending: BinaryHeap::new(),
        feedback: Vec::new(),
    };
    clock.add_events_until(t0);
    clock.index.rebuild(t0);

    let mut qrng = cfg.rng("questions");
    let mut run = ExperimentRun {
        strategy: exp.strategy,
        plans: Vec::new(),
        asks: Vec::new(),
        feedback: Vec::new(),
        shortfall: 0,
    };
    for i in 0..exp.questions {
        let now = t0 + i as i64 * spacing;
        clock.advance_to(now)?;
        let topic = cfg.topics.choose(&mut qrng).expect("topics").clone();
        if exp.budget == 0 {
            continue;
        }
        let task = QuestionTask {
            question_id: format!("sq{i:05}"),
            text: format!("What should a newcomer know about {topic}?"),
            topic,
            budget: exp.budget,
        };
        let asks = match exp.strategy {
            Strategy::Routing => match route(&task, &clock.index, &world.policies, params, now) {
                Ok(plan) => {
                    run.shortfall += plan.total_shortfall();
                    let asks = plan.asks.clone();
                    run.plans.push(plan);
                    asks
                }
                Err(RouterError::NoViableCrowd) => {
                    run.shortfall += task.budget;
                    Vec::new()
                }
                Err(e) => return Err(e.into()),
            },
            Strategy::UniformRandom => {
                let asks = uniform_asks(&task, &clock.index, world, now)?;
                run.shortfall += task.budget - asks.len();
                asks
            }
        };
        for ask in &asks {
            clock.index.record_ask(ask.record(), now);
        }
        for fb in respond(&asks, &world.population, cfg) {
            clock
                .pending
                .push(Reverse((fb.answered_at, clock.feedback.len())));
            clock.feedback.push(fb);
        }
        run.asks.extend(asks);
    }
    run.feedback = clock.feedback;
    run.feedback.sort_by(|a, b| {
        (a.answered_at, &a.question_id, &a.responder).cmp(&(
            b.answered_at,
            &b.question_id,
            &b.responder,
        ))
    });
    Ok(run)
}

/// Asks and answers of one run, as stored in the plan and feedback logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub label: String,
    pub asks: Vec<PlannedAsk>,
    pub feedback: Vec<FeedbackEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AnswerRate,
    MeanLatency,
    CorrectRate,
}

/// One (strategy, crowd) line of the comparison grid. `crowd` is `all`
/// for the totals line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    pub crowd: String,
    pub questions: usize,
    pub asked: usize,
    pub answered: usize,
    /// Answered asks over asks.
    pub answer_rate: Option<f64>,
    /// Share of questions with at least one answer, asked or not.
    pub questions_answered_rate: Option<f64>,
    pub mean_latency_hours: Option<f64>,
    pub correct_rate: Option<f64>,
    pub unsolicited: usize,
}

impl ReportRow {
    pub fn metric(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::AnswerRate => self.answer_rate,
            Metric::MeanLatency => self.mean_latency_hours,
            Metric::CorrectRate => self.correct_rate,
        }
    }
}

#[derive(Default)]
struct Tally {
    questions: BTreeSet<String>,
    answered_questions: BTreeSet<String>,
    asked: usize,
    answered: usize,
    latency: f64,
    judged: usize,
    correct: usize,
    unsolicited: usize,
}

impl Tally {
    fn row(&self, strategy: &str, crowd: &str) -> ReportRow {
        let rate = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
        ReportRow {
            strategy: strategy.to_string(),
            crowd: crowd.to_string(),
            questions: self.questions.len(),
            asked: self.asked,
            answered: self.answered,
            answer_rate: rate(self.answered, self.asked),
            questions_answered_rate: rate(self.answered_questions.len(), self.questions.len()),
            mean_latency_hours: (self.answered > 0).then(|| self.latency / self.answered as f64),
            correct_rate: rate(self.correct, self.judged),
            unsolicited: self.unsolicited,
        }
    }
}

/// Per-crowd rows plus a totals row. A run without asks has no rows.
pub fn run_summary(run: &RunLog) -> Vec<ReportRow> {
    let mut issued: BTreeMap<(&str, &UserId), Timestamp> = BTreeMap::new();
    for a in &run.asks {
        issued
            .entry((a.question_id.as_str(), &a.user))
            .or_insert(a.issued_at);
    }
    let mut crowds: BTreeMap<String, Tally> = BTreeMap::new();
    let mut all = Tally::default();
    for a in &run.asks {
        for t in [
            crowds.entry(a.user.crowd.to_string()).or_default(),
            &mut all,
        ] {
            t.asked += 1;
            t.questions.insert(a.question_id.clone());
        }
    }
    let mut seen = BTreeSet::new();
    for fb in &run.feedback {
        if !seen.insert((fb.question_id.as_str(), &fb.responder)) {
            continue;
        }
        let solicited = issued.get(&(fb.question_id.as_str(), &fb.responder));
        let crowd = crowds.entry(fb.responder.crowd.to_string()).or_default();
        for t in [crowd, &mut all] {
            t.answered_questions.insert(fb.question_id.clone());
            match solicited {
                Some(&at) => {
                    t.answered += 1;
                    t.latency += (fb.answered_at - at) as f64 / SECONDS_PER_HOUR as f64;
                    if let Some(c) = fb.correct {
                        t.judged += 1;
                        t.correct += usize::from(c);
                    }
                }
                None => t.unsolicited += 1,
            }
        }
    }
    if all.asked == 0 {
        return Vec::new();
    }
    let mut rows: Vec<ReportRow> = crowds.iter().map(|(c, t)| t.row(&run.label, c)).collect();
    rows.push(all.row(&run.label, "all"));
    rows
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
}

/// Routing against a baseline run over the same questions.
pub fn evaluate(routing: &RunLog, baseline: &RunLog) -> ComparisonReport {
    let mut rows = run_summary(routing);
    rows.extend(run_summary(baseline));
    ComparisonReport { rows }
}

impl ComparisonReport {
    pub fn row(&self, strategy: &str, crowd: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.crowd == crowd)
    }

    /// `numerator / denominator` for one metric on one crowd line.
    pub fn ratio(
        &self,
        metric: Metric,
        numerator: &str,
        denominator: &str,
        crowd: &str,
    ) -> Option<f64> {
        let n = self.row(numerator, crowd)?.metric(metric)?;
        let d = self.row(denominator, crowd)?.metric(metric)?;
        (d > 0.0).then(|| n / d)
    }

    /// Metric-by-column grid, one column per (crowd, strategy).
    pub fn render_table(&self) -> String {
        if self.rows.is_empty() {
            return "(no asks)\n".to_string();
        }
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.1}%", 100.0 * x));
        let hours = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}h"));
        let lines: Vec<(&str, Box<dyn Fn(&ReportRow) -> String>)> = vec![
            ("questions", Box::new(|r| r.questions.to_string())),
            ("asked", Box::new(|r| r.asked.to_string())),
            ("answered", Box::new(|r| r.answered.to_string())),
            ("responsiveness", Box::new(move |r| pct(r.answer_rate))),
            (
                "questions answered",
                Box::new(move |r| pct(r.questions_answered_rate)),
            ),
            (
                "mean response time",
                Box::new(move |r| hours(r.mean_latency_hours)),
            ),
            ("correct", Box::new(move |r| pct(r.correct_rate))),
            (
                "unsolicited answers",
                Box::new(|r| r.unsolicited.to_string()),
            ),
        ];
        let headers: Vec<String> = self
            .rows
            .iter()
            .map(|r| format!("{}/{}", r.crowd, r.strategy))
            .collect();
        let width = headers.iter().map(String::len).max().unwrap_or(0).max(10);
        let mut out = format!("{:<20}", "metric");
        for h in &headers {
            let _ = write!(out, " {h:>width$}");
        }
        out.push('\n');
        for (name, cell) in &lines {
            let _ = write!(out, "{name:<20}");
            for r in &self.rows {
                let _ = write!(out, " {:>width$}", cell(r));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::{CrowdId, Topic};

    fn ask(q: &str, crowd: &str, h: &str, at: Timestamp) -> PlannedAsk {
        PlannedAsk {
            question_id: q.into(),
            user: UserId::new(CrowdId::new(crowd).unwrap(), h).unwrap(),
            topic: Topic::new("hiking").unwrap(),
            level: 1,
            message: String::new(),
            issued_at: at,
        }
    }

    fn fb(q: &str, crowd: &str, h: &str, at: Timestamp, correct: bool) -> FeedbackEvent {
        FeedbackEvent {
            question_id: q.into(),
            responder: UserId::new(CrowdId::new(crowd).unwrap(), h).unwrap(),
            answered_at: at,
            correct: Some(correct),
        }
    }

    #[test]
    fn summary_counts() {
        let h = SECONDS_PER_HOUR;
        let log = RunLog {
            label: "routing".into(),
            asks: vec![
                ask("q1", "a", "x", 0),
                ask("q1", "b", "y", 0),
                ask("q2", "a", "x", 10 * h),
            ],
            feedback: vec![
                fb("q1", "a", "x", 2 * h, true),
                fb("q1", "a", "x", 3 * h, true),
                fb("q1", "b", "z", 5 * h, false),
                fb("q2", "a", "x", 14 * h, false),
            ],
        };
        let rows = run_summary(&log);
        let all = rows.iter().find(|r| r.crowd == "all").unwrap();
        assert_eq!((all.asked, all.answered, all.unsolicited), (3, 2, 1));
        assert_eq!(all.answer_rate, Some(2.0 / 3.0));
        assert_eq!(all.mean_latency_hours, Some(3.0));
        assert_eq!(all.correct_rate, Some(0.5));
        assert_eq!(all.questions_answered_rate, Some(1.0));
        let b = rows.iter().find(|r| r.crowd == "b").unwrap();
        assert_eq!((b.asked, b.answered, b.unsolicited), (1, 0, 1));
    }

    #[test]
    fn empty_run_has_no_rows() {
        let log = RunLog {
            label: "routing".into(),
            asks: Vec::new(),
            feedback: Vec::new(),
        };
        assert!(run_summary(&log).is_empty());
        let report = evaluate(&log, &log);
        assert!(report.rows.is_empty());
        assert_eq!(report.render_table(), "(no asks)\n");
    }
}
