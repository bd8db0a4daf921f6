mod common;

use std::collections::BTreeSet;

use crowdstar::event_model::{Topic, UserId, SECONDS_PER_HOUR};
use crowdstar::feature_index::{AskRecord, FeatureIndex, IndexConfig, TopicKey};
use crowdstar::router::{
    answer_record, apply_feedback, issue, live_activity_hours, route, FeedbackEvent, QuestionTask,
    RouteParams, RouterError,
};
use proptest::prelude::*;

fn task(id: &str, topic: &str, budget: usize) -> QuestionTask {
    QuestionTask {
        question_id: id.into(),
        text: "Where should I start?".into(),
        topic: Topic::new(topic).unwrap(),
        budget,
    }
}

fn asked(plan: &crowdstar::router::RoutingPlan) -> BTreeSet<UserId> {
    plan.asks.iter().map(|a| a.user.clone()).collect()
}

#[test]
fn plan_fills_the_budget_with_distinct_users() {
    let w = common::world();
    let (index, now) = common::indexed(w);
    for budget in [1, 4, 9] {
        let plan = route(
            &task("q1", "hiking", budget),
            &index,
            &w.policies,
            &RouteParams::default(),
            now,
        )
        .unwrap();
        assert_eq!(plan.allocations.values().sum::<usize>(), budget);
        assert_eq!(plan.asks.len() + plan.total_shortfall(), budget);
        assert_eq!(asked(&plan).len(), plan.asks.len());
        for a in &plan.asks {
            assert_eq!(a.issued_at, now);
            assert!(a.level >= 1);
        }
    }
}

#[test]
fn identical_inputs_give_identical_plans() {
    let w = common::world();
    let (index, now) = common::indexed(w);
    let params = RouteParams::default();
    let a = route(&task("q1", "travel", 6), &index, &w.policies, &params, now).unwrap();
    let b = route(
        &task("q1", "travel", 6),
        &index.clone(),
        &w.policies,
        &params,
        now,
    )
    .unwrap();
    assert_eq!(a, b);

    // Same plan from an index restored from its snapshots.
    let restored = FeatureIndex::from_snapshots(
        IndexConfig::default(),
        index.snapshots(),
        Vec::new(),
        Vec::new(),
    )
    .unwrap();
    let c = route(
        &task("q1", "travel", 6),
        &restored,
        &w.policies,
        &params,
        now,
    )
    .unwrap();
    assert_eq!(a, c);
}

#[test]
fn rerouting_a_question_skips_users_already_asked() {
    let w = common::world();
    let (mut index, now) = common::indexed(w);
    let params = RouteParams::default();
    let first = route(&task("q1", "food", 4), &index, &w.policies, &params, now).unwrap();
    issue(&first, &mut index, now);
    let later = now + 30 * SECONDS_PER_HOUR;
    let second = route(&task("q1", "food", 4), &index, &w.policies, &params, later).unwrap();
    assert!(asked(&first).is_disjoint(&asked(&second)));
}

#[test]
fn stale_index_is_refused() {
    let w = common::world();
    let (index, now) = common::indexed(w);
    let err = route(
        &task("q1", "food", 2),
        &index,
        &w.policies,
        &RouteParams::default(),
        now + 49 * SECONDS_PER_HOUR,
    )
    .unwrap_err();
    assert!(matches!(err, RouterError::StaleIndex { .. }), "{err}");
}

#[test]
fn unknown_topic_has_no_viable_crowd() {
    let w = common::world();
    let (index, now) = common::indexed(w);
    let err = route(
        &task("q1", "chess", 2),
        &index,
        &w.policies,
        &RouteParams::default(),
        now,
    )
    .unwrap_err();
    assert!(matches!(err, RouterError::NoViableCrowd), "{err}");
}

#[test]
fn feedback_paths() {
    let w = common::world();
    let (mut index, now) = common::indexed(w);
    let plan = route(
        &task("q1", "hiking", 3),
        &index,
        &w.policies,
        &RouteParams::default(),
        now,
    )
    .unwrap();
    issue(&plan, &mut index, now);
    let asked_user = plan.asks[0].user.clone();
    let fb = |user: &UserId, at| FeedbackEvent {
        question_id: "q1".into(),
        responder: user.clone(),
        answered_at: at,
        correct: Some(true),
    };

    let early = apply_feedback(&fb(&asked_user, now - 1), &mut index, now).unwrap_err();
    assert!(matches!(early, RouterError::AnswerBeforeAsk { .. }));
    let unknown = FeedbackEvent {
        question_id: "nope".into(),
        ..fb(&asked_user, now)
    };
    assert!(matches!(
        apply_feedback(&unknown, &mut index, now),
        Err(RouterError::UnknownQuestion(_))
    ));

    let at = now + 3 * SECONDS_PER_HOUR;
    let ok = apply_feedback(&fb(&asked_user, at), &mut index, at).unwrap();
    assert!(ok.solicited && !ok.duplicate);
    assert!((ok.latency_hours.unwrap() - 3.0).abs() < 1e-12);
    let again = apply_feedback(&fb(&asked_user, at + 60), &mut index, at + 60).unwrap();
    assert!(again.duplicate);

    // Someone in the same crowd nobody asked.
    let key = TopicKey::new(asked_user.crowd.clone(), plan.topic.clone());
    let bystander = index
        .topic(&key)
        .unwrap()
        .features
        .keys()
        .find(|u| !asked(&plan).contains(*u))
        .unwrap()
        .clone();
    let free = apply_feedback(&fb(&bystander, at), &mut index, at).unwrap();
    assert!(!free.solicited);
    assert_eq!(free.latency_hours, None);
}

#[test]
fn answer_record_uses_the_responders_own_ask() {
    let topic = Topic::new("food").unwrap();
    let u = |h: &str| -> UserId { format!("c:{h}").parse().unwrap() };
    let ask = |h: &str, at| AskRecord {
        question_id: "q".into(),
        user: u(h),
        topic: topic.clone(),
        issued_at: at,
    };
    let (a, b) = (ask("a", 0), ask("b", 7200));
    let fb = FeedbackEvent {
        question_id: "q".into(),
        responder: u("b"),
        answered_at: 9000,
        correct: None,
    };
    let rec = answer_record(&fb, &[&a, &b]).unwrap();
    assert_eq!(rec.latency_hours, Some(0.5));
    assert_eq!(rec.topic, topic);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Users asked at t stay out of every plan on the topic until the gate
    // has elapsed on the simulated clock.
    #[test]
    fn asked_users_are_gated(offset_min in 0i64..(24 * 60), topic in prop::sample::select(vec!["food", "hiking", "travel"])) {
        let w = common::world();
        let (mut index, now) = common::indexed(w);
        let params = RouteParams::default();
        let first = route(&task("q1", topic, 6), &index, &w.policies, &params, now).unwrap();
        issue(&first, &mut index, now);

        let t = now + offset_min * 60;
        let second = route(&task("q2", topic, 40), &index, &w.policies, &params, t).unwrap();
        prop_assert!(asked(&first).is_disjoint(&asked(&second)));

        let gate = now + (params.router.activity_gate_hours * SECONDS_PER_HOUR as f64) as i64;
        for a in &first.asks {
            let key = TopicKey::new(a.user.crowd.clone(), a.topic.clone());
            prop_assert!(live_activity_hours(&index, &key, &a.user, t) < params.router.activity_gate_hours);
            prop_assert!(live_activity_hours(&index, &key, &a.user, gate) >= params.router.activity_gate_hours);
        }
    }
}
