//! Validate a small mixed event log and show what ingestion keeps.
//!
//! cargo run --example ingest_events

use std::io::Cursor;

use crowdstar::event_model::{CrowdId, CrowdPolicy, Topic};
use crowdstar::ingestion::{ingest, PolicySet};

const LOG: &str = r#"{"event_id":"t1","crowd":"tw","author":"ana","timestamp":1700000000,"kind":"post","text":"Sunrise from the ridge #hiking"}
{"event_id":"t2","crowd":"tw","author":"bo","timestamp":1700000300,"kind":"post","conversational":true,"addressed_to":"ana","text":"@ana which trail? #hiking"}
{"event_id":"q1","crowd":"qa","author":"cy","topics":["travel"],"timestamp":1700000600,"kind":"question"}
{"event_id":"a1","crowd":"qa","author":"di","topics":["travel"],"timestamp":1700004200,"kind":"answer","in_reply_to":"q1","upvotes":3}
{"event_id":"a1","crowd":"qa","author":"di","topics":["travel"],"timestamp":1700004200,"kind":"answer","in_reply_to":"q1","upvotes":3}
{"event_id":"a2","crowd":"qa","author":"ed","topics":["travel"],"timestamp":1700005000,"kind":"answer"}
{"event_id":"x1","crowd":"forum","author":"fi","timestamp":1700006000,"kind":"post"}
not json at all

"#;

fn main() -> anyhow::Result<()> {
    let tw = CrowdId::new("tw")?;
    let qa = CrowdId::new("qa")?;
    let policies: PolicySet = [
        (tw.clone(), CrowdPolicy::twitter_like(tw)),
        (qa.clone(), CrowdPolicy::quora_like(qa)),
    ]
    .into_iter()
    .collect();
    let topics = ["hiking", "travel", "food"]
        .map(Topic::new)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let (events, report) = ingest(Cursor::new(LOG), &policies, &topics)?;
    println!("accepted {} rejected {}", report.accepted, report.rejected);
    for (reason, n) in &report.reject_reasons {
        println!("  {reason}: {n}");
    }
    println!("time range {:?}", report.time_range);
    for e in &events {
        let topics: Vec<&str> = e.event.topics.iter().map(Topic::as_str).collect();
        let c = e.class;
        println!(
            "{:<3} {:<7} {:<9} topics={topics:?} post={} answer={} question={} weight={}",
            e.event.event_id,
            e.event.author.to_string(),
            format!("{:?}", e.event.kind),
            c.is_post,
            c.is_answer,
            c.is_question,
            e.weight
        );
    }
    Ok(())
}
