//! Drive the command-line interface in-process against a throwaway state
//! directory: simulate, ingest, index, route, respond, report.
//!
//! cargo run --example cli_pipeline

use crowdstar::cli;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let state = dir.path().to_str().expect("utf-8 temp path").to_string();
    let events = format!("{state}/sim.jsonl");
    let steps: Vec<Vec<&str>> = vec![
        vec!["simulate", "--out", &events],
        vec!["ingest", "--events", &events],
        vec!["--format", "table", "index"],
        vec!["--format", "table", "summarize", "--topic", "hiking"],
        vec![
            "route",
            "--question",
            "Which ridge walk is best in spring?",
            "--topic",
            "hiking",
            "--budget",
            "4",
        ],
        vec!["respond"],
        vec!["--format", "table", "report"],
    ];
    for step in steps {
        println!("$ crowdstar {}", step.join(" "));
        let args = ["crowdstar", "--state-dir", &state].into_iter().chain(step);
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = cli::run(args, &mut out, &mut err);
        print!("{}", String::from_utf8_lossy(&out));
        eprint!("{}", String::from_utf8_lossy(&err));
        if code != 0 {
            anyhow::bail!("step failed with exit code {code}");
        }
    }
    Ok(())
}
