//! Flag possibly incomplete and possibly ambiguous questions and place
//! datasets in categories C1..C4.

use qtransducer::characterize::{flag_interaction, profile_dataset, render_profile_table, DEFAULT_TAU};
use qtransducer::demo::child_height;
use qtransducer::evaluation::{ingest_str, Adapter};

const SHARC: &str = r#"[
 {"utterance_id":"u1","snippet":"Applicants must be resident.","scenario":"","question":"Can I apply?",
  "history":[{"follow_up_question":"Are you a resident?","follow_up_answer":"Yes"}],"answer":"Yes"},
 {"utterance_id":"u2","snippet":"Open to all.","scenario":"","question":"Can I apply?","history":[],"answer":"Yes"}
]"#;

const OPEN_QA: &str = r#"{"question":"who wrote hamlet?","answers":["Shakespeare"]}
{"question":"capital of france?","answers":["Paris"]}
"#;

fn main() -> anyhow::Result<()> {
    for flag in flag_interaction(&child_height()) {
        println!("child-height: turn {} qid {} {:?}", flag.turn_index, flag.qid, flag.kind);
    }

    let sharc = ingest_str(SHARC, Adapter::Sharc, "sharc", None)?;
    let open = ingest_str(OPEN_QA, Adapter::Generic, "open", None)?;
    let math = vec![child_height()];
    let profiles = vec![
        profile_dataset("sharc", &sharc, DEFAULT_TAU)?,
        profile_dataset("open", &open, DEFAULT_TAU)?,
        profile_dataset("math", &math, DEFAULT_TAU)?,
    ];
    print!("{}", render_profile_table(&profiles));
    Ok(())
}
