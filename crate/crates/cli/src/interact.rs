//! Terminal session: the user plays the explainee.

use std::io::{BufRead, Write};
use std::path::Path;

use explainer_core::decision_process::QuestionType;
use explainer_core::{AgentTurn, KnowledgeGraph, Polarity, RawFeedback, Session, Settings};

const HELP: &str = "feedback: + (got it), - (lost), ?p <id> [+|-] (yes/no question), \
?o <id> [+|-] (open question), empty line (nothing); :pm, :kb, :help";

enum Input {
    Feedback(RawFeedback),
    Command(&'static str),
    Invalid(String),
}

/// Typing is not observable here; zero time and deletions keep the typing
/// signal neutral for every question.
fn question(kind: QuestionType, rest: &str, graph: &KnowledgeGraph) -> Input {
    let mut parts = rest.split_whitespace();
    let Some(id) = parts.next() else {
        return Input::Invalid("a question needs a triple id".into());
    };
    if graph.triple(id).is_none() {
        return Input::Invalid(format!("unknown triple `{id}` (see :kb)"));
    }
    let polarity = match parts.next() {
        None | Some("-") => Polarity::Negative,
        Some("+") => Polarity::Positive,
        Some(other) => return Input::Invalid(format!("unexpected `{other}`")),
    };
    Input::Feedback(RawFeedback::question(kind, id, polarity, 0.0, 0))
}

fn parse(line: &str, graph: &KnowledgeGraph) -> Input {
    let line = line.trim();
    match line {
        "" => Input::Feedback(RawFeedback::none()),
        "+" => Input::Feedback(RawFeedback::positive()),
        "-" => Input::Feedback(RawFeedback::negative()),
        ":pm" => Input::Command("pm"),
        ":kb" => Input::Command("kb"),
        ":help" | "?" => Input::Command("help"),
        _ => {
            if let Some(rest) = line.strip_prefix("?p ") {
                question(QuestionType::Polar, rest, graph)
            } else if let Some(rest) = line.strip_prefix("?o ") {
                question(QuestionType::Open, rest, graph)
            } else {
                Input::Invalid(format!("cannot read `{line}`"))
            }
        }
    }
}

fn show_turn(out: &mut impl Write, turn: &AgentTurn) -> std::io::Result<()> {
    for (plan, text) in turn.plans.iter().zip(&turn.utterances) {
        writeln!(out, "[{}] {}/{}: {}", turn.cycle, plan.action.as_str(), plan.mv.as_str(), text)?;
    }
    Ok(())
}

fn show_kb(out: &mut impl Write, session: &Session) -> std::io::Result<()> {
    let block = session.current_block().unwrap_or("-");
    writeln!(out, "block: {block}")?;
    for t in session.graph().triples() {
        let lou = t.lou.map_or("  -  ".to_string(), |l| format!("{l:.3}"));
        let cud = if session.cud().contains(&t.id) { " *" } else { "" };
        writeln!(out, "  {lou}  {}{cud}", t.id)?;
    }
    Ok(())
}

/// Runs the session until it ends or input runs out, then saves the
/// transcript.
pub fn run(
    graph: KnowledgeGraph,
    settings: Settings,
    seed: u64,
    input: impl BufRead,
    mut out: impl Write,
    transcript: &Path,
) -> Result<(), String> {
    let mut session = Session::new(graph, settings, seed).map_err(|e| e.to_string())?;
    let io = |e: std::io::Error| e.to_string();
    writeln!(out, "{HELP}").map_err(io)?;
    let mut lines = input.lines();
    let mut feedback = RawFeedback::none();
    while !session.is_done() {
        let turn = session.step(&feedback).map_err(|e| e.to_string())?;
        show_turn(&mut out, &turn).map_err(io)?;
        if session.is_done() {
            break;
        }
        feedback = loop {
            write!(out, "> ").map_err(io)?;
            out.flush().map_err(io)?;
            let Some(line) = lines.next() else {
                return save(&session, &mut out, transcript);
            };
            match parse(&line.map_err(io)?, session.graph()) {
                Input::Feedback(fb) => break fb,
                Input::Command("pm") => {
                    let pm = session.partner().snapshot();
                    writeln!(out, "E {:.3}  L {:.3}  A {:.3}  C {:.3}", pm.e, pm.l, pm.a, pm.c).map_err(io)?;
                }
                Input::Command("kb") => show_kb(&mut out, &session).map_err(io)?,
                Input::Command(_) => writeln!(out, "{HELP}").map_err(io)?,
                Input::Invalid(msg) => writeln!(out, "{msg}").map_err(io)?,
            }
        };
    }
    let length = session.interaction_length().map_err(|e| e.to_string())?;
    let how = if session.is_capped() { "stopped at the cycle cap" } else { "explanation complete" };
    writeln!(out, "{how} after {length} cycles").map_err(io)?;
    save(&session, &mut out, transcript)
}

fn save(session: &Session, out: &mut impl Write, path: &Path) -> Result<(), String> {
    let file = std::fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    session
        .write_transcript(std::io::BufWriter::new(file))
        .map_err(|e| format!("{}: {e}", path.display()))?;
    writeln!(out, "\ntranscript saved to {}", path.display()).map_err(|e| e.to_string())
}
