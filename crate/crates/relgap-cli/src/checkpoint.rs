//! Learner checkpoints in the same plain-text matrix style as the MDP file:
//! a `learner` header with the hyperparameters, then the value table and its
//! bootstrap copy row by row.

use ndarray::Array2;
use relgap::soft_rl::SoftLearnerState;

use crate::CliError;

pub fn write_learner(learner: &SoftLearnerState) -> String {
    let mut out = format!(
        "learner {} {} {} {} {} {}\n",
        learner.n_states(),
        learner.n_actions(),
        learner.discount(),
        learner.temperature,
        learner.learning_rate,
        learner.polyak
    );
    for (label, table) in [
        ("qtable", &learner.q_table),
        ("target_qtable", &learner.target_q_table),
    ] {
        out.push_str(label);
        out.push('\n');
        for s in 0..learner.n_states() {
            let row: Vec<String> = (0..learner.n_actions())
                .map(|a| table[[s, a]].to_string())
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn parse_learner(text: &str) -> Result<SoftLearnerState, CliError> {
    let bad = |line: usize, msg: &str| CliError::usage(format!("checkpoint line {line}: {msg}"));
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (line, header) = lines.next().ok_or_else(|| bad(1, "empty checkpoint"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 7 || toks[0] != "learner" {
        return Err(bad(
            line,
            "expected 'learner <S> <A> <gamma> <alpha> <lr> <polyak>'",
        ));
    }
    let parse_f = |tok: &str, line: usize| -> Result<f64, CliError> {
        tok.parse::<f64>()
            .map_err(|_| bad(line, &format!("cannot parse '{tok}'")))
    };
    let n_states: usize = toks[1].parse().map_err(|_| bad(line, "bad state count"))?;
    let n_actions: usize = toks[2].parse().map_err(|_| bad(line, "bad action count"))?;
    let discount = parse_f(toks[3], line)?;
    let temperature = parse_f(toks[4], line)?;
    let learning_rate = parse_f(toks[5], line)?;
    let polyak = parse_f(toks[6], line)?;

    let mut tables = Vec::new();
    for expect in ["qtable", "target_qtable"] {
        let (line, label) = lines.next().ok_or_else(|| bad(0, "truncated checkpoint"))?;
        if label != expect {
            return Err(bad(line, &format!("expected '{expect}' section")));
        }
        let mut table = Array2::zeros((n_states, n_actions));
        for s in 0..n_states {
            let (line, row) = lines.next().ok_or_else(|| bad(0, "truncated table"))?;
            let vals: Vec<&str> = row.split_whitespace().collect();
            if vals.len() != n_actions {
                return Err(bad(line, &format!("expected {n_actions} values")));
            }
            for (a, tok) in vals.iter().enumerate() {
                table[[s, a]] = parse_f(tok, line)?;
            }
        }
        tables.push(table);
    }
    let target = tables.pop().unwrap();
    let q = tables.pop().unwrap();
    SoftLearnerState::from_parts(q, target, discount, temperature, learning_rate, polyak)
        .map_err(|e| CliError::usage(format!("invalid checkpoint: {e}")))
}
