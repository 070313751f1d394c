//! Plain-text, line-oriented file formats for MDPs and policies.
//!
//! ```text
//! # comment
//! mdp <n_states> <n_actions> <gamma>
//! rho <n_states floats>
//! P <s> <a> <n_states floats>    one line per (s, a)
//! R <s> <a> <n_states floats>    one line per (s, a)
//! ```
//!
//! Policies use a `policy <n_states> <n_actions>` header followed by one
//! row of action probabilities per state.

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, TabularPolicy};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_tok<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse::<T>()
        .map_err(|_| parse_err(line, format!("cannot parse {what} from '{tok}'")))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            None
        } else {
            Some((i + 1, toks))
        }
    })
}

fn parse_floats(toks: &[&str], expect: usize, line: usize, what: &str) -> Result<Vec<f64>> {
    if toks.len() != expect {
        return Err(parse_err(
            line,
            format!("{what}: expected {expect} values, found {}", toks.len()),
        ));
    }
    toks.iter()
        .map(|t| parse_tok::<f64>(t, line, what))
        .collect()
}

/// Parses the line-oriented MDP format. Errors carry 1-based line numbers.
pub fn parse_mdp(text: &str) -> Result<TabularMdp> {
    let mut lines = content_lines(text);
    let (line, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected 'mdp' header"))?;
    if header[0] != "mdp" || header.len() != 4 {
        return Err(parse_err(
            line,
            "expected header 'mdp <n_states> <n_actions> <gamma>'",
        ));
    }
    let n_states: usize = parse_tok(header[1], line, "n_states")?;
    let n_actions: usize = parse_tok(header[2], line, "n_actions")?;
    let gamma: f64 = parse_tok(header[3], line, "gamma")?;
    if n_states == 0 || n_actions == 0 {
        return Err(parse_err(line, "n_states and n_actions must be positive"));
    }

    let mut rho: Option<Array1<f64>> = None;
    let mut transition = Array3::from_elem((n_states, n_actions, n_states), f64::NAN);
    let mut reward = Array3::from_elem((n_states, n_actions, n_states), f64::NAN);
    let mut last_line = line;

    for (line, toks) in lines {
        last_line = line;
        match toks[0] {
            "rho" => {
                let vals = parse_floats(&toks[1..], n_states, line, "rho")?;
                rho = Some(Array1::from_vec(vals));
            }
            kind @ ("P" | "R") => {
                if toks.len() != 3 + n_states {
                    return Err(parse_err(
                        line,
                        format!("{kind} line: expected '{kind} <s> <a>' plus {n_states} values"),
                    ));
                }
                let s: usize = parse_tok(toks[1], line, "state index")?;
                let a: usize = parse_tok(toks[2], line, "action index")?;
                if s >= n_states || a >= n_actions {
                    return Err(parse_err(line, format!("index ({s}, {a}) out of range")));
                }
                let vals = parse_floats(&toks[3..], n_states, line, "row values")?;
                let dest = if kind == "P" {
                    &mut transition
                } else {
                    &mut reward
                };
                for (sn, v) in vals.into_iter().enumerate() {
                    dest[[s, a, sn]] = v;
                }
            }
            other => return Err(parse_err(line, format!("unknown record '{other}'"))),
        }
    }

    let rho = rho.ok_or_else(|| parse_err(last_line, "missing 'rho' line"))?;
    for s in 0..n_states {
        for a in 0..n_actions {
            if transition[[s, a, 0]].is_nan() {
                return Err(parse_err(
                    last_line,
                    format!("missing P line for (s={s}, a={a})"),
                ));
            }
            if reward[[s, a, 0]].is_nan() {
                return Err(parse_err(
                    last_line,
                    format!("missing R line for (s={s}, a={a})"),
                ));
            }
        }
    }
    TabularMdp::new(transition, reward, rho, gamma)
        .map_err(|e| parse_err(last_line, format!("invalid mdp: {e}")))
}

pub fn write_mdp(mdp: &TabularMdp) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "mdp {} {} {}\n",
        mdp.n_states(),
        mdp.n_actions(),
        mdp.discount()
    ));
    out.push_str("rho");
    for r in mdp.initial_dist().iter() {
        out.push_str(&format!(" {r}"));
    }
    out.push('\n');
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            out.push_str(&format!("P {s} {a}"));
            for sn in 0..mdp.n_states() {
                out.push_str(&format!(" {}", mdp.transition()[[s, a, sn]]));
            }
            out.push('\n');
        }
    }
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            out.push_str(&format!("R {s} {a}"));
            for sn in 0..mdp.n_states() {
                out.push_str(&format!(" {}", mdp.reward()[[s, a, sn]]));
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_policy(text: &str) -> Result<TabularPolicy> {
    let mut lines = content_lines(text);
    let (line, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected 'policy' header"))?;
    if header[0] != "policy" || header.len() != 3 {
        return Err(parse_err(
            line,
            "expected header 'policy <n_states> <n_actions>'",
        ));
    }
    let n_states: usize = parse_tok(header[1], line, "n_states")?;
    let n_actions: usize = parse_tok(header[2], line, "n_actions")?;
    let mut probs = Array2::zeros((n_states, n_actions));
    let mut row = 0usize;
    let mut last_line = line;
    for (line, toks) in lines {
        last_line = line;
        if row >= n_states {
            return Err(parse_err(
                line,
                format!("too many rows, expected {n_states}"),
            ));
        }
        let vals = parse_floats(&toks, n_actions, line, "policy row")?;
        for (a, v) in vals.into_iter().enumerate() {
            probs[[row, a]] = v;
        }
        row += 1;
    }
    if row != n_states {
        return Err(parse_err(
            last_line,
            format!("expected {n_states} rows, found {row}"),
        ));
    }
    TabularPolicy::new(probs).map_err(|e| parse_err(last_line, format!("invalid policy: {e}")))
}

pub fn write_policy(pi: &TabularPolicy) -> String {
    let mut out = format!("policy {} {}\n", pi.n_states(), pi.n_actions());
    for s in 0..pi.n_states() {
        let row: Vec<String> = (0..pi.n_actions())
            .map(|a| pi.probs()[[s, a]].to_string())
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
