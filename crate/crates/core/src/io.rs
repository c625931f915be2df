//! `.dpomdp` problem files and JSON policy documents.
//!
//! The supported dialect covers `agents`, `discount` (must be 1), `values`,
//! `states`, `start`, `actions`, `observations` and `T:`/`O:`/`R:` entries
//! with `*`, `uniform` and `identity`. An optional `horizon: h` line sets the
//! horizon; without it the model has horizon 1 and callers extend it with
//! [`DecPomdpModel::with_horizon`].

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversion::PredictionRule;
use crate::error::{Error, Result};
use crate::model::{DecPomdpModel, JointSpace, Labels, Stage, PROB_TOLERANCE};
use crate::planner::{FscNode, JointPolicy, LayeredFsc};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}, column {column}: {message}")]
    Lexical { line: usize, column: usize, message: String },
    #[error("line {line}: {message}")]
    Semantic { line: usize, message: String },
}

fn lexical(token: &Token, message: impl Into<String>) -> ParseError {
    ParseError::Lexical { line: token.line, column: token.column, message: message.into() }
}

fn semantic(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Semantic { line, message: message.into() }
}

type ParseResult<T> = std::result::Result<T, ParseError>;

#[derive(Debug, Clone)]
struct Token {
    text: String,
    line: usize,
    column: usize,
}

/// A keyword line plus the data lines that follow it.
#[derive(Debug)]
struct Statement {
    keyword: String,
    line: usize,
    /// Colon-separated fields after the keyword, as token lists.
    fields: Vec<Vec<Token>>,
    /// Whitespace-separated tokens of the continuation lines, one list per line.
    data: Vec<Vec<Token>>,
}

const KEYWORDS: [&str; 11] =
    ["agents", "discount", "values", "states", "start", "actions", "observations", "horizon", "T", "O", "R"];

fn tokens(text: &str, line: usize, offset: usize) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push(Token { text: text[s..i].to_string(), line, column: offset + s + 1 });
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn split_statements(text: &str) -> ParseResult<Vec<Statement>> {
    let mut statements: Vec<Statement> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let head = content.split(':').next().unwrap_or("").trim();
        let is_keyword_line = content.contains(':') && !head.is_empty() && !head.contains(char::is_whitespace);
        if is_keyword_line {
            if !KEYWORDS.contains(&head) {
                let column = content.find(head).unwrap_or(0) + 1;
                return Err(ParseError::Lexical { line, column, message: format!("unknown keyword '{head}'") });
            }
            let colon = content.find(':').expect("checked above");
            let mut fields = Vec::new();
            let mut offset = colon + 1;
            for part in content[colon + 1..].split(':') {
                fields.push(tokens(part, line, offset));
                offset += part.len() + 1;
            }
            while fields.len() > 1 && fields.last().is_some_and(Vec::is_empty) {
                fields.pop();
            }
            statements.push(Statement { keyword: head.to_string(), line, fields, data: Vec::new() });
        } else if content.contains(':') {
            let column = content.find(':').unwrap_or(0) + 1;
            return Err(ParseError::Lexical { line, column, message: "malformed statement".into() });
        } else {
            let toks = tokens(content, line, 0);
            match statements.last_mut() {
                Some(st) => st.data.push(toks),
                None => return Err(lexical(&toks[0], "data before any statement")),
            }
        }
    }
    Ok(statements)
}

fn number(token: &Token) -> ParseResult<f64> {
    token
        .text
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| lexical(token, format!("expected a number, found '{}'", token.text)))
}

/// Names or a count: a single integer means that many unnamed elements.
fn names_or_count(toks: &[Token], line: usize, what: &str) -> ParseResult<Vec<String>> {
    match toks {
        [] => Err(semantic(line, format!("missing {what}"))),
        [single] if single.text.parse::<usize>().is_ok() => {
            let count: usize = single.text.parse().expect("checked");
            if count == 0 {
                return Err(semantic(line, format!("{what} must be at least 1")));
            }
            Ok((0..count).map(|i| i.to_string()).collect())
        }
        many => Ok(many.iter().map(|t| t.text.clone()).collect()),
    }
}

struct Header {
    agents: Vec<String>,
    states: Vec<String>,
    actions: Vec<Vec<String>>,
    observations: Vec<Vec<String>>,
    start: Vec<f64>,
    cost: bool,
    horizon: usize,
}

impl Header {
    fn element(&self, names: &[String], tok: &Token, what: &str) -> ParseResult<Vec<usize>> {
        if tok.text == "*" {
            return Ok((0..names.len()).collect());
        }
        if let Ok(i) = tok.text.parse::<usize>() {
            return if i < names.len() {
                Ok(vec![i])
            } else {
                Err(semantic(tok.line, format!("{what} index {i} out of range ({} {what}s)", names.len())))
            };
        }
        names
            .iter()
            .position(|n| *n == tok.text)
            .map(|i| vec![i])
            .ok_or_else(|| semantic(tok.line, format!("unknown {what} '{}'", tok.text)))
    }

    fn state(&self, field: &[Token], line: usize) -> ParseResult<Vec<usize>> {
        match field {
            [tok] => self.element(&self.states, tok, "state"),
            _ => Err(semantic(line, "expected one state")),
        }
    }

    /// A joint element: one joint index (or `*`), or one entry per agent.
    fn joint(&self, spaces: &[Vec<String>], field: &[Token], line: usize, what: &str) -> ParseResult<Vec<usize>> {
        let space = JointSpace::new(spaces.iter().map(Vec::len).collect());
        match field {
            [tok] if spaces.len() > 1 => {
                if tok.text == "*" {
                    return Ok((0..space.len()).collect());
                }
                match tok.text.parse::<usize>() {
                    Ok(j) if j < space.len() => Ok(vec![j]),
                    Ok(j) => Err(semantic(line, format!("joint {what} index {j} out of range ({})", space.len()))),
                    Err(_) => Err(semantic(line, format!("unknown joint {what} '{}'", tok.text))),
                }
            }
            toks if toks.len() == spaces.len() => {
                let per_agent = toks
                    .iter()
                    .zip(spaces)
                    .map(|(t, names)| self.element(names, t, what))
                    .collect::<ParseResult<Vec<_>>>()?;
                let mut out = Vec::new();
                let mut parts = vec![0; spaces.len()];
                for j in 0..space.len() {
                    space.decode_into(j, &mut parts);
                    if parts.iter().zip(&per_agent).all(|(p, allowed)| allowed.contains(p)) {
                        out.push(j);
                    }
                }
                Ok(out)
            }
            toks => Err(semantic(
                line,
                match spaces.len() {
                    1 => format!("{what} needs 1 entry, found {}", toks.len()),
                    n => format!("joint {what} needs 1 or {n} entries, found {}", toks.len()),
                },
            )),
        }
    }
}

fn flat_data(st: &Statement, inline: Option<&[Token]>) -> Vec<Token> {
    inline.into_iter().flatten().cloned().chain(st.data.iter().flatten().cloned()).collect()
}

fn parse_header(statements: &[Statement]) -> ParseResult<Header> {
    let mut agents = None;
    let mut states = None;
    let mut actions = None;
    let mut observations = None;
    let mut start: Option<&Statement> = None;
    let mut cost = false;
    let mut horizon = 1;
    for st in statements {
        let inline: Vec<Token> = st.fields.concat();
        match st.keyword.as_str() {
            "agents" => agents = Some(names_or_count(&flat_data(st, Some(&inline)), st.line, "agents")?),
            "states" => states = Some(names_or_count(&flat_data(st, Some(&inline)), st.line, "states")?),
            "discount" => {
                let toks = flat_data(st, Some(&inline));
                let [tok] = toks.as_slice() else { return Err(semantic(st.line, "discount needs one value")) };
                if number(tok)? != 1.0 {
                    return Err(semantic(st.line, format!("discount {} unsupported, only 1 is", tok.text)));
                }
            }
            "values" => match flat_data(st, Some(&inline)).as_slice() {
                [t] if t.text == "reward" => cost = false,
                [t] if t.text == "cost" => cost = true,
                _ => return Err(semantic(st.line, "values must be 'reward' or 'cost'")),
            },
            "horizon" => {
                let toks = flat_data(st, Some(&inline));
                horizon = match toks.as_slice() {
                    [t] => t
                        .text
                        .parse::<usize>()
                        .ok()
                        .filter(|&h| h > 0)
                        .ok_or_else(|| lexical(t, "horizon must be a positive integer"))?,
                    _ => return Err(semantic(st.line, "horizon needs one value")),
                };
            }
            "start" => start = Some(st),
            "actions" | "observations" => {
                let mut lines: Vec<Vec<Token>> = Vec::new();
                if !inline.is_empty() {
                    lines.push(inline);
                }
                lines.extend(st.data.iter().cloned());
                let per_agent =
                    lines.iter().map(|l| names_or_count(l, st.line, &st.keyword)).collect::<ParseResult<Vec<_>>>()?;
                if st.keyword == "actions" {
                    actions = Some((st.line, per_agent));
                } else {
                    observations = Some((st.line, per_agent));
                }
            }
            _ => {}
        }
    }
    let agents = agents.ok_or_else(|| semantic(0, "missing 'agents'"))?;
    let states = states.ok_or_else(|| semantic(0, "missing 'states'"))?;
    let n = agents.len();
    let check = |entry: Option<(usize, Vec<Vec<String>>)>, what: &str| -> ParseResult<Vec<Vec<String>>> {
        let (line, spaces) = entry.ok_or_else(|| semantic(0, format!("missing '{what}'")))?;
        if spaces.len() != n {
            return Err(semantic(line, format!("{what} given for {} agents, expected {n}", spaces.len())));
        }
        Ok(spaces)
    };
    let actions = check(actions, "actions")?;
    let observations = check(observations, "observations")?;
    let mut header = Header { agents, states, actions, observations, start: Vec::new(), cost, horizon };
    let num_states = header.states.len();
    header.start = match start {
        None => vec![1.0 / num_states as f64; num_states],
        Some(st) => {
            if st.fields.len() > 1 {
                return Err(semantic(
                    st.line,
                    format!(
                        "'start {}' is not supported",
                        st.fields[0].iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
                    ),
                ));
            }
            let toks = flat_data(st, st.fields.first().map(Vec::as_slice));
            match toks.as_slice() {
                [t] if t.text == "uniform" => vec![1.0 / num_states as f64; num_states],
                many if many.len() == num_states && many.iter().all(|t| t.text.parse::<f64>().is_ok()) => {
                    many.iter().map(number).collect::<ParseResult<_>>()?
                }
                [t] => {
                    let s = header.element(&header.states, t, "state")?;
                    let mut b = vec![0.0; num_states];
                    b[s[0]] = 1.0;
                    b
                }
                _ => return Err(semantic(st.line, format!("start needs {num_states} probabilities"))),
            }
        }
    };
    if header.start.iter().any(|&p| p < 0.0) || (header.start.iter().sum::<f64>() - 1.0).abs() > PROB_TOLERANCE {
        return Err(semantic(start.map_or(0, |s| s.line), "start distribution does not sum to 1"));
    }
    Ok(header)
}

/// Splits `fields` into index fields and inline data. A field beyond
/// `max_indices`, or a trailing `uniform`/`identity`, is data.
fn split_fields(st: &Statement, max_indices: usize) -> (Vec<Vec<Token>>, Vec<Token>) {
    let mut fields = st.fields.clone();
    let mut data = Vec::new();
    if fields.len() > max_indices {
        data = fields.split_off(max_indices).concat();
    } else if let Some(last) = fields.last() {
        if fields.len() > 1 && last.len() == 1 && (last[0].text == "uniform" || last[0].text == "identity") {
            data = fields.pop().expect("non-empty");
        }
    }
    data.extend(st.data.iter().flatten().cloned());
    (fields, data)
}

enum Block {
    Uniform,
    Identity,
    Values(Vec<f64>),
}

fn block(data: &[Token], expected: usize, line: usize, allow_identity: bool) -> ParseResult<Block> {
    match data {
        [t] if t.text == "uniform" => Ok(Block::Uniform),
        [t] if t.text == "identity" => {
            if allow_identity {
                Ok(Block::Identity)
            } else {
                Err(semantic(line, "'identity' needs a square matrix"))
            }
        }
        toks if toks.len() == expected => Ok(Block::Values(toks.iter().map(number).collect::<ParseResult<_>>()?)),
        toks => Err(semantic(line, format!("expected {expected} values, found {}", toks.len()))),
    }
}

/// Parses a `.dpomdp` problem. The result passes [`DecPomdpModel::validate`].
pub fn parse_dpomdp(text: &str) -> Result<DecPomdpModel> {
    Ok(parse_inner(text)?)
}

pub fn parse_dpomdp_file(path: impl AsRef<Path>) -> Result<DecPomdpModel> {
    parse_dpomdp(&std::fs::read_to_string(path)?)
}

fn parse_inner(text: &str) -> ParseResult<DecPomdpModel> {
    let statements = split_statements(text)?;
    let header = parse_header(&statements)?;
    let ns = header.states.len();
    let action_space = JointSpace::new(header.actions.iter().map(Vec::len).collect());
    let obs_space = JointSpace::new(header.observations.iter().map(Vec::len).collect());
    let (na, nz) = (action_space.len(), obs_space.len());
    let mut transition = vec![0.0; na * ns * ns];
    let mut observation = vec![0.0; na * ns * nz];
    let mut rewards = vec![0.0; ns * na];
    let mut t_line = vec![0; na * ns];
    let mut o_line = vec![0; na * ns];
    let sign = if header.cost { -1.0 } else { 1.0 };

    for st in &statements {
        match st.keyword.as_str() {
            "T" => {
                let (idx, data) = split_fields(st, 3);
                let actions = header.joint(&header.actions, &idx[0], st.line, "action")?;
                let froms = match idx.get(1) {
                    Some(f) => header.state(f, st.line)?,
                    None => (0..ns).collect(),
                };
                let tos = match idx.get(2) {
                    Some(f) => Some(header.state(f, st.line)?),
                    None => None,
                };
                let expected = match idx.len() {
                    1 => ns * ns,
                    2 => ns,
                    _ => 1,
                };
                let values = block(&data, expected, st.line, idx.len() == 1)?;
                for &a in &actions {
                    for &s in &froms {
                        t_line[a * ns + s] = st.line;
                        for s2 in tos.clone().unwrap_or_else(|| (0..ns).collect()) {
                            let v = match &values {
                                Block::Uniform => 1.0 / ns as f64,
                                Block::Identity => f64::from(u8::from(s == s2)),
                                Block::Values(v) if idx.len() == 1 => v[s * ns + s2],
                                Block::Values(v) if idx.len() == 2 => v[s2],
                                Block::Values(v) => v[0],
                            };
                            transition[(a * ns + s) * ns + s2] = v;
                        }
                    }
                }
            }
            "O" => {
                let (idx, data) = split_fields(st, 3);
                let actions = header.joint(&header.actions, &idx[0], st.line, "action")?;
                let tos = match idx.get(1) {
                    Some(f) => header.state(f, st.line)?,
                    None => (0..ns).collect(),
                };
                let zs = match idx.get(2) {
                    Some(f) => Some(header.joint(&header.observations, f, st.line, "observation")?),
                    None => None,
                };
                let expected = match idx.len() {
                    1 => ns * nz,
                    2 => nz,
                    _ => 1,
                };
                let values = block(&data, expected, st.line, idx.len() == 1 && ns == nz)?;
                for &a in &actions {
                    for &s2 in &tos {
                        o_line[a * ns + s2] = st.line;
                        for z in zs.clone().unwrap_or_else(|| (0..nz).collect()) {
                            let v = match &values {
                                Block::Uniform => 1.0 / nz as f64,
                                Block::Identity => f64::from(u8::from(s2 == z)),
                                Block::Values(v) if idx.len() == 1 => v[s2 * nz + z],
                                Block::Values(v) if idx.len() == 2 => v[z],
                                Block::Values(v) => v[0],
                            };
                            observation[(a * ns + s2) * nz + z] = v;
                        }
                    }
                }
            }
            "R" => {
                let (mut idx, data) = split_fields(st, 4);
                if idx.len() < 2 {
                    return Err(semantic(st.line, "reward entries need an action and a state"));
                }
                for extra in idx.drain(2..) {
                    if !(extra.len() == 1 && extra[0].text == "*") {
                        return Err(semantic(
                            st.line,
                            "rewards depending on next state or observation are unsupported",
                        ));
                    }
                }
                let actions = header.joint(&header.actions, &idx[0], st.line, "action")?;
                let froms = header.state(&idx[1], st.line)?;
                let [tok] = data.as_slice() else {
                    return Err(semantic(st.line, format!("expected one reward value, found {}", data.len())));
                };
                let value = sign * number(tok)?;
                for &a in &actions {
                    for &s in &froms {
                        rewards[s * na + a] = value;
                    }
                }
            }
            _ => {}
        }
    }

    let mut stage = Stage::new(ns, action_space.sizes().to_vec(), obs_space.sizes().to_vec());
    for a in 0..na {
        let mut reached = vec![false; ns];
        for s in 0..ns {
            let row = &transition[(a * ns + s) * ns..(a * ns + s + 1) * ns];
            check_row(row, t_line[a * ns + s], &format!("transition row (a={a}, s={s})"))?;
            row.iter().enumerate().filter(|(_, &p)| p > 0.0).for_each(|(s2, _)| reached[s2] = true);
        }
        let obs_rows: Vec<Vec<f64>> =
            (0..ns).map(|s2| observation[(a * ns + s2) * nz..(a * ns + s2 + 1) * nz].to_vec()).collect();
        for (s2, row) in obs_rows.iter().enumerate() {
            if reached[s2] || row.iter().any(|&p| p != 0.0) {
                check_row(row, o_line[a * ns + s2], &format!("observation row (a={a}, s'={s2})"))?;
            }
        }
        for s in 0..ns {
            stage.set_factored(s, a, &transition[(a * ns + s) * ns..(a * ns + s + 1) * ns], &obs_rows);
            stage.set_reward(s, a, rewards[s * na + a]);
        }
    }
    let labels = Labels {
        agents: header.agents,
        states: header.states,
        actions: header.actions,
        observations: header.observations,
    };
    Ok(DecPomdpModel::time_homogeneous(header.horizon, header.start, stage).with_labels(labels))
}

fn check_row(row: &[f64], line: usize, what: &str) -> ParseResult<()> {
    if row.iter().any(|&p| p < 0.0) {
        return Err(semantic(line, format!("{what} has a negative entry")));
    }
    let sum: f64 = row.iter().sum();
    if sum == 0.0 {
        return Err(semantic(line, format!("{what} is all zero and cannot be normalized")));
    }
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(semantic(line, format!("{what} sums to {sum}")));
    }
    Ok(())
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name != "*" && !name.contains(|c: char| c.is_whitespace() || c == ':' || c == '#')
}

fn write_names(out: &mut String, names: &[String]) {
    if names.iter().all(|n| valid_name(n)) && names.iter().enumerate().any(|(i, n)| *n != i.to_string()) {
        let _ = writeln!(out, "{}", names.join(" "));
    } else {
        let _ = writeln!(out, "{}", names.len());
    }
}

/// Writes a time-homogeneous model whose dynamics factor into transition and
/// observation tables.
pub fn write_dpomdp(model: &DecPomdpModel) -> Result<String> {
    if !model.is_time_homogeneous() {
        return Err(Error::Unsupported("only time-homogeneous models can be written".into()));
    }
    let stage = model.stage(0);
    let ns = model.num_states();
    let n = model.num_agents();
    let na = stage.actions().len();
    let nz = stage.observations().len();
    let labels = model.labels().cloned().unwrap_or_else(|| Labels {
        agents: (0..n).map(|i| i.to_string()).collect(),
        states: (0..ns).map(|i| i.to_string()).collect(),
        actions: stage.actions().sizes().iter().map(|&k| (0..k).map(|i| i.to_string()).collect()).collect(),
        observations: stage.observations().sizes().iter().map(|&k| (0..k).map(|i| i.to_string()).collect()).collect(),
    });
    let mut out = String::new();
    out.push_str("agents: ");
    write_names(&mut out, &labels.agents);
    out.push_str("discount: 1\nvalues: reward\nstates: ");
    write_names(&mut out, &labels.states);
    let _ = writeln!(out, "horizon: {}", model.horizon());
    out.push_str("start:\n");
    let _ = writeln!(out, "{}", join_floats(model.initial_belief()));
    out.push_str("actions:\n");
    labels.actions.iter().for_each(|names| write_names(&mut out, names));
    out.push_str("observations:\n");
    labels.observations.iter().for_each(|names| write_names(&mut out, names));

    for a in 0..na {
        let mut transition = vec![vec![0.0; ns]; ns];
        for (s, row) in transition.iter_mut().enumerate() {
            for o in stage.outcomes(s, a) {
                row[o.next_state] += o.prob;
            }
        }
        let mut observation: Vec<Option<Vec<f64>>> = vec![None; ns];
        for s in 0..ns {
            let mut joint = vec![vec![0.0; nz]; ns];
            for o in stage.outcomes(s, a) {
                joint[o.next_state][o.observation] += o.prob;
            }
            for s2 in 0..ns {
                let p = transition[s][s2];
                if p == 0.0 {
                    continue;
                }
                let row: Vec<f64> = joint[s2].iter().map(|q| q / p).collect();
                match &observation[s2] {
                    None => observation[s2] = Some(row),
                    Some(prev) if prev.iter().zip(&row).all(|(x, y)| (x - y).abs() <= 1e-12) => {}
                    Some(_) => {
                        return Err(Error::Unsupported(format!(
                            "observation probabilities for a={a}, s'={s2} depend on the previous state"
                        )))
                    }
                }
            }
        }
        for (s, row) in transition.iter().enumerate() {
            let _ = writeln!(out, "T: {a} : {s}\n{}", join_floats(row));
        }
        for (s2, row) in observation.iter().enumerate() {
            match row {
                Some(row) => {
                    let _ = writeln!(out, "O: {a} : {s2}\n{}", join_floats(row));
                }
                None => {
                    let _ = writeln!(out, "O: {a} : {s2} : uniform");
                }
            }
        }
        for s in 0..ns {
            let r = stage.reward(s, a);
            if r != 0.0 {
                let _ = writeln!(out, "R: {a} : {s} : * : * : {r}");
            }
        }
    }
    Ok(out)
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
}

/// Run metadata stored next to a policy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicyMeta {
    pub horizon: usize,
    pub value: Option<f64>,
    pub gamma_points: Vec<Vec<f64>>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub history: Vec<usize>,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDocument {
    pub layers: Vec<Vec<FscNode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Vec<PredictionEntry>>,
}

/// JSON layout of a stored policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub horizon: usize,
    pub agents: Vec<AgentDocument>,
    pub value: Option<f64>,
    #[serde(default)]
    pub gamma_points: Vec<Vec<f64>>,
    pub seed: Option<u64>,
}

pub fn serialize_policy(policy: &JointPolicy, meta: &PolicyMeta) -> Result<String> {
    let agents = policy
        .controllers()
        .iter()
        .enumerate()
        .map(|(agent, fsc)| {
            let layers = LayeredFsc::new(fsc.layers().to_vec())?.layers().to_vec();
            let prediction = policy.prediction().map(|rule| {
                rule.agent_rules()
                    .get(agent)
                    .map(|m| m.iter().map(|(h, &a)| PredictionEntry { history: h.clone(), action: a }).collect())
                    .unwrap_or_default()
            });
            Ok(AgentDocument { layers, prediction })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(rule) = policy.prediction() {
        if rule.agents() != agents.len() {
            return Err(Error::Structure(format!(
                "prediction rule for {} agents, policy has {}",
                rule.agents(),
                agents.len()
            )));
        }
    }
    let doc = PolicyDocument {
        horizon: meta.horizon,
        agents,
        value: meta.value,
        gamma_points: meta.gamma_points.clone(),
        seed: meta.seed,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn parse_policy(text: &str) -> Result<(JointPolicy, PolicyMeta)> {
    let doc: PolicyDocument = serde_json::from_str(text)?;
    let controllers = doc.agents.iter().map(|a| LayeredFsc::new(a.layers.clone())).collect::<Result<Vec<_>>>()?;
    let with_prediction = doc.agents.iter().filter(|a| a.prediction.is_some()).count();
    let prediction = match with_prediction {
        0 => None,
        k if k == doc.agents.len() => {
            let maps = doc
                .agents
                .iter()
                .map(|a| {
                    let mut map = std::collections::BTreeMap::new();
                    for e in a.prediction.as_deref().unwrap_or_default() {
                        if map.insert(e.history.clone(), e.action).is_some() {
                            return Err(Error::Structure(format!("duplicate prediction for history {:?}", e.history)));
                        }
                    }
                    Ok(map)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(PredictionRule::new(maps))
        }
        _ => return Err(Error::Structure("prediction rule given for only some agents".into())),
    };
    let policy = JointPolicy::new(controllers)?.with_prediction(prediction);
    let meta = PolicyMeta { horizon: doc.horizon, value: doc.value, gamma_points: doc.gamma_points, seed: doc.seed };
    Ok((policy, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_STATE: &str = "\
# hand-written two-agent problem
agents: 2
discount: 1
values: reward
states: left right
start: uniform
actions:
listen wait
2
observations:
hl hr
2
T: * : uniform
T: 0 0 : left : right : 0.3
T: 0 0 : left : left : 0.7
O: * : * : uniform
R: listen 1 : * : * : * : -1.5
";

    #[test]
    fn parses_entries_and_wildcards() {
        let m = parse_dpomdp(TWO_STATE).unwrap();
        assert!(m.validate().is_empty());
        assert_eq!(m.num_agents(), 2);
        let st = m.stage(0);
        let p_right: f64 = (0..4).map(|z| st.probability(0, 0, 1, z)).sum();
        assert!((p_right - 0.3).abs() < 1e-15);
        let p_uniform: f64 = (0..4).map(|z| st.probability(1, 3, 0, z)).sum();
        assert!((p_uniform - 0.5).abs() < 1e-15);
        assert_eq!(st.probability(0, 0, 1, 2), 0.3 * 0.25);
        assert_eq!(st.reward(0, 1), -1.5);
        assert_eq!(st.reward(1, 1), -1.5);
        assert_eq!(st.reward(0, 0), 0.0);
        assert_eq!(m.labels().unwrap().actions[0], vec!["listen", "wait"]);
    }

    #[test]
    fn bad_state_reference_names_the_line() {
        let text = "agents: 1\ndiscount: 1\nvalues: reward\nstates: 2\nactions:\n1\nobservations:\n1\nT: * : identity\nO: * : * : uniform\nR: 0 : 5 : * : * : 1\n";
        match parse_dpomdp(text) {
            Err(Error::Parse(ParseError::Semantic { line, message })) => {
                assert_eq!(line, 11);
                assert!(message.contains('5'), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_classes() {
        let base = "agents: 1\ndiscount: 1\nvalues: reward\nstates: 2\nactions:\n1\nobservations:\n1\n";
        let lex = format!("{base}T: * : identity\nO: * : * : uniform\nR: 0 : 0 : * : * : 1.x\n");
        assert!(matches!(parse_dpomdp(&lex), Err(Error::Parse(ParseError::Lexical { line: 11, column: 20, .. }))));
        let keyword = format!("{base}Q: 0\n");
        assert!(matches!(parse_dpomdp(&keyword), Err(Error::Parse(ParseError::Lexical { line: 9, .. }))));
        let unnormalized = format!("{base}T: 0 : 0\n0.5 0.4\nT: 0 : 1 : uniform\nO: * : * : uniform\n");
        assert!(matches!(parse_dpomdp(&unnormalized), Err(Error::Parse(ParseError::Semantic { line: 9, .. }))));
        let empty_row = format!("{base}T: 0 : 1 : uniform\nO: * : * : uniform\n");
        match parse_dpomdp(&empty_row) {
            Err(Error::Parse(ParseError::Semantic { message, .. })) => assert!(message.contains("normalized")),
            other => panic!("{other:?}"),
        }
        let discount = base.replace("discount: 1", "discount: 0.95");
        assert!(matches!(parse_dpomdp(&discount), Err(Error::Parse(ParseError::Semantic { line: 2, .. }))));
        let arity = format!("{base}T: 0 0 : uniform\n");
        assert!(matches!(parse_dpomdp(&arity), Err(Error::Parse(ParseError::Semantic { .. }))));
    }

    #[test]
    fn later_entries_overwrite() {
        let text = "agents: 1\ndiscount: 1\nvalues: cost\nstates: 2\nstart: 1\nactions:\n1\nobservations:\n2\nT: 0\nidentity\nO: 0 : * : 0 : 1\nO: 0 : * : 1 : 0\nR: 0 : * : * : * : 2\nR: 0 : 1 : * : * : 3\n";
        let m = parse_dpomdp(text).unwrap();
        assert_eq!(m.initial_belief(), &[0.0, 1.0]);
        assert_eq!(m.stage(0).reward(0, 0), -2.0);
        assert_eq!(m.stage(0).reward(1, 0), -3.0);
        assert_eq!(m.stage(0).probability(1, 0, 1, 0), 1.0);
    }

    #[test]
    fn write_then_parse_round_trips() {
        let m = parse_dpomdp(TWO_STATE).unwrap().with_horizon(3).unwrap();
        let text = write_dpomdp(&m).unwrap();
        let back = parse_dpomdp(&text).unwrap();
        assert_eq!(back.horizon(), 3);
        assert_eq!(back.labels(), m.labels());
        for s in 0..2 {
            for a in 0..4 {
                assert_eq!(back.stage(0).reward(s, a), m.stage(0).reward(s, a));
                for s2 in 0..2 {
                    for z in 0..4 {
                        let d = back.stage(0).probability(s, a, s2, z) - m.stage(0).probability(s, a, s2, z);
                        assert!(d.abs() <= 1e-12);
                    }
                }
            }
        }
    }

    fn node(action: usize, edges: &[usize]) -> FscNode {
        FscNode { action, edges: edges.to_vec() }
    }

    #[test]
    fn single_node_document() {
        let p = JointPolicy::new(vec![LayeredFsc::new(vec![vec![node(1, &[])]]).unwrap()]).unwrap();
        let meta = PolicyMeta { horizon: 1, value: Some(0.5), gamma_points: vec![vec![1.0]], seed: Some(3) };
        let text = serialize_policy(&p, &meta).unwrap();
        let doc: PolicyDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(doc.agents[0].layers.len(), 1);
        assert_eq!(doc.agents[0].layers[0].len(), 1);
        assert_eq!(parse_policy(&text).unwrap(), (p, meta));
    }

    #[test]
    fn policy_round_trip_with_prediction() {
        let fsc = LayeredFsc::new(vec![vec![node(0, &[0, 1])], vec![node(1, &[]), node(0, &[])]]).unwrap();
        let mut rule = std::collections::BTreeMap::new();
        rule.insert(vec![0], 2);
        rule.insert(vec![1], 0);
        let p = JointPolicy::new(vec![fsc.clone(), fsc])
            .unwrap()
            .with_prediction(Some(PredictionRule::new(vec![rule.clone(), rule])));
        let meta = PolicyMeta { horizon: 1, value: Some(-0.1 / 3.0), gamma_points: vec![vec![0.1, 0.9]], seed: None };
        let text = serialize_policy(&p, &meta).unwrap();
        assert_eq!(parse_policy(&text).unwrap(), (p, meta));
    }

    #[test]
    fn dangling_edge_is_rejected() {
        let fsc = LayeredFsc::new(vec![vec![node(0, &[0])], vec![node(0, &[])]]).unwrap();
        let mut p = JointPolicy::new(vec![fsc]).unwrap();
        p.controller_mut(0).node_mut(0, 0).edges[0] = 4;
        assert!(matches!(serialize_policy(&p, &PolicyMeta::default()), Err(Error::Structure(_))));
        let text = r#"{"horizon":1,"agents":[{"layers":[[{"action":0,"edges":[3]}],[{"action":0,"edges":[]}]]}],"value":null,"gamma_points":[],"seed":null}"#;
        assert!(matches!(parse_policy(text), Err(Error::Structure(_))));
    }
}
