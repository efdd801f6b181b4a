//! Brute-force token game over the raw choreography JSON.
//!
//! Shares no code with `chor`: the document is read as untyped JSON, places
//! are `from->to` strings, and conditions have their own evaluator.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use serde_json::Value as Json;

type Marking = BTreeMap<String, u32>;

#[derive(Debug, Clone)]
struct Node {
    kind: String,
    inputs: Vec<String>,
    outputs: Vec<(String, Option<String>, bool)>,
    message: Option<String>,
}

/// A choreography as a plain place/transition net.
#[derive(Debug, Clone)]
pub struct TokenGame {
    order: Vec<String>,
    nodes: BTreeMap<String, Node>,
    public_messages: BTreeSet<String>,
    start_place: Option<String>,
}

/// What the oracle knows after replaying a log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleState {
    pub enabled: BTreeSet<String>,
    pub completed: bool,
}

fn place(from: &str, to: &str) -> String {
    format!("{from}->{to}")
}

impl TokenGame {
    pub fn from_json(doc: &str) -> Result<Self, String> {
        let doc: Json = serde_json::from_str(doc).map_err(|e| e.to_string())?;
        let mut order = Vec::new();
        let mut nodes = BTreeMap::new();
        for el in doc["elements"].as_array().ok_or("elements missing")? {
            let id = el["id"].as_str().ok_or("element id")?.to_owned();
            order.push(id.clone());
            nodes.insert(
                id,
                Node {
                    kind: el["kind"].as_str().ok_or("element kind")?.to_owned(),
                    inputs: Vec::new(),
                    outputs: Vec::new(),
                    message: el["message"].as_str().map(str::to_owned),
                },
            );
        }
        for fl in doc["flows"].as_array().ok_or("flows missing")? {
            let from = fl["from"].as_str().ok_or("flow from")?;
            let to = fl["to"].as_str().ok_or("flow to")?;
            let p = place(from, to);
            let cond = fl["condition"].as_str().map(str::to_owned);
            let default = fl["default"].as_bool().unwrap_or(false);
            nodes.get_mut(from).ok_or("dangling flow")?.outputs.push((p.clone(), cond, default));
            nodes.get_mut(to).ok_or("dangling flow")?.inputs.push(p);
        }
        let public_messages = doc["messages"]
            .as_array()
            .ok_or("messages missing")?
            .iter()
            .filter(|m| m["visibility"] == "PUBLIC")
            .filter_map(|m| m["name"].as_str().map(str::to_owned))
            .collect();
        let start_place = order
            .iter()
            .find(|id| nodes[*id].kind == "StartEvent")
            .and_then(|id| nodes[id].outputs.first().map(|o| o.0.clone()));
        Ok(Self {
            order,
            nodes,
            public_messages,
            start_place,
        })
    }

    fn initial(&self) -> Marking {
        self.start_place.iter().map(|p| (p.clone(), 1)).collect()
    }

    fn enabled(&self, m: &Marking, id: &str) -> bool {
        let n = &self.nodes[id];
        let has = |p: &String| m.get(p).copied().unwrap_or(0) > 0;
        match n.kind.as_str() {
            "StartEvent" | "EndEvent" => false,
            "AndJoin" => !n.inputs.is_empty() && n.inputs.iter().all(has),
            _ => n.inputs.iter().any(has),
        }
    }

    fn consume(&self, m: &mut Marking, id: &str) {
        let n = &self.nodes[id];
        let take: Vec<String> = if n.kind == "AndJoin" {
            n.inputs.clone()
        } else {
            n.inputs.iter().filter(|p| m.get(*p).copied().unwrap_or(0) > 0).take(1).cloned().collect()
        };
        for p in take {
            let c = m.get_mut(&p).expect("token present");
            *c -= 1;
            if *c == 0 {
                m.remove(&p);
            }
        }
    }

    fn produce(m: &mut Marking, p: &str) {
        *m.entry(p.to_owned()).or_insert(0) += 1;
    }

    /// Fires gateways until none can move, over every firing order.
    /// Returns the quiescent markings, or `None` when some order reaches an
    /// exclusive split that no flow can leave.
    fn settle(&self, start: &[Marking], vars: &BTreeMap<String, Json>) -> Option<Vec<Marking>> {
        let mut seen: HashSet<Marking> = HashSet::new();
        let mut queue: VecDeque<Marking> = start.iter().cloned().collect();
        let mut quiet = BTreeSet::new();
        while let Some(cur) = queue.pop_front() {
            if !seen.insert(cur.clone()) {
                continue;
            }
            if seen.len() > 10_000 {
                return None;
            }
            let mut moved = false;
            for id in &self.order {
                let n = &self.nodes[id];
                if !matches!(n.kind.as_str(), "XorSplit" | "XorJoin" | "AndSplit" | "AndJoin") || !self.enabled(&cur, id) {
                    continue;
                }
                let mut next = cur.clone();
                self.consume(&mut next, id);
                match n.kind.as_str() {
                    "AndSplit" => n.outputs.iter().for_each(|o| Self::produce(&mut next, &o.0)),
                    "XorSplit" => Self::produce(&mut next, &self.route(n, vars)?),
                    _ => {
                        if let Some(o) = n.outputs.first() {
                            Self::produce(&mut next, &o.0);
                        }
                    }
                }
                moved = true;
                queue.push_back(next);
            }
            if !moved {
                quiet.insert(cur);
            }
        }
        Some(quiet.into_iter().collect())
    }

    fn route(&self, n: &Node, vars: &BTreeMap<String, Json>) -> Option<String> {
        let mut chosen = None;
        for (p, cond, default) in &n.outputs {
            if *default {
                continue;
            }
            if let Some(c) = cond {
                if eval_condition(c, vars)? && chosen.is_none() {
                    chosen = Some(p.clone());
                }
            }
        }
        chosen.or_else(|| n.outputs.iter().find(|o| o.2).map(|o| o.0.clone()))
    }

    fn tasks_enabled_in(&self, m: &Marking) -> BTreeSet<String> {
        self.order
            .iter()
            .filter(|id| self.nodes[*id].kind == "ChoreographyTask" && self.enabled(m, id))
            .cloned()
            .collect()
    }

    fn is_final(&self, m: &Marking) -> bool {
        !m.is_empty()
            && m.keys().all(|p| {
            let to = p.rsplit("->").next().unwrap_or_default();
            self.nodes.get(to).is_some_and(|n| n.kind == "EndEvent")
        })
    }

    /// Replays `log` (task id and JSON payload; `None` for confidential
    /// payloads). Fails at the first message the choreography does not
    /// allow.
    pub fn replay<'a>(&self, log: impl IntoIterator<Item = (&'a str, Option<&'a Json>)>) -> Result<OracleState, String> {
        let mut vars = BTreeMap::new();
        let start = vec![self.initial()];
        let mut markings = self.settle(&start, &vars).unwrap_or(start);
        for (i, (task, payload)) in log.into_iter().enumerate() {
            let node = self
                .nodes
                .get(task)
                .filter(|n| n.kind == "ChoreographyTask")
                .ok_or_else(|| format!("message {i}: `{task}` is not a task"))?;
            let fired: Vec<Marking> = markings
                .iter()
                .filter(|m| self.enabled(m, task))
                .map(|m| {
                    let mut m = m.clone();
                    self.consume(&mut m, task);
                    if let Some(o) = node.outputs.first() {
                        Self::produce(&mut m, &o.0);
                    }
                    m
                })
                .collect();
            if fired.is_empty() {
                return Err(format!("message {i}: `{task}` is not enabled"));
            }
            let public = node.message.as_ref().is_some_and(|m| self.public_messages.contains(m));
            if let (true, Some(Json::Object(fields))) = (public, payload) {
                for (k, v) in fields {
                    vars.insert(format!("{task}.{k}"), v.clone());
                }
            }
            markings = self
                .settle(&fired, &vars)
                .ok_or_else(|| format!("message {i}: no route out of a split after `{task}`"))?;
        }
        let enabled = markings.iter().flat_map(|m| self.tasks_enabled_in(m)).collect();
        let completed = markings.iter().any(|m| self.is_final(m));
        Ok(OracleState { enabled, completed })
    }

    /// Fewest tasks on any path from the start event to `end`, never passing
    /// through an element in `avoid`. Ignores conditions.
    pub fn shortest_task_path(&self, end: &str, avoid: &[&str]) -> Option<usize> {
        let start = self.order.iter().find(|id| self.nodes[*id].kind == "StartEvent")?;
        let mut dist = BTreeMap::from([(start.clone(), 0usize)]);
        let mut queue = VecDeque::from([start.clone()]);
        while let Some(cur) = queue.pop_front() {
            if cur == end {
                return dist.get(&cur).copied();
            }
            let d = dist[&cur];
            for (p, _, _) in &self.nodes[&cur].outputs {
                let to = p.rsplit("->").next().unwrap_or_default().to_owned();
                if avoid.contains(&to.as_str()) || dist.contains_key(&to) {
                    continue;
                }
                let w = usize::from(self.nodes[&to].kind == "ChoreographyTask");
                dist.insert(to.clone(), d + w);
                queue.push_back(to);
            }
        }
        None
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.order
            .iter()
            .filter(|id| self.nodes[*id].kind == "ChoreographyTask")
            .cloned()
            .collect()
    }
}

// Conditions: tokens split on whitespace and parentheses, then a
// precedence climb over `or` < `and` < `not`.

fn tokenize(src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_str = false;
    for ch in src.chars() {
        match ch {
            '"' => {
                cur.push(ch);
                if in_str {
                    out.push(std::mem::take(&mut cur));
                }
                in_str = !in_str;
            }
            _ if in_str => cur.push(ch),
            '(' | ')' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

struct CondEval<'a> {
    toks: Vec<String>,
    pos: usize,
    vars: &'a BTreeMap<String, Json>,
}

impl CondEval<'_> {
    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).map(String::as_str)
    }

    fn bump(&mut self) -> Option<String> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn or(&mut self) -> Option<bool> {
        let mut v = self.and()?;
        while self.peek() == Some("or") {
            self.bump();
            let r = self.and()?;
            v = v || r;
        }
        Some(v)
    }

    fn and(&mut self) -> Option<bool> {
        let mut v = self.unary()?;
        while self.peek() == Some("and") {
            self.bump();
            let r = self.unary()?;
            v = v && r;
        }
        Some(v)
    }

    fn unary(&mut self) -> Option<bool> {
        match self.peek()? {
            "not" => {
                self.bump();
                Some(!self.unary()?)
            }
            "(" => {
                self.bump();
                let v = self.or()?;
                (self.bump()? == ")").then_some(v)
            }
            _ => {
                let l = self.operand()?;
                let op = self.bump()?;
                let r = self.operand()?;
                compare(&l, &op, &r)
            }
        }
    }

    fn operand(&mut self) -> Option<Json> {
        let t = self.bump()?;
        if let Some(s) = t.strip_prefix('"').and_then(|s| s.strip_suffix('"')) {
            return Some(Json::String(s.to_owned()));
        }
        match t.as_str() {
            "true" => Some(Json::Bool(true)),
            "false" => Some(Json::Bool(false)),
            _ => match t.parse::<f64>() {
                Ok(n) => Some(serde_json::json!(n)),
                Err(_) => self.vars.get(&t).cloned(),
            },
        }
    }
}

fn compare(l: &Json, op: &str, r: &Json) -> Option<bool> {
    use std::cmp::Ordering::*;
    let ord = match (l, r) {
        (Json::Number(a), Json::Number(b)) => a.as_f64()?.partial_cmp(&b.as_f64()?)?,
        (Json::String(a), Json::String(b)) => a.cmp(b),
        (Json::Bool(a), Json::Bool(b)) => {
            if !matches!(op, "=" | "==" | "!=" | "≠") {
                return None;
            }
            a.cmp(b)
        }
        _ => return None,
    };
    Some(match op {
        "=" | "==" => ord == Equal,
        "!=" | "≠" => ord != Equal,
        "<" => ord == Less,
        "<=" | "≤" => ord != Greater,
        ">" => ord == Greater,
        ">=" | "≥" => ord != Less,
        _ => return None,
    })
}

/// `None` when the condition reads an unbound variable or is ill-typed.
pub fn eval_condition(src: &str, vars: &BTreeMap<String, Json>) -> Option<bool> {
    let mut p = CondEval {
        toks: tokenize(src),
        pos: 0,
        vars,
    };
    let v = p.or()?;
    (p.pos == p.toks.len()).then_some(v)
}
