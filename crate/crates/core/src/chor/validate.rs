//! Structural well-formedness checks.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Choreography, ElementKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<String>,
    pub message: String,
}

impl ValidationIssue {
    fn at(element: &str, message: impl Into<String>) -> Self {
        Self {
            element: Some(element.to_owned()),
            message: message.into(),
        }
    }

    fn global(message: impl Into<String>) -> Self {
        Self {
            element: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.element {
            Some(e) => write!(f, "{e}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl Choreography {
    /// Returns every structural problem found; empty means well-formed.
    pub fn validate(&self) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        let n = self.elements.len();

        let starts: Vec<usize> = (0..n)
            .filter(|&i| self.elements[i].kind == ElementKind::StartEvent)
            .collect();
        match starts.len() {
            0 => issues.push(ValidationIssue::global("model has no StartEvent")),
            1 => {}
            k => issues.push(ValidationIssue::global(format!(
                "model has {k} StartEvents ({}), exactly one is allowed",
                starts
                    .iter()
                    .map(|&i| self.elements[i].id.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))),
        }
        if !self.elements.iter().any(|e| e.kind == ElementKind::EndEvent) {
            issues.push(ValidationIssue::global("model has no EndEvent"));
        }

        for (i, e) in self.elements.iter().enumerate() {
            let (inc, out) = (self.incoming(i), self.outgoing(i));
            let id = e.id.as_str();
            if id.contains('.') {
                issues.push(ValidationIssue::at(id, "element ids may not contain `.`"));
            }
            match e.kind {
                ElementKind::StartEvent => {
                    if !inc.is_empty() {
                        issues.push(ValidationIssue::at(id, "StartEvent has incoming flows"));
                    }
                    if out.len() != 1 {
                        issues.push(ValidationIssue::at(id, "StartEvent needs exactly one outgoing flow"));
                    }
                }
                ElementKind::EndEvent => {
                    if !out.is_empty() {
                        issues.push(ValidationIssue::at(id, "EndEvent has outgoing flows"));
                    }
                }
                ElementKind::ChoreographyTask => {
                    if out.len() != 1 {
                        issues.push(ValidationIssue::at(id, "task needs exactly one outgoing flow"));
                    }
                    if let Some(t) = &e.task {
                        if t.initiator == t.recipient {
                            issues.push(ValidationIssue::at(id, "initiator and recipient are the same role"));
                        }
                    }
                }
                ElementKind::XorJoin | ElementKind::AndJoin => {
                    if inc.len() < 2 {
                        issues.push(ValidationIssue::at(id, "join needs at least two incoming flows"));
                    }
                    if out.len() != 1 {
                        issues.push(ValidationIssue::at(id, "join needs exactly one outgoing flow"));
                    }
                }
                ElementKind::XorSplit => {
                    if out.len() < 2 {
                        issues.push(ValidationIssue::at(id, "split needs at least two outgoing flows"));
                    }
                    let defaults = out.iter().filter(|&&f| self.flows[f].default).count();
                    if defaults != 1 {
                        issues.push(ValidationIssue::at(
                            id,
                            format!("exclusive split needs exactly one default flow, found {defaults}"),
                        ));
                    }
                    for &f in out {
                        let flow = &self.flows[f];
                        if !flow.default && flow.condition.is_none() {
                            issues.push(ValidationIssue::at(
                                id,
                                format!("flow {} has neither a condition nor the default flag", flow.label()),
                            ));
                        }
                    }
                }
                ElementKind::AndSplit => {
                    if out.len() < 2 {
                        issues.push(ValidationIssue::at(id, "split needs at least two outgoing flows"));
                    }
                }
            }
            if e.kind != ElementKind::XorSplit {
                for &f in out {
                    let flow = &self.flows[f];
                    if flow.condition.is_some() || flow.default {
                        issues.push(ValidationIssue::at(
                            id,
                            format!("flow {} carries a condition or default flag outside an exclusive split", flow.label()),
                        ));
                    }
                }
            }
        }

        let mut seen = std::collections::HashSet::new();
        for f in &self.flows {
            if !seen.insert((&f.from, &f.to)) {
                issues.push(ValidationIssue::at(&f.from, format!("duplicate flow {}", f.label())));
            }
        }

        if let [start] = starts[..] {
            let reach = self.reachable_from(start);
            for (i, e) in self.elements.iter().enumerate() {
                if !reach[i] {
                    issues.push(ValidationIssue::at(&e.id, "unreachable from the StartEvent"));
                }
            }
        }

        for scc in self.cyclic_components() {
            let inside = |i: usize| scc.contains(&i);
            let exits = scc.iter().any(|&i| {
                self.elements[i].kind == ElementKind::XorSplit
                    && self.outgoing(i).iter().any(|&f| !inside(self.flow_target(f)))
            });
            if !exits {
                let mut ids: Vec<&str> = scc.iter().map(|&i| self.elements[i].id.as_str()).collect();
                ids.sort_unstable();
                issues.push(ValidationIssue::global(format!(
                    "loop through {} has no exclusive split leaving it",
                    ids.join(", ")
                )));
            }
        }
        issues
    }

    fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.outgoing(i).iter().map(|&f| self.flow_target(f))
    }

    fn reachable_from(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.elements.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            for j in self.successors(i) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    }

    /// Strongly connected components that contain a cycle (Tarjan).
    fn cyclic_components(&self) -> Vec<Vec<usize>> {
        struct State {
            index: Vec<Option<usize>>,
            low: Vec<usize>,
            on_stack: Vec<bool>,
            stack: Vec<usize>,
            next: usize,
            out: Vec<Vec<usize>>,
        }
        fn visit(c: &Choreography, v: usize, s: &mut State) {
            s.index[v] = Some(s.next);
            s.low[v] = s.next;
            s.next += 1;
            s.stack.push(v);
            s.on_stack[v] = true;
            for w in c.successors(v).collect::<Vec<_>>() {
                match s.index[w] {
                    None => {
                        visit(c, w, s);
                        s.low[v] = s.low[v].min(s.low[w]);
                    }
                    Some(iw) if s.on_stack[w] => s.low[v] = s.low[v].min(iw),
                    _ => {}
                }
            }
            if Some(s.low[v]) == s.index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = s.stack.pop().expect("tarjan stack");
                    s.on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                let cyclic = comp.len() > 1 || c.successors(v).any(|w| w == v);
                if cyclic {
                    s.out.push(comp);
                }
            }
        }
        let n = self.elements.len();
        let mut s = State {
            index: vec![None; n],
            low: vec![0; n],
            on_stack: vec![false; n],
            stack: Vec::new(),
            next: 0,
            out: Vec::new(),
        };
        for v in 0..n {
            if s.index[v].is_none() {
                visit(self, v, &mut s);
            }
        }
        s.out
    }
}
