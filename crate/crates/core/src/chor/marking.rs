//! Token game over sequence flows.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{ChorError, Choreography, ElementKind, Vars};
use crate::codec::{DecodeError, Decoder, Encoder};

/// Multiset of tokens keyed by sequence-flow position in the model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Marking {
    tokens: BTreeMap<usize, u32>,
}

impl Marking {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn on(&self, flow: usize) -> u32 {
        self.tokens.get(&flow).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.tokens.values().map(|&n| u64::from(n)).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.tokens.iter().map(|(&f, &n)| (f, n))
    }

    pub fn add(&mut self, flow: usize) {
        *self.tokens.entry(flow).or_insert(0) += 1;
    }

    fn take(&mut self, flow: usize) {
        match self.tokens.get_mut(&flow) {
            Some(n) if *n > 1 => *n -= 1,
            Some(_) => {
                self.tokens.remove(&flow);
            }
            None => unreachable!("take from an empty flow"),
        }
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.tokens.len() as u32);
        for (&flow, &n) in &self.tokens {
            enc.u32(flow as u32).u32(n);
        }
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let n = dec.u32()? as usize;
        let mut tokens = BTreeMap::new();
        let mut last = None;
        for _ in 0..n {
            let flow = dec.u32()? as usize;
            let count = dec.u32()?;
            if count == 0 || last.is_some_and(|l| l >= flow) {
                return Err(DecodeError::Invalid("marking entries must be sorted and non-zero".into()));
            }
            last = Some(flow);
            tokens.insert(flow, count);
        }
        Ok(Self { tokens })
    }

    /// Human-readable view keyed by `from->to` flow labels.
    pub fn labelled(&self, c: &Choreography) -> BTreeMap<String, u32> {
        self.tokens
            .iter()
            .map(|(&f, &n)| (c.flows()[f].label(), n))
            .collect()
    }
}

impl Choreography {
    /// A token on the start event's outgoing flow, advanced through every
    /// gateway that can fire without instance variables.
    pub fn initial_marking(&self) -> Marking {
        let mut m = Marking::empty();
        if let Some(start) = self.elements.iter().position(|e| e.kind == ElementKind::StartEvent) {
            if let Some(&flow) = self.outgoing(start).first() {
                m.add(flow);
            }
        }
        // Exclusive splits whose conditions need variables stay put.
        self.advance(m.clone(), Some(&Vars::new()))
            .or_else(|_| self.advance(m.clone(), None))
            .map_or(m, |(settled, _)| settled)
    }

    fn is_enabled_idx(&self, m: &Marking, idx: usize) -> bool {
        let inc = self.incoming(idx);
        match self.elements[idx].kind {
            ElementKind::StartEvent | ElementKind::EndEvent => false,
            ElementKind::AndJoin => !inc.is_empty() && inc.iter().all(|&f| m.on(f) > 0),
            _ => inc.iter().any(|&f| m.on(f) > 0),
        }
    }

    /// Elements whose input tokens are present, in document order. End
    /// events absorb tokens and are never listed.
    pub fn enabled(&self, m: &Marking) -> Vec<String> {
        (0..self.elements.len())
            .filter(|&i| self.is_enabled_idx(m, i))
            .map(|i| self.elements[i].id.clone())
            .collect()
    }

    /// Enabled choreography tasks only.
    pub fn enabled_tasks(&self, m: &Marking) -> Vec<String> {
        (0..self.elements.len())
            .filter(|&i| self.elements[i].kind == ElementKind::ChoreographyTask && self.is_enabled_idx(m, i))
            .map(|i| self.elements[i].id.clone())
            .collect()
    }

    /// Fires one element. Pure: `m` is left untouched.
    pub fn fire(&self, m: &Marking, element_id: &str, vars: &Vars) -> Result<Marking, ChorError> {
        let idx = self
            .element_index(element_id)
            .ok_or_else(|| ChorError::UnknownElement(element_id.to_owned()))?;
        if !self.is_enabled_idx(m, idx) {
            return Err(ChorError::NotEnabled(element_id.to_owned()));
        }
        self.fire_idx(m, idx, vars)
    }

    fn fire_idx(&self, m: &Marking, idx: usize, vars: &Vars) -> Result<Marking, ChorError> {
        let element = &self.elements[idx];
        let out = self.outgoing(idx);
        let produce: Vec<usize> = match element.kind {
            ElementKind::AndSplit => out.to_vec(),
            ElementKind::XorSplit => vec![self.route(idx, vars)?],
            _ => out.first().copied().into_iter().collect(),
        };
        let mut next = m.clone();
        let inc = self.incoming(idx);
        if element.kind == ElementKind::AndJoin {
            inc.iter().for_each(|&f| next.take(f));
        } else {
            let f = *inc.iter().find(|&&f| m.on(f) > 0).expect("enabled element has a token");
            next.take(f);
        }
        produce.into_iter().for_each(|f| next.add(f));
        Ok(next)
    }

    /// First condition-true flow in document order, else the default flow.
    /// Every condition is evaluated so unbound variables always surface.
    fn route(&self, idx: usize, vars: &Vars) -> Result<usize, ChorError> {
        let mut chosen = None;
        let mut default = None;
        for &f in self.outgoing(idx) {
            let flow = &self.flows[f];
            if flow.default {
                default.get_or_insert(f);
                continue;
            }
            if let Some(cond) = &flow.condition {
                if cond.eval(vars)? && chosen.is_none() {
                    chosen = Some(f);
                }
            }
        }
        chosen
            .or(default)
            .ok_or_else(|| ChorError::NoRoute(self.elements[idx].id.clone()))
    }

    /// Fires enabled gateways, first in document order, until only tasks or
    /// end events hold tokens. Returns the settled marking and the gateways
    /// fired in order.
    pub fn settle(&self, m: &Marking, vars: &Vars) -> Result<(Marking, Vec<String>), ChorError> {
        self.advance(m.clone(), Some(vars))
    }

    /// With `vars = None`, exclusive splits are left in place.
    fn advance(&self, mut m: Marking, vars: Option<&Vars>) -> Result<(Marking, Vec<String>), ChorError> {
        let empty = Vars::new();
        let budget = 4 * (self.elements.len() + self.flows.len()) + 16;
        let mut fired = Vec::new();
        loop {
            let next = (0..self.elements.len()).find(|&i| {
                let kind = self.elements[i].kind;
                kind.is_gateway()
                    && (vars.is_some() || kind != ElementKind::XorSplit)
                    && self.is_enabled_idx(&m, i)
            });
            let Some(idx) = next else {
                return Ok((m, fired));
            };
            if fired.len() >= budget {
                return Err(ChorError::GatewayLivelock);
            }
            m = self.fire_idx(&m, idx, vars.unwrap_or(&empty))?;
            fired.push(self.elements[idx].id.clone());
        }
    }

    /// Fires a task and settles the gateways behind it.
    pub fn execute(&self, m: &Marking, task_id: &str, vars: &Vars) -> Result<Marking, ChorError> {
        let e = self
            .element(task_id)
            .ok_or_else(|| ChorError::UnknownElement(task_id.to_owned()))?;
        if e.kind != ElementKind::ChoreographyTask {
            return Err(ChorError::NotEnabled(task_id.to_owned()));
        }
        let fired = self.fire(m, task_id, vars)?;
        Ok(self.settle(&fired, vars)?.0)
    }

    /// True when tokens remain only on flows into end events.
    pub fn is_completed(&self, m: &Marking) -> bool {
        !m.is_empty()
            && m
                .iter()
                .all(|(f, _)| self.elements[self.flow_target(f)].kind == ElementKind::EndEvent)
    }

    /// End events that currently hold a token, in document order.
    pub fn reached_ends(&self, m: &Marking) -> Vec<String> {
        let mut ends: Vec<usize> = m
            .iter()
            .map(|(f, _)| self.flow_target(f))
            .filter(|&t| self.elements[t].kind == ElementKind::EndEvent)
            .collect();
        ends.sort_unstable();
        ends.dedup();
        ends.into_iter().map(|i| self.elements[i].id.clone()).collect()
    }
}
