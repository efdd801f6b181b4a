//! Choreography models: parsing, validation and token-marking semantics.
//!
//! Tokens live on sequence flows. An element is enabled when its incoming
//! flows carry tokens (all of them for an `AndJoin`, any of them otherwise).

pub mod condition;
mod document;
mod marking;
mod validate;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abe::Attribute;

pub use condition::{CmpOp, Condition, Expr, Operand, Value, Vars};
pub use document::{ChoreographyDocument, ElementDoc, FieldDoc, FlowDoc, MessageDoc};
pub use marking::Marking;
pub use validate::ValidationIssue;

/// Authority that certifies process roles unless the document says otherwise.
pub const ROLE_AUTHORITY: &str = "A1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChorError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown reference: {0}")]
    UnknownReference(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("malformed element: {0}")]
    Malformed(String),
    #[error("model has {} validation issue(s): {}", .0.len(), join_issues(.0))]
    Invalid(Vec<ValidationIssue>),
    #[error("unknown element `{0}`")]
    UnknownElement(String),
    #[error("element `{0}` is not enabled")]
    NotEnabled(String),
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("exclusive gateway `{0}` has no route for the current variables")]
    NoRoute(String),
    #[error("gateways kept firing without reaching a task or end event")]
    GatewayLivelock,
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ElementKind {
    StartEvent,
    EndEvent,
    ChoreographyTask,
    XorSplit,
    XorJoin,
    AndSplit,
    AndJoin,
}

impl ElementKind {
    pub fn is_gateway(self) -> bool {
        matches!(
            self,
            ElementKind::XorSplit | ElementKind::XorJoin | ElementKind::AndSplit | ElementKind::AndJoin
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Visibility {
    Public,
    Confidential,
}

impl Visibility {
    pub fn as_str(self) -> &'static str {
        match self {
            Visibility::Public => "PUBLIC",
            Visibility::Confidential => "CONFIDENTIAL",
        }
    }
}

impl std::str::FromStr for Visibility {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "PUBLIC" => Ok(Visibility::Public),
            "CONFIDENTIAL" => Ok(Visibility::Confidential),
            other => Err(format!("unknown visibility `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    String,
    Number,
    Boolean,
}

impl FieldType {
    pub fn admits(self, v: &Value) -> bool {
        matches!(
            (self, v),
            (FieldType::String, Value::Str(_))
                | (FieldType::Number, Value::Num(_))
                | (FieldType::Boolean, Value::Bool(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDef {
    pub name: String,
    pub ty: FieldType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageDef {
    pub name: String,
    pub visibility: Visibility,
    pub fields: Vec<FieldDef>,
}

impl MessageDef {
    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Checks a JSON payload against the schema: an object with exactly the
    /// declared fields, each of the declared type.
    pub fn check_payload(&self, payload: &serde_json::Value) -> Result<BTreeMap<String, Value>, String> {
        let obj = payload
            .as_object()
            .ok_or_else(|| format!("payload for `{}` must be a JSON object", self.name))?;
        for key in obj.keys() {
            if self.field(key).is_none() {
                return Err(format!("field `{key}` is not declared by message `{}`", self.name));
            }
        }
        let mut out = BTreeMap::new();
        for f in &self.fields {
            let raw = obj
                .get(&f.name)
                .ok_or_else(|| format!("missing field `{}`", f.name))?;
            let v = Value::from_json(raw)
                .filter(|v| f.ty.admits(v))
                .filter(|v| !matches!(v, Value::Num(n) if !n.is_finite()))
                .ok_or_else(|| format!("field `{}` must be a {:?}", f.name, f.ty).to_lowercase())?;
            out.insert(f.name.clone(), v);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDef {
    pub initiator: String,
    pub recipient: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub id: String,
    pub kind: ElementKind,
    pub task: Option<TaskDef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFlow {
    pub from: String,
    pub to: String,
    pub condition: Option<Condition>,
    pub default: bool,
}

impl SequenceFlow {
    pub fn label(&self) -> String {
        format!("{}->{}", self.from, self.to)
    }
}

/// A parsed, reference-resolved choreography. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Choreography {
    id: String,
    participants: Vec<String>,
    elements: Vec<Element>,
    flows: Vec<SequenceFlow>,
    messages: Vec<MessageDef>,
    role_attributes: BTreeMap<String, Attribute>,
    index: HashMap<String, usize>,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
}

/// Parses and validates a choreography document.
pub fn parse_choreography(text: &str) -> Result<Choreography, ChorError> {
    let doc = ChoreographyDocument::from_json(text)?;
    let c = Choreography::from_document(&doc)?;
    let issues = c.validate();
    if issues.is_empty() {
        Ok(c)
    } else {
        Err(ChorError::Invalid(issues))
    }
}

impl Choreography {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn participants(&self) -> &[String] {
        &self.participants
    }

    pub fn is_participant(&self, role: &str) -> bool {
        self.participants.iter().any(|p| p == role)
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn flows(&self) -> &[SequenceFlow] {
        &self.flows
    }

    pub fn messages(&self) -> &[MessageDef] {
        &self.messages
    }

    pub fn element(&self, id: &str) -> Option<&Element> {
        self.index.get(id).map(|&i| &self.elements[i])
    }

    pub(crate) fn element_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub(crate) fn incoming(&self, element: usize) -> &[usize] {
        &self.incoming[element]
    }

    pub(crate) fn outgoing(&self, element: usize) -> &[usize] {
        &self.outgoing[element]
    }

    pub(crate) fn flow_target(&self, flow: usize) -> usize {
        self.index[&self.flows[flow].to]
    }

    pub fn message(&self, name: &str) -> Option<&MessageDef> {
        self.messages.iter().find(|m| m.name == name)
    }

    /// Choreography tasks in document order.
    pub fn tasks(&self) -> impl Iterator<Item = (&Element, &TaskDef)> {
        self.elements
            .iter()
            .filter_map(|e| e.task.as_ref().map(|t| (e, t)))
    }

    pub fn task(&self, id: &str) -> Option<&TaskDef> {
        self.element(id).and_then(|e| e.task.as_ref())
    }

    pub fn task_message(&self, task_id: &str) -> Option<&MessageDef> {
        self.task(task_id).and_then(|t| self.message(&t.message))
    }

    pub fn confidential_tasks(&self) -> impl Iterator<Item = (&Element, &TaskDef)> {
        self.tasks().filter(|(_, t)| {
            self.message(&t.message)
                .is_some_and(|m| m.visibility == Visibility::Confidential)
        })
    }

    /// The attribute certifying `role`, `<role>@A1` unless the document maps it.
    pub fn role_attribute(&self, role: &str) -> Attribute {
        self.role_attributes
            .get(role)
            .cloned()
            .unwrap_or_else(|| Attribute::new(role, ROLE_AUTHORITY))
    }

    /// Resolves every cross-reference of a document. Does not run the
    /// structural validator; see [`parse_choreography`].
    pub fn from_document(doc: &ChoreographyDocument) -> Result<Self, ChorError> {
        let mut participants: Vec<String> = Vec::new();
        for p in &doc.participants {
            if participants.contains(p) {
                return Err(ChorError::DuplicateId(p.clone()));
            }
            participants.push(p.clone());
        }

        let mut messages: Vec<MessageDef> = Vec::new();
        for m in &doc.messages {
            if messages.iter().any(|x| x.name == m.name) {
                return Err(ChorError::DuplicateId(m.name.clone()));
            }
            let mut fields: Vec<FieldDef> = Vec::new();
            for f in &m.fields {
                if fields.iter().any(|x| x.name == f.name) {
                    return Err(ChorError::DuplicateId(format!("{}.{}", m.name, f.name)));
                }
                fields.push(FieldDef {
                    name: f.name.clone(),
                    ty: f.ty,
                });
            }
            messages.push(MessageDef {
                name: m.name.clone(),
                visibility: m.visibility,
                fields,
            });
        }

        let mut elements = Vec::with_capacity(doc.elements.len());
        let mut index = HashMap::new();
        for e in &doc.elements {
            if index.insert(e.id.clone(), elements.len()).is_some() {
                return Err(ChorError::DuplicateId(e.id.clone()));
            }
            let task = if e.kind == ElementKind::ChoreographyTask {
                let need = |v: &Option<String>, what: &str| {
                    v.clone()
                        .ok_or_else(|| ChorError::Malformed(format!("task `{}` has no {what}", e.id)))
                };
                let t = TaskDef {
                    initiator: need(&e.initiator, "initiator")?,
                    recipient: need(&e.recipient, "recipient")?,
                    message: need(&e.message, "message")?,
                };
                for role in [&t.initiator, &t.recipient] {
                    if !participants.contains(role) {
                        return Err(ChorError::UnknownReference(format!(
                            "task `{}` names role `{role}` which is not a participant",
                            e.id
                        )));
                    }
                }
                if !messages.iter().any(|m| m.name == t.message) {
                    return Err(ChorError::UnknownReference(format!(
                        "task `{}` sends undeclared message `{}`",
                        e.id, t.message
                    )));
                }
                Some(t)
            } else {
                if e.initiator.is_some() || e.recipient.is_some() || e.message.is_some() {
                    return Err(ChorError::Malformed(format!(
                        "`{}` is a {:?} and cannot carry task fields",
                        e.id, e.kind
                    )));
                }
                None
            };
            elements.push(Element {
                id: e.id.clone(),
                kind: e.kind,
                task,
            });
        }

        let mut flows = Vec::with_capacity(doc.flows.len());
        let mut incoming = vec![Vec::new(); elements.len()];
        let mut outgoing = vec![Vec::new(); elements.len()];
        for f in &doc.flows {
            let from = *index
                .get(&f.from)
                .ok_or_else(|| ChorError::UnknownReference(format!("flow source `{}`", f.from)))?;
            let to = *index
                .get(&f.to)
                .ok_or_else(|| ChorError::UnknownReference(format!("flow target `{}`", f.to)))?;
            let condition = f.condition.as_deref().map(Condition::parse).transpose()?;
            outgoing[from].push(flows.len());
            incoming[to].push(flows.len());
            flows.push(SequenceFlow {
                from: f.from.clone(),
                to: f.to.clone(),
                condition,
                default: f.default,
            });
        }

        let mut role_attributes = BTreeMap::new();
        for (role, attr) in &doc.attributes {
            if !participants.contains(role) {
                return Err(ChorError::UnknownReference(format!(
                    "attribute mapping for `{role}` which is not a participant"
                )));
            }
            let parsed: Attribute = attr.parse().map_err(|e| ChorError::Malformed(format!("role `{role}`: {e}")))?;
            role_attributes.insert(role.clone(), parsed);
        }

        let c = Self {
            id: doc.id.clone(),
            participants,
            elements,
            flows,
            messages,
            role_attributes,
            index,
            incoming,
            outgoing,
        };
        for flow in &c.flows {
            if let Some(cond) = &flow.condition {
                c.check_condition(cond)?;
            }
        }
        Ok(c)
    }

    /// Conditions may only read PUBLIC fields of tasks in this model, and
    /// literal comparisons must match the field's declared type.
    fn check_condition(&self, cond: &Condition) -> Result<(), ChorError> {
        let field_type = |var: &str| -> Result<FieldType, ChorError> {
            let (task, field) = var.split_once('.').expect("lexer guarantees task.field");
            let unknown = |why: &str| ChorError::UnknownReference(format!("`{var}` in `{}`: {why}", cond.source));
            let msg = self.task_message(task).ok_or_else(|| unknown("no such task"))?;
            if msg.visibility != Visibility::Public {
                return Err(unknown("message is confidential"));
            }
            msg.field(field)
                .map(|f| f.ty)
                .ok_or_else(|| unknown("no such field"))
        };
        for var in cond.variables() {
            field_type(var)?;
        }
        let ty_of = |o: &Operand| -> Result<FieldType, ChorError> {
            Ok(match o {
                Operand::Var(v) => field_type(v)?,
                Operand::Lit(Value::Str(_)) => FieldType::String,
                Operand::Lit(Value::Num(_)) => FieldType::Number,
                Operand::Lit(Value::Bool(_)) => FieldType::Boolean,
            })
        };
        for (a, op, b) in cond.comparisons() {
            let (ta, tb) = (ty_of(a)?, ty_of(b)?);
            if ta != tb {
                return Err(ChorError::TypeMismatch(format!(
                    "`{}` compares {ta:?} with {tb:?}",
                    cond.source
                )));
            }
            if ta == FieldType::Boolean && !matches!(op, CmpOp::Eq | CmpOp::Ne) {
                return Err(ChorError::TypeMismatch(format!(
                    "`{}` orders booleans",
                    cond.source
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Choreography {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} participants, {} elements, {} flows)",
            self.id,
            self.participants.len(),
            self.elements.len(),
            self.flows.len()
        )
    }
}

#[cfg(test)]
mod tests;
