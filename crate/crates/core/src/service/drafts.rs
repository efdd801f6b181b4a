//! Default policy drafts for the confidential tasks of a process.

use std::collections::BTreeMap;

use crate::abe::{Attribute, PolicyTree};
use crate::api::PolicyDraft;
use crate::chor::Choreography;
use crate::contracts::confinement_attribute_name;
use crate::digest::Digest;

pub fn confinement_attribute(process_id: &Digest) -> Attribute {
    Attribute::new(&confinement_attribute_name(process_id), crate::chor::ROLE_AUTHORITY)
}

/// One draft per confidential task, in document order.
///
/// A draft admits every role that sends or receives the task's message
/// anywhere in the model, in participant order, followed by the custom
/// roles, and conjoins the process confinement attribute. Pure in its inputs.
pub fn compose_drafts(
    model: &Choreography,
    process_id: &Digest,
    custom_roles: &BTreeMap<String, Attribute>,
) -> Vec<PolicyDraft> {
    let confine = PolicyTree::Attr(confinement_attribute(process_id));
    model
        .confidential_tasks()
        .map(|(el, task)| {
            let involved: Vec<&String> = model
                .participants()
                .iter()
                .filter(|p| {
                    model
                        .tasks()
                        .any(|(_, t)| t.message == task.message && (&t.initiator == *p || &t.recipient == *p))
                })
                .collect();
            let mut attrs: Vec<Attribute> = Vec::new();
            let candidates = involved
                .into_iter()
                .map(|r| model.role_attribute(r))
                .chain(custom_roles.values().cloned());
            for a in candidates {
                if !attrs.contains(&a) {
                    attrs.push(a);
                }
            }
            let readers = if attrs.len() == 1 {
                PolicyTree::Attr(attrs.remove(0))
            } else {
                PolicyTree::Or(attrs.into_iter().map(PolicyTree::Attr).collect())
            };
            PolicyDraft {
                task_id: el.id.clone(),
                policy: PolicyTree::And(vec![readers, confine.clone()]).render(),
                editable: true,
            }
        })
        .collect()
}
