use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use super::{Action, ConsensusTrigger, FactStore, Phase, Plan, Rule, RuleError};

/// Priority descending, then name ascending.
fn canonical(a: &Rule, b: &Rule) -> Ordering {
    b.priority.cmp(&a.priority).then_with(|| a.name.cmp(&b.name))
}

/// Rules whose preconditions hold, in canonical order.
pub fn evaluate<'a>(rules: &'a [Rule], facts: &FactStore) -> Vec<&'a Rule> {
    let mut fireable: Vec<&Rule> = rules.iter().filter(|r| r.is_fireable(facts)).collect();
    fireable.sort_by(|a, b| canonical(a, b));
    fireable
}

/// Head of an already ordered fireable list.
pub fn select<'a>(fireable: &[&'a Rule]) -> Option<&'a Rule> {
    fireable.first().copied()
}

/// Decrements the named rule's priority by one, saturating at `floor`.
pub fn lower_priority(rules: &[Rule], name: &str, floor: u32) -> Result<Vec<Rule>, RuleError> {
    if !rules.iter().any(|r| r.name == name) {
        return Err(RuleError::UnknownRule(name.to_string()));
    }
    Ok(rules
        .iter()
        .cloned()
        .map(|mut r| {
            if r.name == name {
                r.priority = r.priority.saturating_sub(1).max(floor);
            }
            r
        })
        .collect())
}

/// Result of one monitor → analyse → plan step.
#[derive(Clone, Debug, PartialEq)]
pub enum CycleOutcome {
    Idle,
    /// Run these actions now (plain rules, or phase two after agreement).
    Execute { rule: String, actions: Vec<Action> },
    /// Start consensus on the decision tagged `tag`.
    Propose { rule: String, tag: String, actions: Vec<Action> },
    /// Phase two after a refusal; actions are the NACK handling.
    Abort { rule: String, actions: Vec<Action> },
}

/// A manager's rule set together with its initial priorities.
#[derive(Clone, Debug)]
pub struct RuleBase {
    rules: Vec<Rule>,
    initial: BTreeMap<String, u32>,
    floor: u32,
}

impl RuleBase {
    pub fn new(rules: Vec<Rule>) -> Result<Self, RuleError> {
        let mut initial = BTreeMap::new();
        for r in &rules {
            if initial.insert(r.name.clone(), r.priority).is_some() {
                return Err(RuleError::DuplicateRule(r.name.clone()));
            }
        }
        let tags: BTreeSet<&str> = rules
            .iter()
            .filter_map(|r| match &r.phase {
                Phase::Ph1 { tag } => Some(tag.as_str()),
                _ => None,
            })
            .collect();
        for r in &rules {
            if let Phase::Ph2 { tag, .. } = &r.phase {
                if !tags.contains(tag.as_str()) {
                    return Err(RuleError::OrphanPhaseTwo { rule: r.name.clone(), tag: tag.clone() });
                }
            }
        }
        Ok(RuleBase { rules, initial, floor: 0 })
    }

    pub fn empty() -> Self {
        RuleBase { rules: Vec::new(), initial: BTreeMap::new(), floor: 0 }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn control_cycle(&self, facts: &FactStore) -> CycleOutcome {
        let fireable = evaluate(&self.rules, facts);
        let Some(rule) = select(&fireable) else { return CycleOutcome::Idle };
        let name = rule.name.clone();
        let actions = rule.plan.actions.clone();
        match &rule.phase {
            Phase::Plain => CycleOutcome::Execute { rule: name, actions },
            Phase::Ph1 { tag } => CycleOutcome::Propose { rule: name, tag: tag.clone(), actions },
            Phase::Ph2 { on: ConsensusTrigger::Nack, .. } => CycleOutcome::Abort { rule: name, actions },
            Phase::Ph2 { .. } => CycleOutcome::Execute { rule: name, actions },
        }
    }

    /// Lowers one rule's priority; returns the new value.
    pub fn lower(&mut self, name: &str) -> Result<u32, RuleError> {
        self.rules = lower_priority(&self.rules, name, self.floor)?;
        Ok(self.rule(name).map(|r| r.priority).unwrap_or(self.floor))
    }

    pub fn reset_priorities(&mut self) {
        for r in &mut self.rules {
            if let Some(p) = self.initial.get(&r.name) {
                r.priority = *p;
            }
        }
    }

    /// Properties this rule set can satisfy with substitute plans.
    pub fn registry(&self) -> BTreeSet<String> {
        self.rules
            .iter()
            .filter_map(|r| match &r.phase {
                Phase::Ph2 { on: ConsensusTrigger::NeedProperty(p), .. } => Some(p.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn phase_one(&self, tag: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| matches!(&r.phase, Phase::Ph1 { tag: t } if t == tag))
    }

    /// Full decision plan for a phase-one tag: the phase-one actions before
    /// `AskConsensus` followed by the ACK rule's actions, with one substitute
    /// per `needProperty` rule built the same way.
    pub fn decision_plan(&self, tag: &str) -> Option<Plan> {
        let prefix: Vec<Action> = self
            .phase_one(tag)?
            .plan
            .actions
            .iter()
            .filter(|a| **a != Action::AskConsensus)
            .cloned()
            .collect();
        let with_prefix = |actions: &[Action]| {
            let mut v = prefix.clone();
            v.extend_from_slice(actions);
            v
        };
        let mut base = None;
        let mut substitutes = BTreeMap::new();
        for r in &self.rules {
            match &r.phase {
                Phase::Ph2 { tag: t, on: ConsensusTrigger::Ack } if t == tag => {
                    base = Some(with_prefix(&r.plan.actions));
                }
                Phase::Ph2 { tag: t, on: ConsensusTrigger::NeedProperty(p) } if t == tag => {
                    substitutes.insert(p.clone(), with_prefix(&r.plan.actions));
                }
                _ => {}
            }
        }
        Some(Plan { actions: base?, substitutes })
    }
}
