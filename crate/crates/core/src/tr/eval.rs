//! Condition evaluation, rule selection and edge-triggered stepping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::{ActionExpr, CondExpr, Substitution, Term, TrPolicy};
use crate::facts::FactStore;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unsafe negation: variable `{0}` is unbound inside `not`")]
    UnsafeNegation(String),
    #[error("action variable `{0}` is unbound")]
    UnboundActionVariable(String),
    #[error("instance bindings do not match parameters of `{policy}`: {detail}")]
    Bindings { policy: String, detail: String },
}

fn bind(term: &Term, value: &str, s: &mut Substitution) -> bool {
    match term {
        Term::Const(c) => c == value,
        Term::Var(v) => match s.get(v) {
            Some(bound) => bound == value,
            None => {
                s.insert(v.clone(), value.to_owned());
                true
            }
        },
        Term::Path { var, field } => {
            let Some(base) = value
                .strip_suffix(field.as_str())
                .and_then(|rest| rest.strip_suffix('.'))
            else {
                return false;
            };
            match s.get(var) {
                Some(bound) => bound == base,
                None => {
                    s.insert(var.clone(), base.to_owned());
                    true
                }
            }
        }
    }
}

fn push_unique(out: &mut Vec<Substitution>, s: Substitution) {
    if !out.contains(&s) {
        out.push(s);
    }
}

fn flatten_and<'a>(c: &'a CondExpr, out: &mut Vec<&'a CondExpr>) {
    match c {
        CondExpr::And(a, b) => {
            flatten_and(a, out);
            flatten_and(b, out);
        }
        other => out.push(other),
    }
}

fn eval_into(
    c: &CondExpr,
    facts: &FactStore,
    seed: &Substitution,
    out: &mut Vec<Substitution>,
) -> Result<(), EvalError> {
    match c {
        CondExpr::True => push_unique(out, seed.clone()),
        CondExpr::Atom { predicate, args } => {
            for fact in facts.matching(predicate, args.len()) {
                let mut s = seed.clone();
                if args.iter().zip(&fact.args).all(|(t, v)| bind(t, v, &mut s)) {
                    push_unique(out, s);
                }
            }
        }
        CondExpr::Not(inner) => {
            if let Some(v) = inner.variables().into_iter().find(|v| !seed.contains_key(v)) {
                return Err(EvalError::UnsafeNegation(v));
            }
            if eval_condition(inner, facts, seed)?.is_empty() {
                push_unique(out, seed.clone());
            }
        }
        CondExpr::Or(a, b) => {
            eval_into(a, facts, seed, out)?;
            eval_into(b, facts, seed, out)?;
        }
        CondExpr::And(..) => {
            // Conjuncts that contain a negation run last so that positive
            // atoms have bound their variables first.
            let mut conjuncts = Vec::new();
            flatten_and(c, &mut conjuncts);
            conjuncts.sort_by_key(|c| c.contains_negation());
            let mut partial = vec![seed.clone()];
            for conj in conjuncts {
                let mut next = Vec::new();
                for s in &partial {
                    eval_into(conj, facts, s, &mut next)?;
                }
                partial = next;
                if partial.is_empty() {
                    break;
                }
            }
            for s in partial {
                push_unique(out, s);
            }
        }
    }
    Ok(())
}

/// All substitutions extending `seed` that make `c` true, in the order
/// induced by fact insertion order. Negation is negation-as-failure over
/// `facts`.
pub fn eval_condition(c: &CondExpr, facts: &FactStore, seed: &Substitution) -> Result<Vec<Substitution>, EvalError> {
    let mut out = Vec::new();
    eval_into(c, facts, seed, &mut out)?;
    Ok(out)
}

/// Ground call produced by substituting a rule's action.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionInvocation {
    pub name: String,
    pub args: Vec<String>,
}

impl std::fmt::Display for ActionInvocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let args: Vec<String> = self.args.iter().map(|a| super::render::render_constant(a)).collect();
        write!(f, "{}({})", self.name, args.join(", "))
    }
}

/// Ordered stages; members of one stage are concurrent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub stages: Vec<Vec<ActionInvocation>>,
}

impl ActionPlan {
    pub fn invocations(&self) -> impl Iterator<Item = &ActionInvocation> {
        self.stages.iter().flatten()
    }
}

fn ground(term: &Term, s: &Substitution) -> Result<String, EvalError> {
    match term {
        Term::Const(c) => Ok(c.clone()),
        Term::Var(v) => s
            .get(v)
            .cloned()
            .ok_or_else(|| EvalError::UnboundActionVariable(v.clone())),
        Term::Path { var, field } => s
            .get(var)
            .map(|b| format!("{b}.{field}"))
            .ok_or_else(|| EvalError::UnboundActionVariable(var.clone())),
    }
}

/// Flattens an action into stages. `a then b` appends b's stages after a's;
/// `a par b` merges the two stage lists position by position, which keeps
/// the ordering inside each branch when a parenthesised sequence runs in
/// parallel with something else.
pub fn plan_action(a: &ActionExpr, s: &Substitution) -> Result<ActionPlan, EvalError> {
    fn go(a: &ActionExpr, s: &Substitution) -> Result<Vec<Vec<ActionInvocation>>, EvalError> {
        Ok(match a {
            ActionExpr::Call { name, args } => vec![vec![ActionInvocation {
                name: name.clone(),
                args: args.iter().map(|t| ground(t, s)).collect::<Result<_, _>>()?,
            }]],
            ActionExpr::Seq(x, y) => {
                let mut stages = go(x, s)?;
                stages.extend(go(y, s)?);
                stages
            }
            ActionExpr::Par(x, y) => {
                let (mut left, right) = (go(x, s)?, go(y, s)?);
                for (i, stage) in right.into_iter().enumerate() {
                    match left.get_mut(i) {
                        Some(l) => l.extend(stage),
                        None => left.push(stage),
                    }
                }
                left
            }
        })
    }
    Ok(ActionPlan { stages: go(a, s)? })
}

/// A rule selection: index into the policy plus the chosen substitution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub rule: usize,
    pub substitution: Substitution,
}

/// A rule firing emitted by [`TrInstance::step`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Firing {
    pub rule: usize,
    pub line: u32,
    pub substitution: Substitution,
    pub plan: ActionPlan,
}

/// A TR policy bound to concrete parameter values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrInstance {
    policy: TrPolicy,
    bindings: BTreeMap<String, String>,
    last_firing: Option<Selection>,
}

impl TrInstance {
    pub fn new(policy: TrPolicy, bindings: BTreeMap<String, String>) -> Result<Self, EvalError> {
        let missing: Vec<_> = policy.params.iter().filter(|p| !bindings.contains_key(*p)).collect();
        let extra: Vec<_> = bindings.keys().filter(|k| !policy.params.contains(k)).collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(EvalError::Bindings {
                policy: policy.name.clone(),
                detail: format!("missing {missing:?}, unexpected {extra:?}"),
            });
        }
        Ok(Self {
            policy,
            bindings,
            last_firing: None,
        })
    }

    /// Binds parameters positionally.
    pub fn with_args<I, S>(policy: TrPolicy, args: I) -> Result<Self, EvalError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let args: Vec<String> = args.into_iter().map(Into::into).collect();
        if args.len() != policy.params.len() {
            return Err(EvalError::Bindings {
                policy: policy.name.clone(),
                detail: format!("expected {} arguments, got {}", policy.params.len(), args.len()),
            });
        }
        let bindings = policy.params.iter().cloned().zip(args).collect();
        Self::new(policy, bindings)
    }

    pub fn policy(&self) -> &TrPolicy {
        &self.policy
    }

    pub fn bindings(&self) -> &BTreeMap<String, String> {
        &self.bindings
    }

    pub fn last_firing(&self) -> Option<&Selection> {
        self.last_firing.as_ref()
    }

    /// Forgets the last firing so the current selection fires again on the
    /// next step.
    pub fn rearm(&mut self) {
        self.last_firing = None;
    }

    /// Highest-priority rule whose condition holds, with its first
    /// substitution.
    pub fn select_rule(&self, facts: &FactStore) -> Result<Option<Selection>, EvalError> {
        for (rule, r) in self.policy.rules.iter().enumerate() {
            if let Some(substitution) = eval_condition(&r.condition, facts, &self.bindings)?.into_iter().next() {
                return Ok(Some(Selection { rule, substitution }));
            }
        }
        Ok(None)
    }

    /// Edge-triggered evaluation: emits the selected rule's action plan only
    /// when the selection differs from the previous one.
    pub fn step(&mut self, facts: &FactStore) -> Result<Option<Firing>, EvalError> {
        let selection = self.select_rule(facts)?;
        if selection == self.last_firing {
            return Ok(None);
        }
        let firing = match &selection {
            None => None,
            Some(sel) => {
                let plan = plan_action(&self.policy.rules[sel.rule].action, &sel.substitution)?;
                Some(Firing {
                    rule: sel.rule,
                    line: self.policy.rule_line(sel.rule),
                    substitution: sel.substitution.clone(),
                    plan,
                })
            }
        };
        self.last_firing = selection;
        Ok(firing)
    }
}
