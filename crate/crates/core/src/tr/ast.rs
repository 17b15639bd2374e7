use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Argument of a condition atom or an action call.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Term {
    /// Capital-initial identifier.
    Var(String),
    /// Ground label: lowercase identifier, number or quoted string.
    Const(String),
    /// `Patient.Policy`: the value bound to `var` suffixed with `.field`.
    Path { var: String, field: String },
}

impl Term {
    pub fn var(name: impl Into<String>) -> Self {
        Term::Var(name.into())
    }

    pub fn constant(value: impl Into<String>) -> Self {
        Term::Const(value.into())
    }

    pub fn path(var: impl Into<String>, field: impl Into<String>) -> Self {
        Term::Path {
            var: var.into(),
            field: field.into(),
        }
    }

    pub fn variable(&self) -> Option<&str> {
        match self {
            Term::Var(v) | Term::Path { var: v, .. } => Some(v),
            Term::Const(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum CondExpr {
    True,
    Atom { predicate: String, args: Vec<Term> },
    Not(Box<CondExpr>),
    And(Box<CondExpr>, Box<CondExpr>),
    Or(Box<CondExpr>, Box<CondExpr>),
}

impl CondExpr {
    pub fn atom<I: IntoIterator<Item = Term>>(predicate: impl Into<String>, args: I) -> Self {
        CondExpr::Atom {
            predicate: predicate.into(),
            args: args.into_iter().collect(),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: CondExpr) -> Self {
        CondExpr::Not(Box::new(inner))
    }

    pub fn and(lhs: CondExpr, rhs: CondExpr) -> Self {
        CondExpr::And(Box::new(lhs), Box::new(rhs))
    }

    pub fn or(lhs: CondExpr, rhs: CondExpr) -> Self {
        CondExpr::Or(Box::new(lhs), Box::new(rhs))
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            CondExpr::True => {}
            CondExpr::Atom { args, .. } => out.extend(args.iter().filter_map(Term::variable).map(str::to_owned)),
            CondExpr::Not(c) => c.collect_vars(out),
            CondExpr::And(a, b) | CondExpr::Or(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn contains_negation(&self) -> bool {
        match self {
            CondExpr::True | CondExpr::Atom { .. } => false,
            CondExpr::Not(_) => true,
            CondExpr::And(a, b) | CondExpr::Or(a, b) => a.contains_negation() || b.contains_negation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ActionExpr {
    Call {
        name: String,
        args: Vec<Term>,
    },
    /// `a then b` (sequential composition).
    Seq(Box<ActionExpr>, Box<ActionExpr>),
    /// `a par b` (concurrent composition).
    Par(Box<ActionExpr>, Box<ActionExpr>),
}

impl ActionExpr {
    pub fn call<I: IntoIterator<Item = Term>>(name: impl Into<String>, args: I) -> Self {
        ActionExpr::Call {
            name: name.into(),
            args: args.into_iter().collect(),
        }
    }

    pub fn seq(lhs: ActionExpr, rhs: ActionExpr) -> Self {
        ActionExpr::Seq(Box::new(lhs), Box::new(rhs))
    }

    pub fn par(lhs: ActionExpr, rhs: ActionExpr) -> Self {
        ActionExpr::Par(Box::new(lhs), Box::new(rhs))
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_calls(&mut |_, args| out.extend(args.iter().filter_map(Term::variable).map(str::to_owned)));
        out
    }

    /// Names of every call in the tree, left to right.
    pub fn call_names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit_calls(&mut |name, _| out.push(name));
        out
    }

    fn visit_calls<'a>(&'a self, f: &mut impl FnMut(&'a str, &'a [Term])) {
        match self {
            ActionExpr::Call { name, args } => f(name, args),
            ActionExpr::Seq(a, b) | ActionExpr::Par(a, b) => {
                a.visit_calls(f);
                b.visit_calls(f);
            }
        }
    }
}

/// One `condition -> action` rule.
///
/// `line` is the 1-based source line the rule was parsed from. It is
/// metadata only and does not take part in equality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrRule {
    pub condition: CondExpr,
    pub action: ActionExpr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
}

impl TrRule {
    pub fn new(condition: CondExpr, action: ActionExpr) -> Self {
        Self {
            condition,
            action,
            line: None,
        }
    }
}

impl PartialEq for TrRule {
    fn eq(&self, other: &Self) -> bool {
        self.condition == other.condition && self.action == other.action
    }
}

impl Eq for TrRule {}

/// A named, parameterised, priority-ordered rule list (index 0 first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrPolicy {
    pub name: String,
    pub params: Vec<String>,
    pub rules: Vec<TrRule>,
}

impl TrPolicy {
    /// Source line of rule `index`, falling back to the line the canonical
    /// rendering would put it on.
    pub fn rule_line(&self, index: usize) -> u32 {
        self.rules
            .get(index)
            .and_then(|r| r.line)
            .unwrap_or(3 + 2 * index as u32)
    }
}

/// Variable → constant map.
pub type Substitution = BTreeMap<String, String>;
