//! Ground facts and the insertion-ordered fact store the TR engine reads.

use std::fmt;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tr::render::render_constant;

/// A ground predicate such as `needsConsent('Alice', 'Bob')`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fact {
    pub predicate: String,
    pub args: Vec<String>,
}

impl Fact {
    pub fn new<I, S>(predicate: impl Into<String>, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            predicate: predicate.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    /// A zero-arity fact, e.g. `saveCurrentPreferences`.
    pub fn flag(predicate: impl Into<String>) -> Self {
        Self {
            predicate: predicate.into(),
            args: Vec::new(),
        }
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.predicate)?;
        if self.args.is_empty() {
            return Ok(());
        }
        f.write_str("(")?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(&render_constant(a))?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FactError {
    #[error("fact {0} is both asserted and retracted in one update")]
    Overlap(String),
}

/// Insertion-ordered set of facts with a revision counter.
///
/// Iteration order is the order facts were (last) asserted; the TR engine
/// relies on it to choose the first substitution deterministically.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactStore {
    facts: IndexSet<Fact>,
    revision: u64,
}

impl FactStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_facts<I: IntoIterator<Item = Fact>>(facts: I) -> Self {
        let facts: IndexSet<Fact> = facts.into_iter().collect();
        let revision = u64::from(!facts.is_empty());
        Self { facts, revision }
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn contains(&self, fact: &Fact) -> bool {
        self.facts.contains(fact)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Fact> {
        self.facts.iter()
    }

    /// Facts with the given predicate and arity, in insertion order.
    pub fn matching<'a>(&'a self, predicate: &'a str, arity: usize) -> impl Iterator<Item = &'a Fact> {
        self.facts
            .iter()
            .filter(move |f| f.predicate == predicate && f.args.len() == arity)
    }

    /// Applies one atomic update. The revision is bumped once if anything
    /// changed; re-asserting a present fact or retracting an absent one is a
    /// no-op.
    pub fn update(&mut self, assert: &[Fact], retract: &[Fact]) -> Result<u64, FactError> {
        if let Some(f) = assert.iter().find(|f| retract.contains(f)) {
            return Err(FactError::Overlap(f.to_string()));
        }
        let mut changed = false;
        for f in retract {
            changed |= self.facts.shift_remove(f);
        }
        for f in assert {
            changed |= self.facts.insert(f.clone());
        }
        if changed {
            self.revision += 1;
        }
        Ok(self.revision)
    }

    pub fn assert(&mut self, fact: Fact) -> u64 {
        self.update(&[fact], &[]).expect("single assert cannot overlap")
    }

    pub fn retract(&mut self, fact: &Fact) -> u64 {
        self.update(&[], std::slice::from_ref(fact))
            .expect("single retract cannot overlap")
    }

    /// Retracts every fact with the given predicate.
    pub fn retract_all(&mut self, predicate: &str) -> u64 {
        let doomed: Vec<Fact> = self
            .facts
            .iter()
            .filter(|f| f.predicate == predicate)
            .cloned()
            .collect();
        self.update(&[], &doomed).expect("retract-only update")
    }
}

impl<'a> IntoIterator for &'a FactStore {
    type Item = &'a Fact;
    type IntoIter = indexmap::set::Iter<'a, Fact>;

    fn into_iter(self) -> Self::IntoIter {
        self.facts.iter()
    }
}
