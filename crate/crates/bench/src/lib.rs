//! Shared inputs for the criterion benches.

use std::path::PathBuf;

use trconsent_core::Fact;

pub fn fixture_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

pub fn fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture_path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// `n` unrelated facts followed by one `needsConsent`, so selection has to
/// scan past noise to find the match.
pub fn noisy_facts(n: usize, patient: &str) -> Vec<Fact> {
    let mut facts: Vec<Fact> = (0..n)
        .map(|i| Fact::new("visited", [format!("p{i}"), format!("clinic{}", i % 7)]))
        .collect();
    facts.push(Fact::new("needsConsent", [patient, "bob"]));
    facts
}
