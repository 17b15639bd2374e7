//! Shared test support: fixture paths, random generators for TR material
//! and a brute-force evaluator used as an oracle for the engine.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trconsent_core::context::FixtureInfoPoint;
use trconsent_core::facts::{Fact, FactStore};
use trconsent_core::time::TimeOfDay;
use trconsent_core::tr::{ActionExpr, CondExpr, Term, TrPolicy, TrRule};
use trconsent_core::{
    evaluate_access, instantiate_policy, match_templates, parse_authorization_policy, AccessRequest, AccessRight,
    AuthorizationPolicy, Command, ConsentRequest, ContextSnapshot, Engine, Library, Outcome, TemplateConfig,
};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixtures().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub type Assignment = BTreeMap<String, String>;

pub const PARAM: &str = "P";
const VARS: [&str; 3] = ["X", "Y", "Z"];
const CONSTS: [&str; 3] = ["a", "b", "c"];
const PREDICATES: [(&str, usize); 4] = [("p", 1), ("q", 2), ("r", 0), ("s", 2)];

pub struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn term(&mut self, allow_vars: bool) -> Term {
        match self.rng.random_range(0..10) {
            0..=4 if allow_vars => Term::var(*VARS.choose(&mut self.rng).unwrap()),
            5 | 6 => Term::var(PARAM),
            _ => Term::constant(*CONSTS.choose(&mut self.rng).unwrap()),
        }
    }

    fn atom(&mut self, allow_vars: bool) -> CondExpr {
        let (name, arity) = *PREDICATES.choose(&mut self.rng).unwrap();
        let args: Vec<Term> = (0..arity).map(|_| self.term(allow_vars)).collect();
        CondExpr::atom(name, args)
    }

    /// Random condition. Negated parts only mention the parameter and
    /// constants, so they are always safe to evaluate.
    pub fn condition(&mut self, depth: u32, allow_or: bool) -> CondExpr {
        self.cond_inner(depth, allow_or, true)
    }

    fn cond_inner(&mut self, depth: u32, allow_or: bool, allow_vars: bool) -> CondExpr {
        let roll = if depth == 0 { 0 } else { self.rng.random_range(0..10) };
        match roll {
            0..=3 => self.atom(allow_vars),
            4 if allow_vars => CondExpr::True,
            4 | 5 => CondExpr::not(self.cond_inner(depth - 1, allow_or, false)),
            6 | 7 if allow_or => CondExpr::or(
                self.cond_inner(depth - 1, allow_or, allow_vars),
                self.cond_inner(depth - 1, allow_or, allow_vars),
            ),
            _ => CondExpr::and(
                self.cond_inner(depth - 1, allow_or, allow_vars),
                self.cond_inner(depth - 1, allow_or, allow_vars),
            ),
        }
    }

    pub fn facts(&mut self, max: usize) -> FactStore {
        let n = self.rng.random_range(0..=max);
        let mut store = FactStore::new();
        for _ in 0..n {
            let (name, arity) = *PREDICATES.choose(&mut self.rng).unwrap();
            let args: Vec<&str> = (0..arity).map(|_| *CONSTS.choose(&mut self.rng).unwrap()).collect();
            store.assert(Fact::new(name, args));
        }
        store
    }

    pub fn seed_binding(&mut self) -> Assignment {
        [(PARAM.to_string(), CONSTS.choose(&mut self.rng).unwrap().to_string())].into()
    }

    /// Policy of up to `max_rules` rules with argument-free actions, for
    /// selection checks.
    pub fn selection_policy(&mut self, max_rules: usize) -> TrPolicy {
        let n = self.rng.random_range(1..=max_rules);
        let rules = (0..n)
            .map(|i| TrRule {
                condition: self.condition(3, true),
                action: ActionExpr::call(format!("act{i}"), []),
                line: None,
            })
            .collect();
        TrPolicy {
            name: "random".into(),
            params: vec![PARAM.into()],
            rules,
        }
    }

    /// Policy exercising the whole surface syntax, for round-trip checks.
    pub fn policy(&mut self) -> TrPolicy {
        let nparams = self.rng.random_range(0..=3);
        let params: Vec<String> = (0..nparams).map(|i| format!("Param{i}")).collect();
        let nrules = self.rng.random_range(1..=6);
        let rules = (0..nrules)
            .map(|_| {
                let condition = self.rich_condition(3);
                let mut vars: Vec<String> = condition.variables().into_iter().collect();
                vars.extend(params.iter().cloned());
                let action = self.action(3, &vars);
                TrRule {
                    condition,
                    action,
                    line: None,
                }
            })
            .collect();
        TrPolicy {
            name: format!("policy{}", self.rng.random_range(0..100)),
            params,
            rules,
        }
    }

    fn constant(&mut self) -> String {
        const ODD: [&str; 10] = [
            "and",
            "Blood Test",
            "it's",
            "42",
            "x.y",
            "ECG Report",
            "back\\slash",
            "then",
            "Alice",
            "\"q\"",
        ];
        if self.rng.random_bool(0.5) {
            CONSTS.choose(&mut self.rng).unwrap().to_string()
        } else {
            ODD.choose(&mut self.rng).unwrap().to_string()
        }
    }

    fn rich_term(&mut self) -> Term {
        match self.rng.random_range(0..6) {
            0 | 1 => Term::var(*VARS.choose(&mut self.rng).unwrap()),
            2 => Term::path(*VARS.choose(&mut self.rng).unwrap(), "Policy"),
            _ => Term::constant(self.constant()),
        }
    }

    fn rich_condition(&mut self, depth: u32) -> CondExpr {
        let roll = if depth == 0 { 0 } else { self.rng.random_range(0..9) };
        match roll {
            0..=2 => {
                let arity = self.rng.random_range(0..=3);
                let args: Vec<Term> = (0..arity).map(|_| self.rich_term()).collect();
                CondExpr::atom(format!("pred{}", self.rng.random_range(0..5)), args)
            }
            3 => CondExpr::True,
            4 => CondExpr::not(self.rich_condition(depth - 1)),
            5 | 6 => CondExpr::or(self.rich_condition(depth - 1), self.rich_condition(depth - 1)),
            _ => CondExpr::and(self.rich_condition(depth - 1), self.rich_condition(depth - 1)),
        }
    }

    fn action(&mut self, depth: u32, vars: &[String]) -> ActionExpr {
        let roll = if depth == 0 { 0 } else { self.rng.random_range(0..6) };
        match roll {
            0..=2 => {
                let arity = self.rng.random_range(0..=2);
                let args: Vec<Term> = (0..arity)
                    .map(|_| match vars.choose(&mut self.rng) {
                        Some(v) if self.rng.random_bool(0.6) => Term::var(v.clone()),
                        _ => Term::constant(self.constant()),
                    })
                    .collect();
                ActionExpr::call(format!("act{}", self.rng.random_range(0..5)), args)
            }
            3 | 4 => ActionExpr::seq(self.action(depth - 1, vars), self.action(depth - 1, vars)),
            _ => ActionExpr::par(self.action(depth - 1, vars), self.action(depth - 1, vars)),
        }
    }
}

// ---- brute-force oracle ----

fn ground(t: &Term, a: &Assignment) -> Option<String> {
    match t {
        Term::Const(c) => Some(c.clone()),
        Term::Var(v) => a.get(v).cloned(),
        Term::Path { var, field } => a.get(var).map(|b| format!("{b}.{field}")),
    }
}

/// Classical truth of `c` under a total assignment.
pub fn holds(c: &CondExpr, facts: &FactStore, a: &Assignment) -> bool {
    match c {
        CondExpr::True => true,
        CondExpr::Atom { predicate, args } => {
            let grounded: Option<Vec<String>> = args.iter().map(|t| ground(t, a)).collect();
            grounded.is_some_and(|g| facts.contains(&Fact::new(predicate.clone(), g)))
        }
        CondExpr::Not(x) => !holds(x, facts, a),
        CondExpr::And(x, y) => holds(x, facts, a) && holds(y, facts, a),
        CondExpr::Or(x, y) => holds(x, facts, a) || holds(y, facts, a),
    }
}

fn constants_of(c: &CondExpr, out: &mut BTreeSet<String>) {
    match c {
        CondExpr::True => {}
        CondExpr::Atom { args, .. } => {
            for t in args {
                if let Term::Const(k) = t {
                    out.insert(k.clone());
                }
            }
        }
        CondExpr::Not(x) => constants_of(x, out),
        CondExpr::And(x, y) | CondExpr::Or(x, y) => {
            constants_of(x, out);
            constants_of(y, out);
        }
    }
}

/// Every total assignment of `c`'s free variables (over all constants in
/// sight) that extends `seed` and makes `c` true.
pub fn models(c: &CondExpr, facts: &FactStore, seed: &Assignment) -> BTreeSet<Assignment> {
    let mut domain = BTreeSet::new();
    for f in facts.iter() {
        domain.extend(f.args.iter().cloned());
    }
    constants_of(c, &mut domain);
    domain.extend(seed.values().cloned());
    let domain: Vec<String> = domain.into_iter().collect();
    let free: Vec<String> = c.variables().into_iter().filter(|v| !seed.contains_key(v)).collect();

    let mut out = BTreeSet::new();
    let mut idx = vec![0usize; free.len()];
    if !free.is_empty() && domain.is_empty() {
        return out;
    }
    loop {
        let mut a = seed.clone();
        for (v, &i) in free.iter().zip(&idx) {
            a.insert(v.clone(), domain[i].clone());
        }
        if holds(c, facts, &a) {
            out.insert(a);
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == idx.len() {
                return out;
            }
            idx[k] += 1;
            if idx[k] < domain.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Lowest rule index whose condition has a model.
pub fn brute_force_select(p: &TrPolicy, facts: &FactStore, seed: &Assignment) -> Option<usize> {
    p.rules
        .iter()
        .position(|r| !models(&r.condition, facts, seed).is_empty())
}

pub fn contains_or(c: &CondExpr) -> bool {
    match c {
        CondExpr::Or(..) => true,
        CondExpr::Not(x) => contains_or(x),
        CondExpr::And(x, y) => contains_or(x) || contains_or(y),
        _ => false,
    }
}

// ---- worked clinic examples ----

pub fn library() -> Library {
    let dir = fixtures();
    Library::load(
        &[
            dir.join("policies/gp-clinic.tr"),
            dir.join("policies/specialist-clinic.tr"),
        ],
        &[dir.join("templates/library.json")],
        TemplateConfig::default(),
    )
    .unwrap()
}

pub fn info_point() -> FixtureInfoPoint {
    FixtureInfoPoint::from_json(&read_fixture("info-point.json")).unwrap()
}

pub fn snapshot(time: &str, subject_at: &str, requester_at: &str, emergency: bool) -> ContextSnapshot {
    ContextSnapshot {
        access_time: time.parse::<TimeOfDay>().unwrap(),
        access_date: chrono::NaiveDate::from_ymd_opt(2026, 3, 2).unwrap(),
        requester_location: requester_at.into(),
        subject_location: subject_at.into(),
        emergency,
    }
}

pub fn golden(name: &str) -> AuthorizationPolicy {
    parse_authorization_policy(&read_fixture(&format!("golden/{name}.json"))).unwrap()
}

pub struct GoldenCase {
    pub golden: &'static str,
    pub request: ConsentRequest,
    pub ctx: ContextSnapshot,
}

pub fn golden_cases() -> Vec<GoldenCase> {
    vec![
        GoldenCase {
            golden: "gp-bob",
            request: ConsentRequest::new("g1", "Bob", "GP", "Alice")
                .resources(["Blood Test"])
                .rights(["READ"])
                .purpose("Diagnosis"),
            ctx: snapshot("10:00", "Milan", "Milan", false),
        },
        GoldenCase {
            golden: "cardiologist-david",
            request: ConsentRequest::new("g2", "David", "Cardiologist", "Alice")
                .resources(["ECG Report"])
                .rights(["READ", "WRITE"])
                .purpose("Diagnosis"),
            ctx: snapshot("10:00", "Como", "Como", false),
        },
        GoldenCase {
            golden: "emergency-fayne",
            request: ConsentRequest::new("g3", "Fayne", "EmergencyResponseTeam", "Alice")
                .resources(["Allergy Report"])
                .rights(["READ"])
                .purpose("Diagnosis"),
            ctx: snapshot("10:00", "Aachen", "Aachen", true),
        },
    ]
}

/// Instantiates the best-matching template for `case`, without provenance.
pub fn instantiate_case(lib: &Library, case: &GoldenCase) -> Result<AuthorizationPolicy, String> {
    let info = info_point();
    let matched = match_templates(&case.request, &case.ctx, &lib.templates).map_err(|e| e.to_string())?;
    let t = matched.first().ok_or("no template applies")?;
    let mut p = instantiate_policy(t, &case.request, &case.ctx, &info, lib.config).map_err(|e| e.to_string())?;
    p.origin = None;
    Ok(p)
}

/// A policy checked over purpose x time x location agreement. `permits`
/// lists, by hand, the grid points expected to be permitted; every other
/// point must be denied.
pub struct Grid {
    pub golden: &'static str,
    pub requester: &'static str,
    pub role: &'static str,
    pub resource: &'static str,
    pub location: &'static str,
    pub emergency: bool,
    pub permits: &'static [(&'static str, &'static str, bool)],
}

pub const PURPOSES: [&str; 3] = ["Diagnosis", "Treatment", "Research"];
pub const TIMES: [&str; 3] = ["8:00", "12:00", "18:00"];

pub fn grids() -> Vec<Grid> {
    vec![
        Grid {
            golden: "gp-bob",
            requester: "Bob",
            role: "GP",
            resource: "Blood Test",
            location: "Milan",
            emergency: false,
            permits: &[("Diagnosis", "12:00", true)],
        },
        Grid {
            golden: "cardiologist-david",
            requester: "David",
            role: "Cardiologist",
            resource: "ECG Report",
            location: "Como",
            emergency: false,
            permits: &[("Diagnosis", "12:00", true)],
        },
        Grid {
            golden: "emergency-fayne",
            requester: "Fayne",
            role: "EmergencyResponseTeam",
            resource: "Allergy Report",
            location: "Aachen",
            emergency: true,
            permits: &[
                ("Diagnosis", "8:00", true),
                ("Diagnosis", "12:00", true),
                ("Diagnosis", "18:00", true),
            ],
        },
        Grid {
            golden: "doctor-bob",
            requester: "Bob",
            role: "Doctor",
            resource: "Blood Test",
            location: "Milan",
            emergency: false,
            permits: &[
                ("Diagnosis", "12:00", true),
                ("Diagnosis", "12:00", false),
                ("Diagnosis", "18:00", true),
                ("Diagnosis", "18:00", false),
                ("Treatment", "12:00", true),
                ("Treatment", "12:00", false),
                ("Treatment", "18:00", true),
                ("Treatment", "18:00", false),
            ],
        },
    ]
}

/// Grid points where the PDP disagrees with the table.
pub fn grid_mismatches(g: &Grid) -> Vec<String> {
    let policy = golden(g.golden);
    let mut bad = Vec::new();
    for purpose in PURPOSES {
        for time in TIMES {
            for matched in [true, false] {
                let req_at = if matched { g.location } else { "Elsewhere" };
                let ctx = snapshot(time, g.location, req_at, g.emergency);
                let req = AccessRequest {
                    requester_id: g.requester.into(),
                    requester_role: g.role.into(),
                    subject_id: "Alice".into(),
                    resource: g.resource.into(),
                    right: AccessRight::Read,
                    purpose: purpose.into(),
                };
                let want = if g.permits.contains(&(purpose, time, matched)) {
                    Outcome::Permit
                } else {
                    Outcome::Deny
                };
                let got = evaluate_access(&policy, &req, &ctx).unwrap().outcome;
                if got != want {
                    bad.push(format!("{} {purpose} {time} match={matched}: {got:?}", g.golden));
                }
            }
        }
    }
    bad
}

// ---- engine driving ----

pub fn at(s: &str) -> chrono::NaiveDateTime {
    s.parse().unwrap()
}

pub fn engine_with(lib: Library, start: &str, locations: &[(&str, &str)]) -> Engine {
    let mut e = Engine::new(std::sync::Arc::new(lib), std::sync::Arc::new(info_point()), at(start));
    for (party, loc) in locations {
        e.execute(Command::SetLocation {
            party: party.to_string(),
            location: loc.to_string(),
        })
        .unwrap();
    }
    e
}

pub fn engine(start: &str, locations: &[(&str, &str)]) -> Engine {
    engine_with(library(), start, locations)
}

pub fn gp_request(id: &str) -> ConsentRequest {
    ConsentRequest::new(id, "Bob", "GP", "Alice")
        .resources(["Blood Test"])
        .rights(["READ"])
        .purpose("Diagnosis")
}

pub fn decide(id: &str, grant: bool, save: bool) -> Command {
    Command::PatientDecision {
        patient: "Alice".into(),
        request_id: id.into(),
        grant,
        save_preferences: save,
    }
}

pub fn clock_to(t: &str) -> Command {
    Command::AdvanceClock {
        to: Some(at(t)),
        by: None,
    }
}

/// Fixed stimulus touching every command kind, used for persistence checks.
pub fn stimulus() -> Vec<Command> {
    use trconsent_core::Verb;
    let cardio = ConsentRequest::new("c1", "David", "Cardiologist", "Alice")
        .resources(["ECG Report"])
        .rights(["READ"])
        .purpose("Diagnosis")
        .treatment(trconsent_core::time::Span::days(3));
    vec![
        Command::ConsentRequest(gp_request("r1")),
        decide("r1", true, true),
        clock_to("2026-03-02T12:00:00"),
        Command::ConsentRequest(gp_request("r2")),
        Command::SetLocation {
            party: "Alice".into(),
            location: "Como".into(),
        },
        Command::SetLocation {
            party: "David".into(),
            location: "Como".into(),
        },
        Command::ConsentRequest(cardio),
        decide("c1", true, true),
        Command::PatientCommand {
            policy_id: "gp-clinic:Alice:Bob@1".into(),
            verb: Verb::Withdraw,
        },
        Command::SetLocation {
            party: "Alice".into(),
            location: "Milan".into(),
        },
        Command::ConsentRequest(gp_request("r3")),
        decide("r3", false, false),
        Command::SetEmergency {
            patient: "Alice".into(),
            active: true,
        },
        Command::PatientCommand {
            policy_id: "gp-clinic:Alice:Bob@1".into(),
            verb: Verb::Activate,
        },
        clock_to("2026-03-06T12:00:00"),
        Command::ConsentRequest(gp_request("r4")),
        Command::PatientCommand {
            policy_id: "gp-clinic:Alice:Bob@1".into(),
            verb: Verb::Delete,
        },
    ]
}
