mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use common::{at, clock_to, decide, engine, engine_with, gp_request, info_point, library, stimulus, Gen};
use rand::seq::IndexedRandom;
use rand::Rng;
use trconsent_core::engine::PolicyView;
use trconsent_core::lifecycle::{ConsentSession, Effects, Env, LifecycleError};
use trconsent_core::store::{decode, encode, load_store, save_store, StoreError};
use trconsent_core::time::Span;
use trconsent_core::{
    parse_tr_policy, Command, ConsentRequest, ContextHub, Engine, EngineError, EngineEvent, Library, PolicyState, Verb,
};

fn cardio(id: &str, who: &str) -> ConsentRequest {
    ConsentRequest::new(id, who, "Cardiologist", "Alice")
        .resources(["ECG Report"])
        .rights(["READ"])
        .purpose("Diagnosis")
        .treatment(Span::days(1))
}

fn deleted_ids(out: &trconsent_core::CommandOutput) -> Vec<String> {
    out.entries
        .iter()
        .filter_map(|e| match &e.event {
            EngineEvent::PolicyDeleted { policy_id, .. } => Some(policy_id.clone()),
            _ => None,
        })
        .collect()
}

#[test]
fn expired_timers_fire_in_policy_id_order() {
    let mut e = engine(
        "2026-03-02T10:00:00",
        &[("Alice", "Milan"), ("Erin", "Milan"), ("David", "Como")],
    );
    e.execute(Command::ConsentRequest(cardio("e1", "Erin"))).unwrap();
    e.execute(decide("e1", true, true)).unwrap();
    e.execute(Command::ConsentRequest(cardio("d1", "David"))).unwrap();
    e.execute(decide("d1", true, true)).unwrap();
    assert_eq!(e.policy_state("cardiologist:Alice:Erin@1"), Some(PolicyState::Active));
    assert_eq!(e.policy_state("cardiologist:Alice:David@2"), Some(PolicyState::Active));

    let out = e.execute(clock_to("2026-03-04T10:00:00")).unwrap();
    assert_eq!(
        deleted_ids(&out),
        ["cardiologist:Alice:David@2", "cardiologist:Alice:Erin@1"]
    );
    assert_eq!(e.policy_state("cardiologist:Alice:Erin@1"), Some(PolicyState::Deleted));
}

#[test]
fn timer_fires_exactly_at_expiry() {
    let mut e = engine("2026-03-02T10:00:00", &[("Alice", "Como"), ("David", "Como")]);
    e.execute(Command::ConsentRequest(cardio("d1", "David"))).unwrap();
    e.execute(decide("d1", true, true)).unwrap();
    let out = e.execute(clock_to("2026-03-03T09:59:59")).unwrap();
    assert!(deleted_ids(&out).is_empty());
    let out = e.execute(clock_to("2026-03-03T10:00:00")).unwrap();
    assert_eq!(deleted_ids(&out), ["cardiologist:Alice:David@1"]);
}

#[test]
fn saved_policy_refuses_before_duty_hours() {
    let mut e = engine("2026-03-02T10:00:00", &[("Alice", "Milan"), ("Bob", "Milan")]);
    e.execute(Command::ConsentRequest(gp_request("r1"))).unwrap();
    e.execute(decide("r1", true, true)).unwrap();
    e.execute(clock_to("2026-03-03T08:00:00")).unwrap();
    let out = e.execute(Command::ConsentRequest(gp_request("r2"))).unwrap();
    assert_eq!(out.responses.len(), 1);
    let r = &out.responses[0];
    assert!(!r.granted);
    let msg = r.message.as_deref().unwrap();
    assert!(
        msg.starts_with("Blood Test/READ: Deny: condition failed: AccessTime >="),
        "{msg}"
    );
    assert!(e.pending("Alice").is_empty());
}

#[test]
fn unknown_action_is_a_configuration_error() {
    let tr = parse_tr_policy("tr-policy consentAtGPClinic(Patient)\n\nneedsConsent(Patient, GP) -> launch(Patient)\n")
        .unwrap();
    let base = library();
    let lib = Library {
        tr_policies: BTreeMap::from([(tr.name.clone(), tr)]),
        templates: vec![base.template("gp-clinic").unwrap().clone()],
        config: base.config,
    };
    let mut e = engine_with(lib, "2026-03-02T10:00:00", &[("Alice", "Milan"), ("Bob", "Milan")]);
    let before = e.state().clone();
    let err = e.execute(Command::ConsentRequest(gp_request("r1"))).unwrap_err();
    assert!(
        matches!(err, EngineError::Lifecycle(LifecycleError::Configuration(_))),
        "{err}"
    );
    assert!(!err.is_client_error());
    assert_eq!(e.state(), &before);
}

#[test]
fn library_rejects_unknown_action() {
    let tr = parse_tr_policy("tr-policy g(Patient)\n\nneedsConsent(Patient, GP) -> launch(Patient)\n").unwrap();
    assert!(Library::new([tr], [], Default::default()).is_err());
}

#[test]
fn request_for_another_patient_is_rejected() {
    let lib = library();
    let info = info_point();
    let mut hub = ContextHub::new(at("2026-03-02T10:00:00"));
    hub.set_location("Alice", "Milan");
    hub.set_location("Bob", "Milan");
    let env = Env {
        library: &lib,
        info: &info,
        hub: &hub,
    };
    let mut s = ConsentSession::new("Carol");
    let err = s
        .handle_consent_request(&env, gp_request("r1"), &mut Effects::default())
        .unwrap_err();
    assert!(matches!(err, LifecycleError::PatientMismatch { .. }));
}

#[test]
fn duplicate_request_is_rejected() {
    let mut e = engine("2026-03-02T10:00:00", &[("Alice", "Milan"), ("Bob", "Milan")]);
    e.execute(Command::ConsentRequest(gp_request("r1"))).unwrap();
    let before = e.state().clone();
    let err = e.execute(Command::ConsentRequest(gp_request("r1"))).unwrap_err();
    assert!(matches!(
        err,
        EngineError::Lifecycle(LifecycleError::DuplicateRequest(_))
    ));
    assert!(err.is_client_error());
    assert_eq!(e.state(), &before);
}

#[test]
fn failed_command_leaves_state_untouched() {
    let mut e = engine("2026-03-02T10:00:00", &[("Alice", "Milan")]);
    let before = e.state().clone();
    // Bob's location is unknown, which only surfaces after the session has
    // been created.
    let err = e.execute(Command::ConsentRequest(gp_request("r1"))).unwrap_err();
    assert!(
        matches!(err, EngineError::Lifecycle(LifecycleError::Context(_))),
        "{err}"
    );
    assert_eq!(e.state(), &before);
    assert!(e.session("Alice").is_none());
}

#[test]
fn unconscious_request_without_break_the_glass_template_is_queued() {
    let mut e = engine("2026-03-02T10:00:00", &[("Alice", "Milan"), ("Bob", "Milan")]);
    let mut req = gp_request("r1");
    req.patient_unconscious = true;
    let out = e.execute(Command::ConsentRequest(req)).unwrap();
    assert!(out.audit.is_empty());
    assert!(out
        .entries
        .iter()
        .any(|x| matches!(x.event, EngineEvent::DecisionQueued { .. })));
    assert_eq!(e.pending("Alice").len(), 1);
}

#[test]
fn deleted_policy_cannot_be_revived() {
    let mut e = engine("2026-03-02T10:00:00", &[("Alice", "Milan"), ("Bob", "Milan")]);
    e.execute(Command::ConsentRequest(gp_request("r1"))).unwrap();
    e.execute(decide("r1", true, true)).unwrap();
    let id = "gp-clinic:Alice:Bob@1".to_string();
    let out = e
        .execute(Command::PatientCommand {
            policy_id: id.clone(),
            verb: Verb::Delete,
        })
        .unwrap();
    assert_eq!(out.policy_state, Some(PolicyState::Deleted));
    for verb in [Verb::Activate, Verb::Withdraw, Verb::Delete] {
        let err = e
            .execute(Command::PatientCommand {
                policy_id: id.clone(),
                verb,
            })
            .unwrap_err();
        assert!(
            matches!(err, EngineError::Lifecycle(LifecycleError::IllegalTransition { .. })),
            "{err}"
        );
    }
    // A new grant starts a fresh policy under a new id.
    e.execute(Command::ConsentRequest(gp_request("r2"))).unwrap();
    e.execute(decide("r2", true, true)).unwrap();
    assert_eq!(e.policy_state("gp-clinic:Alice:Bob@2"), Some(PolicyState::Active));
}

fn run(cmds: &[Command], e: &mut Engine) {
    for (i, c) in cmds.iter().enumerate() {
        e.execute(c.clone()).unwrap_or_else(|err| panic!("command {i}: {err}"));
    }
}

fn fresh() -> Engine {
    engine("2026-03-02T10:00:00", &[("Alice", "Milan"), ("Bob", "Milan")])
}

#[test]
fn save_and_reload_replays_identically() {
    let cmds = stimulus();
    let mut straight = fresh();
    run(&cmds, &mut straight);

    for cut in [0, 3, cmds.len() / 2, cmds.len()] {
        let mut first = fresh();
        run(&cmds[..cut], &mut first);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store");
        save_store(&path, first.state()).unwrap();
        let state = load_store(&path).unwrap();
        let mut second = Engine::from_state(Arc::new(library()), Arc::new(info_point()), state);
        run(&cmds[cut..], &mut second);
        assert_eq!(
            serde_json::to_string(second.log()).unwrap(),
            serde_json::to_string(straight.log()).unwrap(),
            "cut at {cut}"
        );
        assert_eq!(encode(second.state()), encode(straight.state()));
    }
}

#[test]
fn truncated_store_is_corrupt() {
    let mut e = fresh();
    run(&stimulus(), &mut e);
    let text = encode(e.state());
    assert!(matches!(decode(&text[..text.len() / 2]), Err(StoreError::Corrupt(_))));
    assert_eq!(decode(&text).unwrap(), *e.state());
}

fn active_holders(e: &Engine) -> BTreeSet<String> {
    e.policies()
        .into_iter()
        .filter(|v: &PolicyView| v.policy.state == PolicyState::Active)
        .filter_map(|v| {
            v.policy
                .id
                .split(':')
                .nth(2)
                .map(|h| h.split('@').next().unwrap().to_string())
        })
        .collect()
}

#[test]
fn random_command_sequences_keep_invariants() {
    let mut g = Gen::new(99);
    let doctors = [
        ("Bob", "GP", "Blood Test"),
        ("Erin", "GP", "Blood Test"),
        ("David", "Cardiologist", "ECG Report"),
    ];
    let purposes = ["Diagnosis", "Treatment", "Research"];
    let (mut auto_grants, mut withdrawn_seen, mut rejected) = (0, 0, 0);
    for run_no in 0..100 {
        let mut e = engine(
            "2026-03-02T08:30:00",
            &[
                ("Alice", "Milan"),
                ("Bob", "Milan"),
                ("Erin", "Milan"),
                ("David", "Como"),
            ],
        );
        let mut issued = BTreeSet::new();
        let mut n = 0;
        for _ in 0..60 {
            let rng = g.rng();
            let cmd = match rng.random_range(0..10) {
                0..=3 => {
                    let (who, role, res) = *doctors.choose(rng).unwrap();
                    n += 1;
                    let mut req = ConsentRequest::new(format!("q{n}"), who, role, "Alice")
                        .resources([res])
                        .rights(["READ"])
                        .purpose(*purposes.choose(rng).unwrap());
                    if rng.random_bool(0.3) {
                        req = req.treatment(Span::days(1));
                    }
                    Command::ConsentRequest(req)
                }
                4 | 5 => {
                    let pending = e.pending("Alice");
                    match pending.choose(rng) {
                        Some(p) => decide(&p.request_id, rng.random_bool(0.7), rng.random_bool(0.6)),
                        None => continue,
                    }
                }
                6 | 7 => {
                    let ids: Vec<String> = e.policies().into_iter().map(|v| v.policy.id).collect();
                    match ids.choose(rng) {
                        Some(id) => Command::PatientCommand {
                            policy_id: id.clone(),
                            verb: *[Verb::Withdraw, Verb::Activate, Verb::Delete].choose(rng).unwrap(),
                        },
                        None => continue,
                    }
                }
                8 => Command::AdvanceClock {
                    to: None,
                    by: Some(Span::minutes(rng.random_range(10..600))),
                },
                _ => Command::SetLocation {
                    party: "Alice".into(),
                    location: ["Milan", "Como"].choose(rng).unwrap().to_string(),
                },
            };
            let before = e.state().clone();
            let holders = active_holders(&e);
            let requester = match &cmd {
                Command::ConsentRequest(r) => Some(r.requester_id.clone()),
                _ => None,
            };
            if let Command::ConsentRequest(r) = &cmd {
                issued.insert(r.request_id.clone());
            }
            withdrawn_seen += e
                .policies()
                .iter()
                .filter(|v| v.policy.state == PolicyState::Withdrawn)
                .count();
            match e.execute(cmd) {
                Ok(out) => {
                    // Automatic grants only come from an Active policy.
                    if let Some(who) = requester {
                        if out.responses.iter().any(|r| r.granted) {
                            auto_grants += 1;
                            assert!(
                                holders.contains(&who),
                                "run {run_no}: auto grant for {who} without active policy"
                            );
                        }
                    }
                }
                Err(err) => {
                    rejected += 1;
                    assert!(err.is_client_error(), "run {run_no}: {err}");
                    assert_eq!(e.state(), &before, "run {run_no}: {err}");
                }
            }
        }
        // Every response answers exactly one issued request.
        let answered: Vec<&str> = e.responses().iter().map(|r| r.request_id.as_str()).collect();
        let unique: BTreeSet<&str> = answered.iter().copied().collect();
        assert_eq!(unique.len(), answered.len(), "run {run_no}");
        assert!(unique.iter().all(|id| issued.contains(*id)), "run {run_no}");
        for p in e.pending("Alice") {
            assert!(!unique.contains(p.request_id.as_str()));
        }
    }
    // The generator must actually reach the interesting states.
    assert!(
        auto_grants >= 10 && withdrawn_seen >= 20 && rejected >= 5,
        "{auto_grants} {withdrawn_seen} {rejected}"
    );
}
