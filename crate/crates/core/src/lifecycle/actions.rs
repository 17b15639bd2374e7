//! Built-in TR actions.

use crate::authz::{evaluate_access, AccessRequest, AccessRight, Outcome, PolicyState};
use crate::context::treatment_duration;
use crate::facts::Fact;
use crate::template::instantiate_policy;
use crate::tr::ActionInvocation;

use super::{patient_policy, ConsentSession, Effects, EngineEvent, Env, LifecycleError, RequestStatus};

pub const ACTIONS: [&str; 7] = [
    "instantiatePolicy",
    "activate",
    "sendConsent",
    "evaluatePolicy",
    "waitPatientDecision",
    "withdraw",
    "remove",
];

impl ConsentSession {
    pub(super) fn dispatch(
        &mut self,
        env: &Env,
        ci: usize,
        call: &ActionInvocation,
        fx: &mut Effects,
    ) -> Result<(), LifecycleError> {
        match call.name.as_str() {
            "instantiatePolicy" => self.instantiate(env, ci, fx),
            "activate" => {
                self.activate(ci, fx);
                Ok(())
            }
            "sendConsent" => {
                let requester = call.args.get(1).cloned().unwrap_or_default();
                self.send_consent(env, ci, &requester, fx);
                Ok(())
            }
            "evaluatePolicy" => self.evaluate(env, ci, fx),
            "waitPatientDecision" => {
                self.wait_decision(ci, fx);
                Ok(())
            }
            "withdraw" => {
                self.withdraw(ci, fx);
                Ok(())
            }
            "remove" => {
                self.remove(ci, fx);
                Ok(())
            }
            other => Err(LifecycleError::Configuration(format!("unknown action `{other}`"))),
        }
    }

    fn patient_facts(&self) -> (String, String) {
        (self.patient_id.clone(), patient_policy(&self.patient_id))
    }

    fn instantiate(&mut self, env: &Env, ci: usize, fx: &mut Effects) -> Result<(), LifecycleError> {
        let request_id = self.contexts[ci].consent_ready.clone().ok_or_else(|| {
            LifecycleError::Configuration("instantiatePolicy fired without an answered request".into())
        })?;
        let open = self
            .open
            .iter()
            .find(|o| o.request.request_id == request_id)
            .ok_or_else(|| LifecycleError::UnknownRequest(request_id.clone()))?
            .clone();
        let template = env
            .library
            .template(&open.template)
            .ok_or_else(|| LifecycleError::Configuration(format!("unknown template `{}`", open.template)))?;
        let snapshot = env.hub.snapshot(&open.request.requester_id, &self.patient_id)?;
        let mut policy = instantiate_policy(template, &open.request, &snapshot, env.info, env.library.config)?;

        if let Some(old) = self.contexts[ci].policy_id.take() {
            self.erase(&old, "superseded by new preferences", fx);
        }
        self.counter += 1;
        policy.id = format!("{}@{}", policy.id, self.counter);
        let id = policy.id.clone();

        let req = &open.request;
        let duration = match (&req.treatment_duration, &req.referral_id, &req.access_duration) {
            (Some(d), _, _) => Some(*d),
            (None, Some(referral), _) => Some(treatment_duration(env.info, referral)?),
            (None, None, d) => *d,
        };
        let c = &mut self.contexts[ci];
        if let (Some(d), Some(start)) = (duration, c.first_request_at) {
            self.timers.insert(id.clone(), start + d.as_duration());
        }
        let (patient, pp) = (self.patient_id.clone(), patient_policy(&self.patient_id));
        c.policy_id = Some(id.clone());
        c.facts.assert(Fact::new("instantiatedPolicy", [&patient]));
        c.facts.retract(&Fact::new("withdrawn", [&pp]));
        c.facts.retract(&Fact::new("timeout", [&pp]));
        for a in fx.audit.iter_mut().filter(|a| a.request_id == request_id) {
            a.policy_id = Some(id.clone());
        }
        fx.push(EngineEvent::PolicyInstantiated {
            policy_id: id.clone(),
            template: template.id.clone(),
            policy: policy.clone(),
        });
        self.policies.insert(id, policy);
        Ok(())
    }

    fn activate(&mut self, ci: usize, fx: &mut Effects) {
        let (patient, pp) = self.patient_facts();
        let c = &mut self.contexts[ci];
        c.facts.retract(&Fact::new("activatePolicyRequest", [&patient]));
        c.facts.retract(&Fact::new("withdrawn", [&pp]));
        let Some(id) = c.policy_id.clone() else { return };
        if let Some(p) = self.policies.get_mut(&id) {
            p.state = PolicyState::Active;
            fx.push(EngineEvent::PolicyActivated { policy_id: id });
        }
    }

    fn withdraw(&mut self, ci: usize, fx: &mut Effects) {
        let (patient, pp) = self.patient_facts();
        let c = &mut self.contexts[ci];
        c.facts.retract(&Fact::new("withdrawPolicyRequest", [&patient]));
        let Some(id) = c.policy_id.clone() else { return };
        if let Some(p) = self.policies.get_mut(&id) {
            c.facts.assert(Fact::new("withdrawn", [&pp]));
            if p.state == PolicyState::Active {
                p.state = PolicyState::Withdrawn;
                fx.push(EngineEvent::PolicyWithdrawn { policy_id: id });
            }
        }
    }

    fn remove(&mut self, ci: usize, fx: &mut Effects) {
        let (patient, pp) = self.patient_facts();
        let c = &mut self.contexts[ci];
        let reason = if c.facts.contains(&Fact::new("timeout", [&pp])) {
            "treatment period ended"
        } else {
            "saved preferences deleted by the patient"
        };
        for f in [
            Fact::new("instantiatedPolicy", [&patient]),
            Fact::new("withdrawn", [&pp]),
            Fact::new("timeout", [&pp]),
            Fact::new("deleteSavedPreferences", [&patient]),
            Fact::new("activatePolicyRequest", [&patient]),
            Fact::new("withdrawPolicyRequest", [&patient]),
        ] {
            c.facts.retract(&f);
        }
        c.first_request_at = None;
        if let Some(id) = c.policy_id.take() {
            self.erase(&id, reason, fx);
        }
    }

    fn erase(&mut self, id: &str, reason: &str, fx: &mut Effects) {
        if self.policies.remove(id).is_some() {
            self.timers.remove(id);
            self.tombstones.insert(id.to_owned());
            fx.push(EngineEvent::PolicyDeleted {
                policy_id: id.to_owned(),
                reason: reason.to_owned(),
            });
        }
    }

    fn send_consent(&mut self, env: &Env, ci: usize, requester: &str, fx: &mut Effects) {
        let patient = self.patient_id.clone();
        let c = &mut self.contexts[ci];
        c.facts.retract(&Fact::new("consentAvailable", [&patient, requester]));
        c.facts.retract(&Fact::flag("saveCurrentPreferences"));
        if let Some(id) = c.consent_ready.clone() {
            self.answer(env, ci, &id, true, None, fx);
        }
    }

    /// Answers the oldest open request of the context from the saved policy.
    fn evaluate(&mut self, env: &Env, ci: usize, fx: &mut Effects) -> Result<(), LifecycleError> {
        let c = &self.contexts[ci];
        let Some(open) = self
            .open
            .iter()
            .find(|o| o.goal == c.goal && o.holder == c.holder && o.status != RequestStatus::Decided)
            .cloned()
        else {
            return Ok(());
        };
        let policy = c.policy_id.as_ref().and_then(|id| self.policies.get(id));
        let req = &open.request;
        let verdict = match policy {
            None => Err("no saved policy".to_owned()),
            Some(p) if p.state != PolicyState::Active => Err(format!("policy {} is {}", p.id, p.state)),
            Some(p) => {
                let snapshot = env.hub.snapshot(&req.requester_id, &self.patient_id)?;
                let mut verdict = Ok(());
                'outer: for resource in &req.resources {
                    for right in &req.rights {
                        let Ok(right) = right.parse::<AccessRight>() else {
                            verdict = Err(format!("unknown access right `{right}`"));
                            break 'outer;
                        };
                        let access = AccessRequest {
                            requester_id: req.requester_id.clone(),
                            requester_role: req.requester_role.clone(),
                            subject_id: req.patient_id.clone(),
                            resource: resource.clone(),
                            right,
                            purpose: req.purpose.clone(),
                        };
                        let d = evaluate_access(p, &access, &snapshot)
                            .map_err(|e| LifecycleError::Configuration(e.to_string()))?;
                        if d.outcome != Outcome::Permit {
                            verdict = Err(format!("{resource}/{right}: {}", d.explain()));
                            break 'outer;
                        }
                    }
                }
                verdict
            }
        };
        match verdict {
            Ok(()) => {
                let patient = self.patient_id.clone();
                if let Some(o) = self.open.iter_mut().find(|o| o.request.request_id == req.request_id) {
                    o.status = RequestStatus::Decided;
                }
                let c = &mut self.contexts[ci];
                c.consent_ready = Some(req.request_id.clone());
                c.facts
                    .assert(Fact::new("consentAvailable", [&patient, &req.requester_id]));
            }
            Err(message) => self.answer(env, ci, &req.request_id, false, Some(message), fx),
        }
        Ok(())
    }

    fn wait_decision(&mut self, ci: usize, fx: &mut Effects) {
        let c = &self.contexts[ci];
        let (goal, holder) = (c.goal.clone(), c.holder.clone());
        for o in self
            .open
            .iter_mut()
            .filter(|o| o.goal == goal && o.holder == holder && o.status == RequestStatus::New)
        {
            o.status = RequestStatus::AwaitingDecision;
            fx.push(EngineEvent::DecisionQueued {
                request_id: o.request.request_id.clone(),
                request: o.request.clone(),
            });
        }
    }
}
