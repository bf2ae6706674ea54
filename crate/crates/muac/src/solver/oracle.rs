//! Exhaustive baseline prover. Enumerates every transfer sequence up to the
//! bound, keeps the fair ones reaching the goal, and reconstructs the first
//! as a certificate. Independent of the goal-directed search; intended for
//! small instances only.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{apply_transfer, OwnershipState, ResourceKind, Transfer, UserId};
use crate::muacl::{Certificate, CertStep, MatchEntry, RuleRef};
use crate::policy::Policy;

use super::fairness::justify_user;
use super::{request_universe, SolveRequest};

fn request_kinds(req: &SolveRequest) -> Vec<ResourceKind> {
    let mut kinds: BTreeSet<ResourceKind> = req.state.kinds().into_iter().cloned().collect();
    for policy in req.policies.values() {
        for rule in &policy.rules {
            kinds.insert(rule.head.resource.clone());
            for atom in &rule.body {
                kinds.insert(atom.resource.clone());
            }
        }
    }
    match &req.goal {
        crate::muacl::Goal::OwnsAtLeast { kind, .. } => {
            kinds.insert(kind.clone());
        }
        crate::muacl::Goal::ExactState { target } => {
            kinds.extend(target.kinds().into_iter().cloned());
        }
    }
    kinds.into_iter().collect()
}

/// Checks fairness and, when fair, reconstructs instances and matching for
/// every user into a certificate.
fn reconstruct(
    steps: &[Transfer],
    req: &SolveRequest,
    universe: &[UserId],
) -> Option<Certificate> {
    let mut users: BTreeSet<UserId> = universe.iter().cloned().collect();
    for t in steps {
        users.insert(t.giver().clone());
        users.insert(t.receiver().clone());
    }
    let mut instances: BTreeMap<usize, (RuleRef, BTreeMap<String, UserId>)> = BTreeMap::new();
    let mut matching: Vec<MatchEntry> = Vec::new();
    for user in &users {
        let empty;
        let policy = match req.policies.get(user) {
            Some(p) => p,
            None => {
                empty = Policy::empty(user.clone());
                &empty
            }
        };
        let just = justify_user(user, steps, policy, &req.context, universe)?;
        for (step, instance) in just.instances {
            instances.insert(
                step,
                (
                    RuleRef { owner: instance.owner, index: instance.rule_index },
                    instance.substitution,
                ),
            );
        }
        matching.extend(just.matching);
    }
    let steps = steps
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (rule, subst) = instances.remove(&i).expect("every giver was justified");
            CertStep { transfer: t.clone(), rule, subst }
        })
        .collect();
    matching.sort();
    Some(Certificate { steps, matching })
}

/// Enumerates feasible transfer sequences in deterministic order, shortest
/// first, and returns the first fair one reaching the goal as a certificate.
pub fn brute_force_solve(req: &SolveRequest) -> Option<Certificate> {
    let universe = request_universe(req);
    let kinds = request_kinds(req);
    let mut alphabet: Vec<Transfer> = Vec::new();
    for giver in &universe {
        for kind in &kinds {
            for receiver in &universe {
                if let Ok(t) = Transfer::new(giver.clone(), kind.clone(), receiver.clone()) {
                    alphabet.push(t);
                }
            }
        }
    }
    alphabet.sort();

    fn go(
        req: &SolveRequest,
        universe: &[UserId],
        alphabet: &[Transfer],
        target_len: usize,
        state: &OwnershipState,
        prefix: &mut Vec<Transfer>,
    ) -> Option<Certificate> {
        if prefix.len() == target_len {
            if !req.goal.satisfied_by(state) {
                return None;
            }
            return reconstruct(prefix, req, universe);
        }
        for t in alphabet {
            if let Ok(next) = apply_transfer(state, t) {
                prefix.push(t.clone());
                if let Some(cert) = go(req, universe, alphabet, target_len, &next, prefix) {
                    return Some(cert);
                }
                prefix.pop();
            }
        }
        None
    }

    for target_len in 0..=req.max_transfers {
        let mut prefix = Vec::new();
        if let Some(cert) =
            go(req, &universe, &alphabet, target_len, &req.state, &mut prefix)
        {
            return Some(cert);
        }
    }
    None
}
