//! Deterministic simulator of the exchange smart contract: token wallets,
//! a policy registry, context facts, the request pipeline (solve, verify,
//! apply atomically) and an append-only event log with hash-chained replay.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Context, ContextFact, OwnershipState, ResourceKind, UserId};
use crate::muacl::{check_detailed, Certificate, Goal, Theory, Violation};
use crate::policy::{parse_policy, pretty_print, ParseError, Policy};
use crate::solver::{solve, SolveError, SolveRequest};

/// A uniquely identified, indivisible resource instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: u64,
    pub kind: ResourceKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("token {token_id} is not in {user}'s wallet")]
    NotInWallet { user: UserId, token_id: u64 },
    #[error("{user} may only manage facts with themselves as first argument")]
    NotFactOwner { user: UserId },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("corrupt log at seq {0}")]
    CorruptLog(u64),
    #[error("exchange certificate invalid: {0}")]
    InvalidExchange(Violation),
}

/// Wallets, policies, facts and counters; everything the contract holds.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LedgerState {
    wallets: BTreeMap<UserId, BTreeMap<u64, ResourceKind>>,
    policies: BTreeMap<UserId, Policy>,
    facts: Context,
    next_token_id: u64,
    seq: u64,
}

impl LedgerState {
    pub fn wallet(&self, user: &UserId) -> Vec<Token> {
        self.wallets
            .get(user)
            .map(|w| w.iter().map(|(&id, kind)| Token { id, kind: kind.clone() }).collect())
            .unwrap_or_default()
    }

    pub fn wallets(&self) -> &BTreeMap<UserId, BTreeMap<u64, ResourceKind>> {
        &self.wallets
    }

    pub fn policies(&self) -> &BTreeMap<UserId, Policy> {
        &self.policies
    }

    pub fn facts(&self) -> &Context {
        &self.facts
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Kind-count projection of the wallets, the policies' level of
    /// abstraction.
    pub fn ownership(&self) -> OwnershipState {
        let mut state = OwnershipState::new();
        for (user, wallet) in &self.wallets {
            for kind in wallet.values() {
                state.add(user, kind, 1);
            }
        }
        state
    }

    /// Canonical serialization hash: users, token ids, kinds and facts are
    /// sorted, policies rendered in canonical text.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            wallets: &'a BTreeMap<UserId, BTreeMap<u64, ResourceKind>>,
            policies: BTreeMap<&'a UserId, String>,
            facts: &'a Context,
            next_token_id: u64,
            seq: u64,
        }
        let view = View {
            wallets: &self.wallets,
            policies: self.policies.iter().map(|(u, p)| (u, pretty_print(p))).collect(),
            facts: &self.facts,
            next_token_id: self.next_token_id,
            seq: self.seq,
        };
        let bytes = serde_json::to_vec(&view).expect("ledger state serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// One log entry; `state_hash` commits to the post-state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
    pub state_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    Deposit { user: UserId, resource: ResourceKind, token_id: u64 },
    Withdraw { user: UserId, token_id: u64 },
    SetPolicy { user: UserId, text: String },
    AssertFact { user: UserId, fact: ContextFact },
    RetractFact { user: UserId, fact: ContextFact },
    Exchange { goal: Goal, certificate: Certificate },
}

/// Outcome of the request pipeline; denial is a value, not a failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestOutcome {
    Applied(Certificate),
    Denied(SolveError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubmitOutcome {
    Applied,
    Rejected(Violation),
}

/// Applies one event kind to a state, returning the successor state. Pure;
/// shared by live operations and replay.
fn apply_kind(state: &LedgerState, kind: &EventKind) -> Result<LedgerState, LedgerError> {
    let mut next = state.clone();
    match kind {
        EventKind::Deposit { user, resource, token_id } => {
            if *token_id != next.next_token_id {
                return Err(LedgerError::CorruptLog(next.seq));
            }
            next.wallets.entry(user.clone()).or_default().insert(*token_id, resource.clone());
            next.next_token_id += 1;
        }
        EventKind::Withdraw { user, token_id } => {
            let held = next
                .wallets
                .get_mut(user)
                .and_then(|w| w.remove(token_id))
                .is_some();
            if !held {
                return Err(LedgerError::NotInWallet { user: user.clone(), token_id: *token_id });
            }
        }
        EventKind::SetPolicy { user, text } => {
            let policy = parse_policy(text, user.clone())?;
            next.policies.insert(user.clone(), policy);
        }
        EventKind::AssertFact { user, fact } => {
            if fact.args.first() != Some(user) {
                return Err(LedgerError::NotFactOwner { user: user.clone() });
            }
            next.facts.insert(fact.clone());
        }
        EventKind::RetractFact { user, fact } => {
            if fact.args.first() != Some(user) {
                return Err(LedgerError::NotFactOwner { user: user.clone() });
            }
            next.facts.remove(fact);
        }
        EventKind::Exchange { goal, certificate } => {
            let theory =
                Theory::new(&next.policies, next.facts.clone(), next.ownership());
            check_detailed(&theory, certificate, goal)
                .map_err(LedgerError::InvalidExchange)?;
            for step in &certificate.steps {
                let transfer = &step.transfer;
                let giver_wallet = next
                    .wallets
                    .get_mut(transfer.giver())
                    .expect("kernel verified ownership");
                // Certificates speak in kinds; the ledger moves the
                // lowest-id token of the kind, deterministically.
                let token_id = *giver_wallet
                    .iter()
                    .find(|(_, kind)| *kind == transfer.resource())
                    .map(|(id, _)| id)
                    .expect("kernel verified ownership");
                let kind = giver_wallet.remove(&token_id).unwrap();
                next.wallets
                    .entry(transfer.receiver().clone())
                    .or_default()
                    .insert(token_id, kind);
            }
        }
    }
    next.seq += 1;
    Ok(next)
}

/// The contract simulator: current state plus the append-only log.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    state: LedgerState,
    log: Vec<Event>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> &LedgerState {
        &self.state
    }

    pub fn log(&self) -> &[Event] {
        &self.log
    }

    fn append(&mut self, kind: EventKind) -> Result<(), LedgerError> {
        let next = apply_kind(&self.state, &kind)?;
        self.log.push(Event { seq: self.state.seq, kind, state_hash: next.hash() });
        self.state = next;
        Ok(())
    }

    /// Mints a fresh token of the kind into the user's wallet.
    pub fn deposit(&mut self, user: &UserId, kind: &ResourceKind) -> Result<Token, LedgerError> {
        let token = Token { id: self.state.next_token_id, kind: kind.clone() };
        self.append(EventKind::Deposit {
            user: user.clone(),
            resource: kind.clone(),
            token_id: token.id,
        })?;
        Ok(token)
    }

    pub fn withdraw(&mut self, user: &UserId, token_id: u64) -> Result<(), LedgerError> {
        self.append(EventKind::Withdraw { user: user.clone(), token_id })
    }

    /// Replaces the user's policy wholesale; the state is unchanged when the
    /// text does not parse.
    pub fn set_policy(&mut self, user: &UserId, text: &str) -> Result<(), LedgerError> {
        parse_policy(text, user.clone())?;
        self.append(EventKind::SetPolicy { user: user.clone(), text: text.to_owned() })
    }

    pub fn assert_fact(&mut self, user: &UserId, fact: ContextFact) -> Result<(), LedgerError> {
        self.append(EventKind::AssertFact { user: user.clone(), fact })
    }

    pub fn retract_fact(&mut self, user: &UserId, fact: ContextFact) -> Result<(), LedgerError> {
        self.append(EventKind::RetractFact { user: user.clone(), fact })
    }

    /// Runs the whole pipeline in-process: solve for one more unit of the
    /// kind, verify the certificate, and apply it atomically.
    pub fn request(
        &mut self,
        user: &UserId,
        kind: &ResourceKind,
        max_transfers: usize,
    ) -> Result<RequestOutcome, LedgerError> {
        let state = self.state.ownership();
        let goal = Goal::OwnsAtLeast {
            user: user.clone(),
            kind: kind.clone(),
            count: state.count(user, kind) + 1,
        };
        let req = SolveRequest {
            policies: self.state.policies.clone(),
            context: self.state.facts.clone(),
            state,
            goal: goal.clone(),
            max_transfers,
        };
        match solve(&req) {
            Ok(certificate) => {
                self.append(EventKind::Exchange { goal, certificate: certificate.clone() })?;
                Ok(RequestOutcome::Applied(certificate))
            }
            Err(reason) => Ok(RequestOutcome::Denied(reason)),
        }
    }

    /// Verifies an externally produced certificate and applies it
    /// atomically; rejection leaves the state untouched and logs nothing.
    pub fn submit_certificate(&mut self, certificate: Certificate, goal: Goal) -> SubmitOutcome {
        let theory =
            Theory::new(&self.state.policies, self.state.facts.clone(), self.state.ownership());
        if let Err(violation) = check_detailed(&theory, &certificate, &goal) {
            return SubmitOutcome::Rejected(violation);
        }
        self.append(EventKind::Exchange { goal, certificate })
            .expect("verified certificate applies");
        SubmitOutcome::Applied
    }

    /// Folds the events from genesis, verifying the hash chain; fails with
    /// `CorruptLog` at the first mismatching sequence number.
    pub fn replay(events: Vec<Event>) -> Result<Ledger, LedgerError> {
        let mut state = LedgerState::default();
        for event in &events {
            if event.seq != state.seq {
                return Err(LedgerError::CorruptLog(event.seq));
            }
            let next = apply_kind(&state, &event.kind)
                .map_err(|_| LedgerError::CorruptLog(event.seq))?;
            if next.hash() != event.state_hash {
                return Err(LedgerError::CorruptLog(event.seq));
            }
            state = next;
        }
        Ok(Ledger { state, log: events })
    }
}

/// Reads `events.jsonl` from a ledger directory.
pub fn load_events(dir: &Path) -> std::io::Result<Vec<Event>> {
    let file = fs::File::open(dir.join("events.jsonl"))?;
    let mut events = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        events.push(event);
    }
    Ok(events)
}

/// Appends events to `events.jsonl`, one JSON object per line.
pub fn append_events(dir: &Path, events: &[Event]) -> std::io::Result<()> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("events.jsonl"))?;
    for event in events {
        serde_json::to_writer(&mut file, event)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}
