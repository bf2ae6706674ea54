//! The canonical three-user house exchange scenario, used throughout the
//! tests and handy for demos.

use std::collections::BTreeMap;

use crate::model::{Context, ContextFact, OwnershipState, ResourceKind, Transfer, UserId};
use crate::policy::{parse_policy, Policy};

pub fn user(name: &str) -> UserId {
    UserId::new(name).expect("valid user name")
}

pub fn kind(name: &str) -> ResourceKind {
    ResourceKind::new(name).expect("valid resource name")
}

pub fn transfer(giver: &str, resource: &str, receiver: &str) -> Transfer {
    Transfer::new(user(giver), kind(resource), user(receiver)).expect("valid transfer")
}

pub fn state(entries: &[(&str, &str, u32)]) -> OwnershipState {
    let mut s = OwnershipState::new();
    for (u, k, n) in entries {
        s.add(&user(u), &kind(k), *n);
    }
    s
}

pub fn fact(pred: &str, args: &[&str]) -> ContextFact {
    ContextFact::new(pred, args.iter().map(|a| user(a)).collect()).expect("valid fact")
}

pub const ALICE_POLICY: &str =
    "Gives(Me, countryside_house, u) :- Gives(u', downtown_house, Me).";

pub const BOB_POLICY: &str = "Gives(Me, downtown_house, u) :- \
     Gives(u', countryside_house, u'') with FriendOrSame(Me, u'').";

pub const CARL_POLICY: &str = "Gives(Me, downtown_flat, u) :- Gives(u', countryside_house, Me).";

/// Alice, Bob and Carl's policies.
pub fn house_policies() -> BTreeMap<UserId, Policy> {
    [
        (user("alice"), parse_policy(ALICE_POLICY, user("alice")).unwrap()),
        (user("bob"), parse_policy(BOB_POLICY, user("bob")).unwrap()),
        (user("carl"), parse_policy(CARL_POLICY, user("carl")).unwrap()),
    ]
    .into()
}

/// The initial state: everyone holds their own home.
pub fn house_state() -> OwnershipState {
    state(&[
        ("alice", "countryside_house", 1),
        ("bob", "downtown_house", 1),
        ("carl", "downtown_flat", 1),
    ])
}

/// Bob considers himself and Carl eligible beneficiaries.
pub fn house_context() -> Context {
    Context::from_facts([
        fact("FriendOrSame", &["bob", "bob"]),
        fact("FriendOrSame", &["bob", "carl"]),
    ])
}

/// The state after Alice and Bob swap houses.
pub fn swapped_state() -> OwnershipState {
    state(&[
        ("alice", "downtown_house", 1),
        ("bob", "countryside_house", 1),
        ("carl", "downtown_flat", 1),
    ])
}
