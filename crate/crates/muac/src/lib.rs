//! Automatic fair exchanges of finite resources.
//!
//! Users state mutual access control policies ("I give X if I receive Y");
//! the engine finds, certifies and atomically applies exchange bundles that
//! satisfy every involved user's policy, including circular agreements. A
//! cheap certificate checker plays the on-chain verifier, a goal-directed
//! search plays the off-chain prover, and a ledger simulator ties the
//! pipeline together.

pub mod fixtures;
pub mod ledger;
pub mod model;
pub mod muacl;
pub mod policy;
pub mod solver;
