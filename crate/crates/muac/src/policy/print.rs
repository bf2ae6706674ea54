//! Canonical text rendering of policies; reparsing the output yields a
//! structurally equal AST.

use std::fmt::Write;

use super::{Policy, Rule};

fn write_rule(out: &mut String, rule: &Rule) {
    write!(out, "{}", rule.head).unwrap();
    for (i, atom) in rule.body.iter().enumerate() {
        out.push_str(if i == 0 { " :- " } else { ", " });
        write!(out, "{atom}").unwrap();
    }
    for (i, guard) in rule.guards.iter().enumerate() {
        out.push_str(if i == 0 { " with " } else { ", " });
        write!(out, "{guard}").unwrap();
    }
    out.push_str(".\n");
}

pub fn pretty_print(policy: &Policy) -> String {
    let mut out = String::new();
    for rule in &policy.rules {
        write_rule(&mut out, rule);
    }
    out
}
