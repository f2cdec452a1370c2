//! Monotone boolean access policies over numeric attribute identifiers.
//!
//! Policies are written in a small text language:
//!
//! ```text
//! expr   := term ('or' term)*
//! term   := factor ('and' factor)*
//! factor := ATTR | '(' expr ')'
//! ```
//!
//! Keywords are case-insensitive, `and` binds tighter than `or`, and both are
//! left-associative. `ATTR` is either a decimal `u64` or a name resolved
//! through an [`AttributeDictionary`]. Names are case-sensitive.

mod dictionary;
mod parser;
mod tree;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use dictionary::{AttributeDictionary, DictionaryError};
pub use parser::{parse_policy, ParseError};
pub use tree::{lower_to_tree, AccessTree};

/// Canonical (on-chain) form of an attribute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeId(pub u64);

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for AttributeId {
    fn from(value: u64) -> Self {
        AttributeId(value)
    }
}

pub type AttributeSet = BTreeSet<AttributeId>;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum PolicyExpr {
    Leaf(AttributeId),
    And(Box<PolicyExpr>, Box<PolicyExpr>),
    Or(Box<PolicyExpr>, Box<PolicyExpr>),
}

impl PolicyExpr {
    pub fn leaf(id: impl Into<AttributeId>) -> Self {
        PolicyExpr::Leaf(id.into())
    }

    pub fn and(left: PolicyExpr, right: PolicyExpr) -> Self {
        PolicyExpr::And(Box::new(left), Box::new(right))
    }

    pub fn or(left: PolicyExpr, right: PolicyExpr) -> Self {
        PolicyExpr::Or(Box::new(left), Box::new(right))
    }

    /// Standard propositional semantics: a leaf holds iff its attribute is present.
    pub fn eval(&self, attrs: &AttributeSet) -> bool {
        match self {
            PolicyExpr::Leaf(id) => attrs.contains(id),
            PolicyExpr::And(l, r) => l.eval(attrs) && r.eval(attrs),
            PolicyExpr::Or(l, r) => l.eval(attrs) || r.eval(attrs),
        }
    }

    /// Distinct attributes mentioned by the policy.
    pub fn attributes(&self) -> AttributeSet {
        let mut out = AttributeSet::new();
        self.collect_attributes(&mut out);
        out
    }

    fn collect_attributes(&self, out: &mut AttributeSet) {
        match self {
            PolicyExpr::Leaf(id) => {
                out.insert(*id);
            }
            PolicyExpr::And(l, r) | PolicyExpr::Or(l, r) => {
                l.collect_attributes(out);
                r.collect_attributes(out);
            }
        }
    }

    /// Number of nodes (leaves plus operators).
    pub fn node_count(&self) -> usize {
        match self {
            PolicyExpr::Leaf(_) => 1,
            PolicyExpr::And(l, r) | PolicyExpr::Or(l, r) => 1 + l.node_count() + r.node_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            PolicyExpr::Leaf(_) => 1,
            PolicyExpr::And(l, r) | PolicyExpr::Or(l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Renders the policy using dictionary names where one exists.
    pub fn display_with<'a>(&'a self, dict: &'a AttributeDictionary) -> impl fmt::Display + 'a {
        Printer { expr: self, dict: Some(dict) }
    }
}

/// `eval` as a free function, mirroring the operation name used elsewhere.
pub fn eval_policy(policy: &PolicyExpr, attrs: &AttributeSet) -> bool {
    policy.eval(attrs)
}

impl fmt::Display for PolicyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Printer { expr: self, dict: None }.fmt(f)
    }
}

struct Printer<'a> {
    expr: &'a PolicyExpr,
    dict: Option<&'a AttributeDictionary>,
}

impl Printer<'_> {
    fn write(&self, expr: &PolicyExpr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match expr {
            PolicyExpr::Leaf(id) => match self.dict.and_then(|d| d.name_of(*id)) {
                Some(name) => f.write_str(name),
                None => write!(f, "{id}"),
            },
            PolicyExpr::And(l, r) => self.write_binary(expr, l, "and", r, f),
            PolicyExpr::Or(l, r) => self.write_binary(expr, l, "or", r, f),
        }
    }

    fn write_binary(
        &self,
        parent: &PolicyExpr,
        left: &PolicyExpr,
        keyword: &str,
        right: &PolicyExpr,
        f: &mut fmt::Formatter<'_>,
    ) -> fmt::Result {
        // The left child may drop its parentheses only when it is a leaf or the
        // same operator (left-associativity); the right child only when a leaf.
        let same_op = std::mem::discriminant(parent) == std::mem::discriminant(left);
        self.write_child(left, matches!(left, PolicyExpr::Leaf(_)) || same_op, f)?;
        write!(f, " {keyword} ")?;
        self.write_child(right, matches!(right, PolicyExpr::Leaf(_)), f)
    }

    fn write_child(&self, child: &PolicyExpr, bare: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if bare {
            self.write(child, f)
        } else {
            f.write_str("(")?;
            self.write(child, f)?;
            f.write_str(")")
        }
    }
}

impl fmt::Display for Printer<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.expr, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[u64]) -> AttributeSet {
        ids.iter().copied().map(AttributeId).collect()
    }

    #[test]
    fn leaf_needs_its_attribute() {
        let p = PolicyExpr::leaf(1);
        assert!(!p.eval(&set(&[])));
        assert!(p.eval(&set(&[1])));
        assert!(!p.eval(&set(&[2])));
    }

    #[test]
    fn printer_keeps_structure() {
        let a = || PolicyExpr::leaf(1);
        let b = || PolicyExpr::leaf(2);
        let c = || PolicyExpr::leaf(3);
        assert_eq!(PolicyExpr::or(PolicyExpr::and(a(), b()), c()).to_string(), "(1 and 2) or 3");
        assert_eq!(PolicyExpr::and(PolicyExpr::and(a(), b()), c()).to_string(), "1 and 2 and 3");
        assert_eq!(PolicyExpr::and(a(), PolicyExpr::and(b(), c())).to_string(), "1 and (2 and 3)");
        assert_eq!(PolicyExpr::and(a(), PolicyExpr::or(b(), c())).to_string(), "1 and (2 or 3)");
    }

    #[test]
    fn counts() {
        let p = PolicyExpr::and(PolicyExpr::leaf(1), PolicyExpr::or(PolicyExpr::leaf(2), PolicyExpr::leaf(1)));
        assert_eq!(p.node_count(), 5);
        assert_eq!(p.depth(), 3);
        assert_eq!(p.attributes(), set(&[1, 2]));
    }
}
