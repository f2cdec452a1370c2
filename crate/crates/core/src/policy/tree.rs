use super::{AttributeId, AttributeSet, PolicyExpr};

/// Threshold-gate form of a policy, the shape the encryption scheme shares secrets over.
///
/// A `Gate` with threshold `k` over `n` children is satisfied when at least `k`
/// children are. `and` lowers to `n`-of-`n`, `or` to `1`-of-`n`; chains of the
/// same operator are flattened into a single gate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AccessTree {
    Leaf(AttributeId),
    Gate { threshold: usize, children: Vec<AccessTree> },
}

impl AccessTree {
    pub fn satisfies(&self, attrs: &AttributeSet) -> bool {
        match self {
            AccessTree::Leaf(id) => attrs.contains(id),
            AccessTree::Gate { threshold, children } => {
                children.iter().filter(|c| c.satisfies(attrs)).take(*threshold).count() >= *threshold
            }
        }
    }

    /// Leaves in depth-first, left-to-right order. Ciphertexts store one share per leaf in this order.
    pub fn leaves(&self) -> Vec<AttributeId> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<AttributeId>) {
        match self {
            AccessTree::Leaf(id) => out.push(*id),
            AccessTree::Gate { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            AccessTree::Leaf(_) => 1,
            AccessTree::Gate { children, .. } => children.iter().map(AccessTree::leaf_count).sum(),
        }
    }

    /// Structural sanity: thresholds in `1..=n`, no empty gates.
    pub fn is_well_formed(&self) -> bool {
        match self {
            AccessTree::Leaf(_) => true,
            AccessTree::Gate { threshold, children } => {
                !children.is_empty()
                    && *threshold >= 1
                    && *threshold <= children.len()
                    && children.iter().all(AccessTree::is_well_formed)
            }
        }
    }
}

pub fn lower_to_tree(policy: &PolicyExpr) -> AccessTree {
    match policy {
        PolicyExpr::Leaf(id) => AccessTree::Leaf(*id),
        PolicyExpr::And(..) => {
            let mut children = Vec::new();
            flatten(policy, true, &mut children);
            AccessTree::Gate { threshold: children.len(), children }
        }
        PolicyExpr::Or(..) => {
            let mut children = Vec::new();
            flatten(policy, false, &mut children);
            AccessTree::Gate { threshold: 1, children }
        }
    }
}

fn flatten(node: &PolicyExpr, conjunction: bool, out: &mut Vec<AccessTree>) {
    match (node, conjunction) {
        (PolicyExpr::And(l, r), true) | (PolicyExpr::Or(l, r), false) => {
            flatten(l, conjunction, out);
            flatten(r, conjunction, out);
        }
        _ => out.push(lower_to_tree(node)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{parse_policy, AttributeDictionary};
    use proptest::prelude::*;

    fn leaf(v: u64) -> PolicyExpr {
        PolicyExpr::Leaf(AttributeId(v))
    }

    fn subsets(universe: &[u64]) -> impl Iterator<Item = AttributeSet> + '_ {
        (0u32..(1 << universe.len())).map(move |mask| {
            universe
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, v)| AttributeId(*v))
                .collect()
        })
    }

    #[test]
    fn and_is_n_of_n_and_or_is_one_of_n() {
        assert_eq!(
            lower_to_tree(&PolicyExpr::and(leaf(1), leaf(2))),
            AccessTree::Gate { threshold: 2, children: vec![AccessTree::Leaf(AttributeId(1)), AccessTree::Leaf(AttributeId(2))] }
        );
        assert_eq!(
            lower_to_tree(&PolicyExpr::or(leaf(1), leaf(2))),
            AccessTree::Gate { threshold: 1, children: vec![AccessTree::Leaf(AttributeId(1)), AccessTree::Leaf(AttributeId(2))] }
        );
    }

    #[test]
    fn chains_flatten() {
        let t = lower_to_tree(&PolicyExpr::and(leaf(1), PolicyExpr::and(leaf(2), PolicyExpr::or(leaf(3), leaf(4)))));
        match t {
            AccessTree::Gate { threshold: 3, ref children } => {
                assert_eq!(children.len(), 3);
                assert!(matches!(children[2], AccessTree::Gate { threshold: 1, .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(t.leaves(), vec![AttributeId(1), AttributeId(2), AttributeId(3), AttributeId(4)]);
    }

    #[test]
    fn bom_slice_policy_matches_on_all_subsets() {
        let dict = AttributeDictionary::parse("Manufacturer\t11\nSupplier\t16\nElectronics\t3\n").unwrap();
        let p = parse_policy("14548487 and (Manufacturer or (Supplier and Electronics))", &dict).unwrap();
        let t = lower_to_tree(&p);
        let mut satisfying = 0;
        for s in subsets(&[14548487, 11, 16, 3]) {
            assert_eq!(t.satisfies(&s), p.eval(&s), "{s:?}");
            satisfying += usize::from(p.eval(&s));
        }
        // case id plus (Manufacturer, or both Supplier and Electronics): 4 + 2 - 1 = 5 of 16.
        assert_eq!(satisfying, 5);
    }

    pub(crate) fn policy_over(universe: u64) -> impl Strategy<Value = PolicyExpr> {
        let leaf = (0..universe).prop_map(|v| PolicyExpr::Leaf(AttributeId(v)));
        leaf.prop_recursive(5, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(l, r)| PolicyExpr::and(l, r)),
                (inner.clone(), inner).prop_map(|(l, r)| PolicyExpr::or(l, r)),
            ]
        })
    }

    proptest! {
        #[test]
        fn lowering_preserves_satisfaction(
            (universe, p) in (1u64..=10).prop_flat_map(|u| (Just(u), policy_over(u)))
        ) {
            let t = lower_to_tree(&p);
            prop_assert!(t.is_well_formed());
            prop_assert_eq!(t.leaf_count(), t.leaves().len());
            let ids: Vec<u64> = (0..universe).collect();
            for s in subsets(&ids) {
                prop_assert_eq!(t.satisfies(&s), p.eval(&s));
            }
        }

        #[test]
        fn print_then_parse_is_identity(p in policy_over(6)) {
            let text = p.to_string();
            prop_assert_eq!(parse_policy(&text, &AttributeDictionary::new()).unwrap(), p);
        }

        #[test]
        fn evaluation_is_monotone(p in policy_over(6), small in 0u32..64, extra in 0u32..64) {
            let ids: Vec<u64> = (0..6).collect();
            let pick = |mask: u32| -> AttributeSet {
                ids.iter().filter(|v| mask & (1 << **v) != 0).map(|v| AttributeId(*v)).collect()
            };
            let s = pick(small);
            let bigger = pick(small | extra);
            if p.eval(&s) {
                prop_assert!(p.eval(&bigger));
            }
        }
    }
}
