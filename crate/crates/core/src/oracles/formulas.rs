//! Exhaustive monotone formulas over a small attribute alphabet, with their
//! truth tables.

use std::collections::BTreeSet;

/// Leaf alphabet, spread over two authorities.
pub const LEAVES: [&str; 4] = ["a@A1", "b@A1", "c@A2", "d@A2"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formula {
    Leaf(usize),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
}

impl Formula {
    /// Evaluates against a subset given as a bitmask over [`LEAVES`].
    pub fn eval(&self, mask: u8) -> bool {
        match self {
            Formula::Leaf(i) => mask & (1 << i) != 0,
            Formula::And(l, r) => l.eval(mask) && r.eval(mask),
            Formula::Or(l, r) => l.eval(mask) || r.eval(mask),
        }
    }

    /// Fully parenthesized policy text.
    pub fn render(&self) -> String {
        match self {
            Formula::Leaf(i) => LEAVES[*i].to_owned(),
            Formula::And(l, r) => format!("({} and {})", l.render(), r.render()),
            Formula::Or(l, r) => format!("({} or {})", l.render(), r.render()),
        }
    }

    pub fn leaves(&self) -> BTreeSet<usize> {
        match self {
            Formula::Leaf(i) => BTreeSet::from([*i]),
            Formula::And(l, r) | Formula::Or(l, r) => &l.leaves() | &r.leaves(),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Formula::Leaf(_) => 1,
            Formula::And(l, r) | Formula::Or(l, r) => l.leaf_count() + r.leaf_count(),
        }
    }

    /// 16-entry truth table, bit `m` set when subset `m` satisfies.
    pub fn truth_table(&self) -> u16 {
        (0u8..16).filter(|&m| self.eval(m)).fold(0, |t, m| t | 1 << m)
    }
}

fn trees(n: usize) -> Vec<Formula> {
    if n == 1 {
        return (0..LEAVES.len()).map(Formula::Leaf).collect();
    }
    let mut out = Vec::new();
    for k in 1..n {
        let left = trees(k);
        let right = trees(n - k);
        for l in &left {
            for r in &right {
                out.push(Formula::And(Box::new(l.clone()), Box::new(r.clone())));
                out.push(Formula::Or(Box::new(l.clone()), Box::new(r.clone())));
            }
        }
    }
    out
}

/// All formulas with up to `max_leaves` leaf occurrences whose leaves are
/// pairwise distinct, so every formula has at most four distinct leaves.
pub fn enumerate(max_leaves: usize) -> Vec<Formula> {
    (1..=max_leaves)
        .flat_map(trees)
        .filter(|f| f.leaves().len() == f.leaf_count())
        .collect()
}

/// Subsets of [`LEAVES`] as bitmasks and attribute strings.
pub fn subsets() -> Vec<(u8, Vec<&'static str>)> {
    (0u8..16)
        .map(|m| (m, (0..4).filter(|i| m & (1 << i) != 0).map(|i| LEAVES[i]).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_is_large_enough_and_monotone() {
        let all = enumerate(4);
        assert!(all.len() * 16 >= 2000, "{}", all.len());
        for f in &all {
            for m in 0u8..16 {
                for extra in 0..4 {
                    if f.eval(m) {
                        assert!(f.eval(m | 1 << extra));
                    }
                }
            }
        }
    }

    #[test]
    fn renders_parenthesized() {
        let f = Formula::And(Box::new(Formula::Leaf(0)), Box::new(Formula::Or(Box::new(Formula::Leaf(2)), Box::new(Formula::Leaf(3)))));
        assert_eq!(f.render(), "(a@A1 and (c@A2 or d@A2))");
        assert_eq!(f.truth_table().count_ones(), 6);
    }
}
