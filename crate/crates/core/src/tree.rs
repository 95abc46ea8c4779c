use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};

/// A rooted directed tree over sample indices `0..T` with every edge
/// pointing away from the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OutTree {
    root: usize,
    parent: Vec<Option<usize>>,
}

impl OutTree {
    /// Validates that `parent` describes a single tree rooted at `root`.
    pub fn new(root: usize, parent: Vec<Option<usize>>) -> Result<Self> {
        let n = parent.len();
        if root >= n {
            return Err(Error::InvalidInput(format!("root {root} out of range for {n} nodes")));
        }
        for (t, p) in parent.iter().enumerate() {
            match *p {
                None if t != root => {
                    return Err(Error::InvalidInput(format!("node {t} has no parent but is not the root")))
                }
                Some(_) if t == root => {
                    return Err(Error::InvalidInput("root must not have a parent".into()))
                }
                Some(q) if q >= n || q == t => {
                    return Err(Error::InvalidInput(format!("node {t} has invalid parent {q}")))
                }
                _ => {}
            }
        }
        let tree = OutTree { root, parent };
        if tree.topological_order().len() != n {
            return Err(Error::InvalidInput("parent links contain a cycle".into()));
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, t: usize) -> Option<usize> {
        self.parent[t]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    /// `(child, parent)` pairs, one per non-root node, in node order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| (c, p)))
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.len()];
        for (c, p) in self.edges() {
            ch[p].push(c);
        }
        ch
    }

    /// Breadth-first order from the root; every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let ch = self.children();
        let mut order = Vec::with_capacity(self.len());
        let mut queue = VecDeque::from([self.root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            queue.extend(ch[v].iter().copied());
        }
        order
    }
}

impl fmt::Display for OutTree {
    /// Edge-list form: one `child,parent` line per node, the root written as
    /// `root,-`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "child,parent")?;
        for (c, p) in self.parent.iter().enumerate() {
            match p {
                Some(p) => writeln!(f, "{c},{p}")?,
                None => writeln!(f, "{c},-")?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_rooted_at_last_node() {
        // X1 <- X2 <- X3 in zero-based indices.
        let t = OutTree::new(2, vec![Some(1), Some(2), None]).unwrap();
        assert_eq!(t.topological_order(), vec![2, 1, 0]);
        assert_eq!(t.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn rejects_cycles_and_orphans() {
        assert!(OutTree::new(0, vec![None, Some(2), Some(1)]).is_err());
        assert!(OutTree::new(0, vec![None, None]).is_err());
        assert!(OutTree::new(0, vec![Some(1), None]).is_err());
        assert!(OutTree::new(0, vec![None, Some(1)]).is_err());
    }

    #[test]
    fn edge_list_format() {
        let t = OutTree::new(1, vec![Some(1), None]).unwrap();
        assert_eq!(t.to_string(), "child,parent\n0,1\n1,-\n");
    }
}
