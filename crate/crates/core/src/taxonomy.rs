//! Category taxonomy: a rooted tree with per-node vocabularies.
//!
//! The tree is the ground truth behind every synthetic document's categories.
//! Node ids are dense integers in `[0, |nodes|)`; the root has depth 0 and
//! every child sits one level below its parent.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{CmaError, Result};

/// Identifier of a taxonomy node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CategoryId(pub u32);

impl CategoryId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryNode {
    pub id: CategoryId,
    pub parent: Option<CategoryId>,
    pub depth: u32,
    /// Word pool for this node. For leaves this is the vocabulary documents
    /// are generated from; for internal nodes it is the pool their descendant
    /// leaves borrow from.
    pub vocab: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    nodes: Vec<CategoryNode>,
    root: CategoryId,
    children: Vec<Vec<CategoryId>>,
}

impl Taxonomy {
    /// Assemble and validate a taxonomy from its nodes.
    pub fn new(nodes: Vec<CategoryNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(CmaError::Config("taxonomy has no nodes".to_owned()));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id.index() != i {
                return Err(CmaError::Config(format!(
                    "node ids must be dense and ordered: position {i} holds id {}",
                    node.id
                )));
            }
        }
        let mut roots = nodes.iter().filter(|n| n.parent.is_none());
        let root = match (roots.next(), roots.next()) {
            (Some(r), None) => r.id,
            _ => return Err(CmaError::Config("taxonomy must have exactly one root".to_owned())),
        };
        if nodes[root.index()].depth != 0 {
            return Err(CmaError::Config("root must have depth 0".to_owned()));
        }

        let mut children = vec![Vec::new(); nodes.len()];
        for node in &nodes {
            if let Some(parent) = node.parent {
                let pnode = nodes
                    .get(parent.index())
                    .ok_or_else(|| CmaError::Config(format!("unknown parent id {parent}")))?;
                if node.depth != pnode.depth + 1 {
                    return Err(CmaError::Config(format!(
                        "node {} depth {} inconsistent with parent depth {}",
                        node.id, node.depth, pnode.depth
                    )));
                }
                children[parent.index()].push(node.id);
            }
        }

        let taxonomy = Taxonomy { nodes, root, children };
        let leaves = taxonomy.leaves();
        if leaves.len() < 2 {
            return Err(CmaError::Config("taxonomy needs at least 2 leaves".to_owned()));
        }
        for leaf in leaves {
            if taxonomy.node(leaf)?.vocab.is_empty() {
                return Err(CmaError::Config(format!("leaf {leaf} has an empty vocabulary")));
            }
        }
        Ok(taxonomy)
    }

    pub fn root(&self) -> CategoryId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[CategoryNode] {
        &self.nodes
    }

    pub fn node(&self, id: CategoryId) -> Result<&CategoryNode> {
        self.nodes
            .get(id.index())
            .ok_or_else(|| CmaError::Lookup(format!("unknown category id {id}")))
    }

    pub fn children(&self, id: CategoryId) -> Result<&[CategoryId]> {
        if id.index() >= self.nodes.len() {
            return Err(CmaError::Lookup(format!("unknown category id {id}")));
        }
        Ok(&self.children[id.index()])
    }

    pub fn is_leaf(&self, id: CategoryId) -> Result<bool> {
        Ok(self.children(id)?.is_empty())
    }

    /// All leaf ids in ascending order.
    pub fn leaves(&self) -> Vec<CategoryId> {
        self.nodes
            .iter()
            .filter(|n| self.children[n.id.index()].is_empty())
            .map(|n| n.id)
            .collect()
    }

    /// Depth of the deepest leaf (the tree height).
    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Depth of the deepest common ancestor of `a` and `b`. Symmetric, and
    /// never exceeds the depth of either node.
    pub fn lca_depth(&self, a: CategoryId, b: CategoryId) -> Result<u32> {
        let mut a_node = self.node(a)?;
        let mut b_node = self.node(b)?;
        while a_node.depth > b_node.depth {
            a_node = self.node(a_node.parent.expect("non-root node has a parent"))?;
        }
        while b_node.depth > a_node.depth {
            b_node = self.node(b_node.parent.expect("non-root node has a parent"))?;
        }
        while a_node.id != b_node.id {
            a_node = self.node(a_node.parent.expect("nodes above depth 0 have parents"))?;
            b_node = self.node(b_node.parent.expect("nodes above depth 0 have parents"))?;
        }
        Ok(a_node.depth)
    }

    /// True when `a` and `b` are distinct leaves sharing a parent.
    pub fn are_siblings(&self, a: CategoryId, b: CategoryId) -> Result<bool> {
        if a == b {
            return Ok(false);
        }
        let pa = self.node(a)?.parent;
        let pb = self.node(b)?.parent;
        Ok(pa.is_some() && pa == pb)
    }

    /// Serialize as one node per line: `id<TAB>parent-or-dash<TAB>depth<TAB>vocab`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for node in &self.nodes {
            let parent = match node.parent {
                Some(p) => p.to_string(),
                None => "-".to_owned(),
            };
            writeln!(w, "{}\t{}\t{}\t{}", node.id, parent, node.depth, node.vocab.join(" "))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write cannot fail");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut nodes = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.splitn(4, '\t');
            let id = fields
                .next()
                .and_then(|s| s.parse::<u32>().ok())
                .ok_or_else(|| CmaError::Parse(format!("taxonomy line {}: bad id", lineno + 1)))?;
            let parent = match fields.next() {
                Some("-") => None,
                Some(s) => Some(CategoryId(s.parse::<u32>().map_err(|_| {
                    CmaError::Parse(format!("taxonomy line {}: bad parent", lineno + 1))
                })?)),
                None => {
                    return Err(CmaError::Parse(format!("taxonomy line {}: missing parent", lineno + 1)))
                }
            };
            let depth = fields
                .next()
                .and_then(|s| s.parse::<u32>().ok())
                .ok_or_else(|| CmaError::Parse(format!("taxonomy line {}: bad depth", lineno + 1)))?;
            let vocab = fields
                .next()
                .map(|s| s.split(' ').filter(|w| !w.is_empty()).map(str::to_owned).collect())
                .unwrap_or_default();
            nodes.push(CategoryNode { id: CategoryId(id), parent, depth, vocab });
        }
        Taxonomy::new(nodes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(BufReader::new(file))
    }
}
