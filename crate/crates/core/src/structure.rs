//! Region graph reduction by template matching.
//!
//! Starting from one region per basic block, the graph is scanned in
//! reverse post-order for if-else, if and linear templates. Each match is
//! merged into a new region and the scan restarts, until a single region
//! is left or nothing matches.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use crate::cfg::{BlockId, Cfg, EdgeKind};

pub type RegionId = usize;

/// Structured control flow over basic blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Region {
    Block(BlockId),
    Seq(Vec<Region>),
    /// `head` ends in a conditional branch; `body` runs on one side of it.
    If {
        head: Box<Region>,
        body: Box<Region>,
        body_on_taken: bool,
    },
    /// `then_` is the fall-through side, `else_` the taken side.
    IfElse {
        head: Box<Region>,
        then_: Box<Region>,
        else_: Box<Region>,
    },
}

impl Region {
    pub fn blocks(&self, out: &mut Vec<BlockId>) {
        match self {
            Region::Block(b) => out.push(*b),
            Region::Seq(v) => v.iter().for_each(|r| r.blocks(out)),
            Region::If { head, body, .. } => {
                head.blocks(out);
                body.blocks(out);
            }
            Region::IfElse { head, then_, else_ } => {
                head.blocks(out);
                then_.blocks(out);
                else_.blocks(out);
            }
        }
    }

    fn seq(a: Region, b: Region) -> Region {
        let mut v = match a {
            Region::Seq(v) => v,
            other => vec![other],
        };
        match b {
            Region::Seq(w) => v.extend(w),
            other => v.push(other),
        }
        Region::Seq(v)
    }

    /// Indented tree dump.
    pub fn dump(&self) -> String {
        fn go(r: &Region, depth: usize, s: &mut String) {
            let pad = "  ".repeat(depth);
            match r {
                Region::Block(b) => {
                    let _ = writeln!(s, "{pad}block B{b}");
                }
                Region::Seq(v) => {
                    let _ = writeln!(s, "{pad}linear");
                    v.iter().for_each(|c| go(c, depth + 1, s));
                }
                Region::If {
                    head,
                    body,
                    body_on_taken,
                } => {
                    let side = if *body_on_taken { "taken" } else { "fall" };
                    let _ = writeln!(s, "{pad}if (body on {side} side)");
                    go(head, depth + 1, s);
                    go(body, depth + 1, s);
                }
                Region::IfElse { head, then_, else_ } => {
                    let _ = writeln!(s, "{pad}if-else");
                    go(head, depth + 1, s);
                    go(then_, depth + 1, s);
                    go(else_, depth + 1, s);
                }
            }
        }
        let mut s = String::new();
        go(self, 0, &mut s);
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Template {
    Linear,
    If,
    IfElse,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeRecord {
    /// Merged region ids, sorted.
    pub members: Vec<RegionId>,
    pub result: RegionId,
    pub template: Template,
}

#[derive(Clone, Debug, PartialEq)]
struct Node {
    tree: Region,
    /// Out-edges; a conditional exit has a `Fall` and a `Taken` edge.
    succs: Vec<(RegionId, EdgeKind)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionGraph {
    nodes: BTreeMap<RegionId, Node>,
    pub entry: RegionId,
    next_id: RegionId,
}

/// Outcome of [`reduce`].
#[derive(Clone, Debug, PartialEq)]
pub struct Reduction {
    pub merges: Vec<MergeRecord>,
    /// The remaining regions in reverse post-order, with their exits.
    /// A single entry means reduction succeeded.
    pub remaining: Vec<(RegionId, Region, Vec<(RegionId, EdgeKind)>)>,
}

impl Reduction {
    pub fn root(&self) -> Option<&Region> {
        match self.remaining.as_slice() {
            [(_, r, _)] => Some(r),
            _ => None,
        }
    }
}

impl RegionGraph {
    /// Builds a graph whose regions are `Block(id)` for each listed node.
    pub fn from_edges(nodes: &[RegionId], edges: &[(RegionId, RegionId, EdgeKind)], entry: RegionId) -> Self {
        let mut map = BTreeMap::new();
        for &n in nodes {
            map.insert(
                n,
                Node {
                    tree: Region::Block(n),
                    succs: Vec::new(),
                },
            );
        }
        for &(a, b, k) in edges {
            if let Some(node) = map.get_mut(&a) {
                if !node.succs.iter().any(|s| s.0 == b) {
                    node.succs.push((b, k));
                }
            }
        }
        // a conditional branch whose two sides meet immediately is a plain edge
        for node in map.values_mut() {
            if node.succs.len() == 1 && node.succs[0].1 == EdgeKind::Taken {
                node.succs[0].1 = EdgeKind::Fall;
            }
        }
        let next_id = nodes.iter().max().map(|m| m + 1).unwrap_or(0);
        RegionGraph {
            nodes: map,
            entry,
            next_id,
        }
    }

    /// One region per reachable basic block.
    pub fn from_cfg(cfg: &Cfg) -> Self {
        let nodes: Vec<RegionId> = cfg.blocks.iter().filter(|b| !b.dead).map(|b| b.id).collect();
        let edges: Vec<_> = cfg
            .edges
            .iter()
            .filter(|(a, _, _)| !cfg.blocks[*a].dead)
            .copied()
            .collect();
        let mut g = Self::from_edges(&nodes, &edges, cfg.entry);
        g.next_id = cfg.blocks.len();
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn succ_ids(&self, r: RegionId) -> Vec<RegionId> {
        self.nodes[&r].succs.iter().map(|s| s.0).collect()
    }

    fn preds(&self, r: RegionId) -> BTreeSet<RegionId> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.succs.iter().any(|s| s.0 == r))
            .map(|(id, _)| *id)
            .collect()
    }

    fn rpo(&self) -> Vec<RegionId> {
        let mut seen = BTreeSet::new();
        let mut post = Vec::new();
        let mut stack = vec![(self.entry, 0usize)];
        seen.insert(self.entry);
        while let Some((n, i)) = stack.pop() {
            let succs = self.succ_ids(n);
            if i < succs.len() {
                stack.push((n, i + 1));
                let s = succs[i];
                if self.nodes.contains_key(&s) && seen.insert(s) {
                    stack.push((s, 0));
                }
            } else {
                post.push(n);
            }
        }
        post.reverse();
        for id in self.nodes.keys() {
            if !seen.contains(id) {
                post.push(*id);
            }
        }
        post
    }

    /// Replaces `members` with one region inheriting the given exits.
    fn merge(
        &mut self,
        members: &[RegionId],
        tree: Region,
        succs: Vec<(RegionId, EdgeKind)>,
        template: Template,
    ) -> MergeRecord {
        let id = self.next_id;
        self.next_id += 1;
        let was_entry = members.contains(&self.entry);
        for m in members {
            self.nodes.remove(m);
        }
        for node in self.nodes.values_mut() {
            for s in node.succs.iter_mut() {
                if members.contains(&s.0) {
                    s.0 = id;
                }
            }
            node.succs.dedup_by_key(|s| s.0);
        }
        self.nodes.insert(id, Node { tree, succs });
        if was_entry {
            self.entry = id;
        }
        let mut members = members.to_vec();
        members.sort_unstable();
        MergeRecord {
            members,
            result: id,
            template,
        }
    }

    fn side(&self, r: RegionId, kind: EdgeKind) -> Option<RegionId> {
        self.nodes[&r].succs.iter().find(|s| s.1 == kind).map(|s| s.0)
    }

    fn single_pred(&self, t: RegionId, r: RegionId) -> bool {
        t != self.entry && t != r && self.preds(t) == BTreeSet::from([r])
    }

    fn try_if_else(&mut self, r: RegionId) -> Option<MergeRecord> {
        if self.nodes[&r].succs.len() != 2 {
            return None;
        }
        let t = self.side(r, EdgeKind::Fall)?;
        let e = self.side(r, EdgeKind::Taken)?;
        if t == e || !self.single_pred(t, r) || !self.single_pred(e, r) {
            return None;
        }
        let mut exits: BTreeSet<RegionId> = self.succ_ids(t).into_iter().collect();
        exits.extend(self.succ_ids(e));
        if exits.len() > 1 || exits.contains(&r) || exits.contains(&t) || exits.contains(&e) {
            return None;
        }
        let tree = Region::IfElse {
            head: Box::new(self.nodes[&r].tree.clone()),
            then_: Box::new(self.nodes[&t].tree.clone()),
            else_: Box::new(self.nodes[&e].tree.clone()),
        };
        let mut members = vec![r, t, e];
        let (tree, succs) = match exits.first() {
            Some(&j) => {
                let incoming: BTreeSet<RegionId> =
                    [t, e].into_iter().filter(|x| self.succ_ids(*x).contains(&j)).collect();
                if self.absorbable(j, &incoming) {
                    members.push(j);
                    let node = &self.nodes[&j];
                    (Region::seq(tree, node.tree.clone()), node.succs.clone())
                } else {
                    (tree, vec![(j, EdgeKind::Fall)])
                }
            }
            None => (tree, Vec::new()),
        };
        Some(self.merge(&members, tree, succs, Template::IfElse))
    }

    fn absorbable(&self, j: RegionId, incoming: &BTreeSet<RegionId>) -> bool {
        j != self.entry && &self.preds(j) == incoming && self.nodes[&j].succs.len() <= 1 && !self.succ_ids(j).contains(&j)
    }

    fn try_if(&mut self, r: RegionId) -> Option<MergeRecord> {
        if self.nodes[&r].succs.len() != 2 {
            return None;
        }
        let fall = self.side(r, EdgeKind::Fall)?;
        let taken = self.side(r, EdgeKind::Taken)?;
        for (t, j, on_taken) in [(fall, taken, false), (taken, fall, true)] {
            if !self.single_pred(t, r) || t == j || j == r {
                continue;
            }
            let ts = self.succ_ids(t);
            if !(ts == [j] || ts.is_empty()) {
                continue;
            }
            let tree = Region::If {
                head: Box::new(self.nodes[&r].tree.clone()),
                body: Box::new(self.nodes[&t].tree.clone()),
                body_on_taken: on_taken,
            };
            let incoming: BTreeSet<RegionId> = if ts.is_empty() {
                BTreeSet::from([r])
            } else {
                BTreeSet::from([r, t])
            };
            let mut members = vec![r, t];
            let (tree, succs) = if j != r && self.absorbable(j, &incoming) {
                members.push(j);
                let node = &self.nodes[&j];
                (Region::seq(tree, node.tree.clone()), node.succs.clone())
            } else {
                (tree, vec![(j, EdgeKind::Fall)])
            };
            return Some(self.merge(&members, tree, succs, Template::If));
        }
        None
    }

    fn try_linear(&mut self, r: RegionId) -> Option<MergeRecord> {
        let succs = self.succ_ids(r);
        let [s] = succs.as_slice() else {
            return None;
        };
        let s = *s;
        if !self.single_pred(s, r) || self.nodes[&s].succs.len() > 1 || self.succ_ids(s).contains(&s) {
            return None;
        }
        let tree = Region::seq(self.nodes[&r].tree.clone(), self.nodes[&s].tree.clone());
        let succs = self.nodes[&s].succs.clone();
        Some(self.merge(&[r, s], tree, succs, Template::Linear))
    }

    /// Performs the first applicable merge in reverse post-order.
    pub fn step(&mut self) -> Option<MergeRecord> {
        for r in self.rpo() {
            if let Some(m) = self.try_if_else(r) {
                return Some(m);
            }
            if let Some(m) = self.try_if(r) {
                return Some(m);
            }
            if let Some(m) = self.try_linear(r) {
                return Some(m);
            }
        }
        None
    }

    pub fn to_dot(&self, name: &str) -> String {
        let mut s = format!("digraph \"{name}\" {{\n");
        for (id, n) in &self.nodes {
            let mut blocks = Vec::new();
            n.tree.blocks(&mut blocks);
            let list: Vec<String> = blocks.iter().map(|b| format!("B{b}")).collect();
            let _ = writeln!(s, "    R{id} [label=\"R{id}: {}\"];", list.join(" "));
            for (t, k) in &n.succs {
                let attr = if *k == EdgeKind::Taken { " [label=\"taken\"]" } else { "" };
                let _ = writeln!(s, "    R{id} -> R{t}{attr};");
            }
        }
        s.push_str("}\n");
        s
    }
}

/// Reduces the graph as far as the templates allow.
pub fn reduce(mut g: RegionGraph) -> Reduction {
    let mut merges = Vec::new();
    while g.len() > 1 {
        match g.step() {
            Some(m) => merges.push(m),
            None => break,
        }
    }
    let order = g.rpo();
    let remaining = order
        .into_iter()
        .map(|id| {
            let n = &g.nodes[&id];
            (id, n.tree.clone(), n.succs.clone())
        })
        .collect();
    Reduction { merges, remaining }
}

/// Like [`reduce`], also returning a DOT snapshot before every merge.
pub fn reduce_traced(mut g: RegionGraph, name: &str) -> (Reduction, Vec<String>) {
    let mut dots = vec![g.to_dot(name)];
    let mut merges = Vec::new();
    while g.len() > 1 {
        match g.step() {
            Some(m) => {
                merges.push(m);
                dots.push(g.to_dot(name));
            }
            None => break,
        }
    }
    let mut r = reduce(g);
    merges.append(&mut r.merges);
    r.merges = merges;
    (r, dots)
}
