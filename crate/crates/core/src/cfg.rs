//! Control flow graph construction and exec-mask if-else normalization.

use std::collections::{HashMap, HashSet};
use std::fmt::Write;

use thiserror::Error;

use crate::asm::{Instruction, Operand, SpecialReg};
use crate::diag::Diagnostic;

pub type BlockId = usize;

/// Scalar condition tested by an `s_cbranch_*` instruction; the branch is
/// taken when the condition holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BranchCond {
    SccZero,
    SccNonZero,
    VccZero,
    VccNonZero,
    ExecZero,
    ExecNonZero,
}

impl BranchCond {
    pub fn from_mnemonic(m: &str) -> Option<BranchCond> {
        Some(match m {
            "s_cbranch_scc0" => BranchCond::SccZero,
            "s_cbranch_scc1" => BranchCond::SccNonZero,
            "s_cbranch_vccz" => BranchCond::VccZero,
            "s_cbranch_vccnz" => BranchCond::VccNonZero,
            "s_cbranch_execz" => BranchCond::ExecZero,
            "s_cbranch_execnz" => BranchCond::ExecNonZero,
            _ => return None,
        })
    }

    pub fn on_exec(self) -> bool {
        matches!(self, BranchCond::ExecZero | BranchCond::ExecNonZero)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Terminator {
    Fallthrough(BlockId),
    Jump(BlockId),
    Branch {
        cond: BranchCond,
        taken: BlockId,
        fall: BlockId,
    },
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Fall,
    Taken,
    Jump,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExecOpKind {
    /// `s_and_saveexec_b64 P, cond`
    Save,
    /// `exec = P & ~exec`
    Invert,
    /// `exec = P`
    Restore,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecOp {
    pub kind: ExecOpKind,
    /// Low register of the saved-mask pair.
    pub saved: u16,
    /// Index of the instruction within its block.
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub instrs: Vec<Instruction>,
    pub term: Terminator,
    pub exec_ops: Vec<ExecOp>,
    pub dead: bool,
}

impl BasicBlock {
    pub fn successors(&self) -> Vec<(BlockId, EdgeKind)> {
        match self.term {
            Terminator::Fallthrough(b) => vec![(b, EdgeKind::Fall)],
            Terminator::Jump(b) => vec![(b, EdgeKind::Jump)],
            Terminator::Branch { taken, fall, .. } => {
                vec![(fall, EdgeKind::Fall), (taken, EdgeKind::Taken)]
            }
            Terminator::End => Vec::new(),
        }
    }

    /// Source line of the first instruction, for diagnostics.
    pub fn line(&self) -> Option<usize> {
        self.instrs.first().map(|i| i.line)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cfg {
    pub blocks: Vec<BasicBlock>,
    pub entry: BlockId,
    pub edges: Vec<(BlockId, BlockId, EdgeKind)>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CfgError {
    #[error("line {line}: branch to undefined label `{label}`")]
    UndefinedLabel { label: String, line: usize },
    #[error("line {line}: label `{label}` defined more than once")]
    DuplicateLabel { label: String, line: usize },
}

fn branch_target(i: &Instruction) -> Option<&str> {
    i.operands.first().and_then(Operand::as_label)
}

fn is_terminator(i: &Instruction) -> bool {
    i.mnemonic == "s_branch" || i.mnemonic == "s_endpgm" || BranchCond::from_mnemonic(&i.mnemonic).is_some()
}

impl Cfg {
    pub fn predecessors(&self, b: BlockId) -> Vec<BlockId> {
        let mut p: Vec<BlockId> = self
            .edges
            .iter()
            .filter(|e| e.1 == b)
            .map(|e| e.0)
            .collect();
        p.dedup();
        p
    }

    /// Graphviz rendering for debugging.
    pub fn to_dot(&self, name: &str) -> String {
        let mut s = format!("digraph \"{name}\" {{\n    node [shape=box fontname=monospace];\n");
        for b in &self.blocks {
            let mut label = format!("B{}", b.id);
            if b.dead {
                label.push_str(" (dead)");
            }
            for i in &b.instrs {
                label.push_str("\\l");
                label.push_str(&i.source_text.replace('"', "\\\""));
            }
            label.push_str("\\l");
            let _ = writeln!(s, "    B{} [label=\"{label}\"];", b.id);
        }
        for (a, b, k) in &self.edges {
            let style = match k {
                EdgeKind::Fall => "",
                EdgeKind::Taken => " [label=\"taken\"]",
                EdgeKind::Jump => " [style=dashed]",
            };
            let _ = writeln!(s, "    B{a} -> B{b}{style};");
        }
        s.push_str("}\n");
        s
    }
}

/// Splits the instruction list into basic blocks at labels and after
/// branches and `s_endpgm`.
pub fn build_cfg(instrs: &[Instruction]) -> Result<Cfg, CfgError> {
    let mut starts = vec![0usize];
    for (k, i) in instrs.iter().enumerate() {
        if k > 0 && !i.labels.is_empty() {
            starts.push(k);
        }
        if is_terminator(i) && k + 1 < instrs.len() {
            starts.push(k + 1);
        }
    }
    starts.sort_unstable();
    starts.dedup();
    let mut label_block: HashMap<&str, BlockId> = HashMap::new();
    for (b, &start) in starts.iter().enumerate() {
        if start >= instrs.len() {
            continue;
        }
        for l in &instrs[start].labels {
            if label_block.insert(l.as_str(), b).is_some() {
                return Err(CfgError::DuplicateLabel {
                    label: l.clone(),
                    line: instrs[start].line,
                });
            }
        }
    }
    let n = if instrs.is_empty() { 1 } else { starts.len() };
    let mut blocks = Vec::with_capacity(n);
    for b in 0..n {
        let lo = starts.get(b).copied().unwrap_or(0);
        let hi = starts.get(b + 1).copied().unwrap_or(instrs.len());
        let body: Vec<Instruction> = instrs.get(lo..hi).map(|s| s.to_vec()).unwrap_or_default();
        let next = if b + 1 < n { Some(b + 1) } else { None };
        let resolve = |i: &Instruction| -> Result<BlockId, CfgError> {
            let label = branch_target(i).unwrap_or("");
            label_block
                .get(label)
                .copied()
                .ok_or_else(|| CfgError::UndefinedLabel {
                    label: label.to_string(),
                    line: i.line,
                })
        };
        let term = match body.last() {
            Some(last) if last.mnemonic == "s_endpgm" => Terminator::End,
            Some(last) if last.mnemonic == "s_branch" => Terminator::Jump(resolve(last)?),
            Some(last) if BranchCond::from_mnemonic(&last.mnemonic).is_some() => {
                let cond = BranchCond::from_mnemonic(&last.mnemonic).unwrap();
                let taken = resolve(last)?;
                match next {
                    Some(fall) => Terminator::Branch { cond, taken, fall },
                    None => Terminator::Jump(taken),
                }
            }
            _ => match next {
                Some(nb) => Terminator::Fallthrough(nb),
                None => Terminator::End,
            },
        };
        let exec_ops = annotate_exec_instrs(&body);
        blocks.push(BasicBlock {
            id: b,
            instrs: body,
            term,
            exec_ops,
            dead: false,
        });
    }
    let mut edges = Vec::new();
    for b in &blocks {
        for (t, k) in b.successors() {
            edges.push((b.id, t, k));
        }
    }
    let mut seen = vec![false; blocks.len()];
    let mut stack = vec![0];
    while let Some(b) = stack.pop() {
        if std::mem::replace(&mut seen[b], true) {
            continue;
        }
        for (t, _) in blocks[b].successors() {
            stack.push(t);
        }
    }
    for (b, s) in blocks.iter_mut().zip(seen) {
        b.dead = !s;
    }
    Ok(Cfg {
        blocks,
        entry: 0,
        edges,
    })
}

fn pair_lo(op: &Operand) -> Option<u16> {
    match op {
        Operand::SgprRange(a, b) if b - a == 1 => Some(*a),
        _ => None,
    }
}

fn is_exec(op: &Operand) -> bool {
    matches!(op, Operand::Special(SpecialReg::Exec))
}

/// Classifies an exec-mask manipulation.
pub fn exec_op_of(i: &Instruction) -> Option<(ExecOpKind, u16)> {
    let ops = &i.operands;
    match (i.mnemonic.as_str(), ops.as_slice()) {
        ("s_and_saveexec_b64", [d, _]) => Some((ExecOpKind::Save, pair_lo(d)?)),
        ("s_andn2_b64", [d, p, e]) if is_exec(d) && is_exec(e) => {
            Some((ExecOpKind::Invert, pair_lo(p)?))
        }
        ("s_xor_b64", [d, a, b]) if is_exec(d) => {
            if is_exec(a) {
                Some((ExecOpKind::Invert, pair_lo(b)?))
            } else if is_exec(b) {
                Some((ExecOpKind::Invert, pair_lo(a)?))
            } else {
                None
            }
        }
        ("s_mov_b64", [d, p]) if is_exec(d) => Some((ExecOpKind::Restore, pair_lo(p)?)),
        ("s_or_b64", [d, a, b]) if is_exec(d) => {
            if is_exec(a) {
                Some((ExecOpKind::Restore, pair_lo(b)?))
            } else if is_exec(b) {
                Some((ExecOpKind::Restore, pair_lo(a)?))
            } else {
                None
            }
        }
        _ => None,
    }
}

fn annotate_exec_instrs(instrs: &[Instruction]) -> Vec<ExecOp> {
    instrs
        .iter()
        .enumerate()
        .filter_map(|(index, i)| {
            exec_op_of(i).map(|(kind, saved)| ExecOp { kind, saved, index })
        })
        .collect()
}

/// Exec-mask save/invert/restore operations inside one block.
pub fn annotate_exec(block: &BasicBlock) -> Vec<ExecOp> {
    annotate_exec_instrs(&block.instrs)
}

/// One matched save/invert/restore group in an instruction stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskRegion {
    pub saved: u16,
    pub save: usize,
    pub invert: Option<usize>,
    pub restore: usize,
}

/// Pairs exec operations by saved register with a stack discipline.
pub fn match_mask_regions(instrs: &[Instruction]) -> Vec<MaskRegion> {
    let mut stack: Vec<MaskRegion> = Vec::new();
    let mut out = Vec::new();
    for (k, i) in instrs.iter().enumerate() {
        match exec_op_of(i) {
            Some((ExecOpKind::Save, p)) => stack.push(MaskRegion {
                saved: p,
                save: k,
                invert: None,
                restore: usize::MAX,
            }),
            Some((ExecOpKind::Invert, p)) => match stack.last_mut() {
                Some(top) if top.saved == p && top.invert.is_none() => top.invert = Some(k),
                _ => stack.clear(),
            },
            Some((ExecOpKind::Restore, p)) => match stack.last() {
                Some(top) if top.saved == p => {
                    let mut r = stack.pop().unwrap();
                    r.restore = k;
                    out.push(r);
                }
                _ => stack.clear(),
            },
            None => {}
        }
    }
    out
}

#[derive(Default)]
struct Edits {
    insert_before: HashMap<usize, Vec<Instruction>>,
    insert_after: HashMap<usize, Vec<Instruction>>,
    delete: HashSet<usize>,
    add_labels: HashMap<usize, Vec<String>>,
    strip_labels: HashSet<usize>,
}

/// Rewrites every exec-mask if and if-else into the standard form:
/// branch instructions are inserted where the compiler omitted them, and
/// the two-label if-else is turned into a diamond whose then-part jumps
/// over the else-part. The result is only meaningful to the symbolic
/// lowering, which treats branch bodies as executing with the lane active.
pub fn normalize(instrs: &[Instruction]) -> (Vec<Instruction>, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let mut refs: HashMap<&str, usize> = HashMap::new();
    for i in instrs {
        if is_terminator(i) {
            if let Some(l) = branch_target(i) {
                *refs.entry(l).or_default() += 1;
            }
        }
    }
    let mut edits = Edits::default();
    let mut counter = 0usize;
    let mut fresh = || {
        counter += 1;
        format!(".Lsyn_{}", counter - 1)
    };
    let execz_to = |k: usize, target: usize| -> Option<Option<String>> {
        let i = instrs.get(k)?;
        if !is_terminator(i) {
            return Some(None);
        }
        if i.mnemonic == "s_cbranch_execz" && i.labels.is_empty() {
            let l = branch_target(i)?;
            if instrs[target].labels.iter().any(|x| x == l) {
                return Some(Some(l.to_string()));
            }
        }
        None
    };
    for region in match_mask_regions(instrs) {
        let (s, r) = (region.save, region.restore);
        let clobbered = instrs[s + 1..r].iter().enumerate().any(|(off, i)| {
            let k = s + 1 + off;
            Some(k) != region.invert && {
                let (_, defs) = crate::sym::effects(i);
                defs.contains(region.saved as usize) || defs.contains(region.saved as usize + 1)
            }
        });
        if clobbered {
            diags.push(Diagnostic::note(
                Some(instrs[s].line),
                "saved exec mask is overwritten inside the masked region; not normalized",
            ));
            continue;
        }
        let line = instrs[s].line;
        match region.invert {
            None => match execz_to(s + 1, r) {
                Some(Some(_)) => {}
                Some(None) => {
                    let l = fresh();
                    edits
                        .insert_after
                        .entry(s)
                        .or_default()
                        .push(Instruction::synthetic(&format!("s_cbranch_execz {l}"), line));
                    edits.add_labels.entry(r).or_default().push(l);
                }
                None => diags.push(Diagnostic::note(
                    Some(line),
                    "masked if with an unexpected branch; not normalized",
                )),
            },
            Some(i) => {
                let then_branch = execz_to(s + 1, i);
                let else_branch = execz_to(i + 1, r);
                let (Some(then_branch), Some(else_branch)) = (then_branch, else_branch) else {
                    diags.push(Diagnostic::note(
                        Some(line),
                        "masked if-else with an unexpected branch; not normalized",
                    ));
                    continue;
                };
                let single_ref = match &then_branch {
                    Some(l) => refs.get(l.as_str()) == Some(&1),
                    None => true,
                };
                let else_unlabelled = else_branch.is_none() || instrs[i + 1].labels.is_empty();
                if !single_ref || !else_unlabelled {
                    diags.push(Diagnostic::note(
                        Some(instrs[i].line),
                        "else label has other references; if-else not normalized",
                    ));
                    continue;
                }
                let l1 = match then_branch {
                    Some(l) => l,
                    None => {
                        let l = fresh();
                        edits
                            .insert_after
                            .entry(s)
                            .or_default()
                            .push(Instruction::synthetic(&format!("s_cbranch_execz {l}"), line));
                        l
                    }
                };
                let l2 = match else_branch {
                    Some(l) => {
                        edits.delete.insert(i + 1);
                        l
                    }
                    None => {
                        let l = fresh();
                        edits.add_labels.entry(r).or_default().push(l.clone());
                        l
                    }
                };
                // Joins of constructs that end the then-part stay there.
                let mut jump = Instruction::synthetic(&format!("s_branch {l2}"), instrs[i].line);
                jump.labels = instrs[i].labels.iter().filter(|x| **x != l1).cloned().collect();
                edits.insert_before.entry(i).or_default().push(jump);
                edits.delete.insert(i);
                edits.strip_labels.insert(i);
                let else_start = if edits.delete.contains(&(i + 1)) { i + 2 } else { i + 1 };
                edits.add_labels.entry(else_start).or_default().insert(0, l1);
            }
        }
    }
    let mut out = Vec::with_capacity(instrs.len() + 4);
    for (k, instr) in instrs.iter().enumerate() {
        if let Some(v) = edits.insert_before.remove(&k) {
            out.extend(v);
        }
        if !edits.delete.contains(&k) {
            let mut instr = instr.clone();
            if let Some(extra) = edits.add_labels.remove(&k) {
                let mut labels = extra;
                labels.append(&mut instr.labels);
                instr.labels = labels;
            }
            out.push(instr);
        }
        if let Some(v) = edits.insert_after.remove(&k) {
            out.extend(v);
        }
    }
    (out, diags)
}
