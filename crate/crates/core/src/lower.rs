//! Symbolic execution of the region tree into structured statements.
//!
//! Registers that hold different values on the paths into a join point and
//! are read afterwards become named variables, declared before the branch
//! and assigned at the end of each path.

use std::collections::{HashMap, HashSet};

use crate::builtins::{fold_builtins, FoldOptions};
use crate::cfg::{BlockId, BranchCond, Cfg, Terminator};
use crate::diag::Diagnostic;
use crate::expr::{Expr, ExprKind, ExprRef};
use crate::structure::{Reduction, Region};
use crate::sym::{
    coerce, effects, initial_register_state, read_pair, read_slot32, slot_name, step, Integrity,
    RegisterFile, RegisterSlot, SlotSet, Statement, SymCtx, EXEC, NUM_SGPR, NUM_SLOTS, SCC, VCC,
};
use crate::types::{Base, DataType};

#[derive(Clone, Debug, PartialEq)]
pub enum Stmt {
    Simple(Statement),
    If {
        cond: ExprRef,
        then_: Vec<Stmt>,
        else_: Vec<Stmt>,
    },
    Label(String),
    Goto(String),
    CondGoto {
        cond: ExprRef,
        label: String,
    },
    Comment(String),
}

/// A lowered kernel body.
#[derive(Clone, Debug, PartialEq)]
pub struct Lowered {
    /// Declarations placed at the top of the kernel.
    pub decls: Vec<Statement>,
    pub body: Vec<Stmt>,
    pub diags: Vec<Diagnostic>,
    /// False when the body contains labels and gotos.
    pub structured: bool,
}

/// How the exec mask is modelled across branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecModel {
    /// Branch bodies run with the lane active; used on normalized streams
    /// where every masked region has become an explicit branch.
    Scoped,
    /// Exec is an ordinary register; used on the original stream.
    Literal,
}

/// Per-block live-in register sets.
pub fn liveness(cfg: &Cfg) -> Vec<SlotSet> {
    let n = cfg.blocks.len();
    let mut live_in = vec![SlotSet::default(); n];
    let summaries: Vec<Vec<(SlotSet, SlotSet)>> = cfg
        .blocks
        .iter()
        .map(|b| b.instrs.iter().map(effects).collect())
        .collect();
    loop {
        let mut changed = false;
        for b in (0..n).rev() {
            let mut live = SlotSet::default();
            for (s, _) in cfg.blocks[b].successors() {
                live.union_with(&live_in[s]);
            }
            for (uses, defs) in summaries[b].iter().rev() {
                live.subtract(defs);
                live.union_with(uses);
            }
            if live != live_in[b] {
                live_in[b] = live;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    live_in
}

struct Lowerer<'k, 'c> {
    cfg: &'k Cfg,
    ctx: SymCtx<'c>,
    live_in: Vec<SlotSet>,
    opts: FoldOptions,
    model: ExecModel,
    /// Carry variables of unstructured code: slot, name, type.
    carried: Vec<(usize, String, DataType)>,
}

fn exit_block(r: &Region) -> Option<BlockId> {
    match r {
        Region::Block(b) => Some(*b),
        Region::Seq(v) => v.last().and_then(exit_block),
        _ => None,
    }
}

fn first_block(r: &Region) -> BlockId {
    let mut v = Vec::new();
    r.blocks(&mut v);
    v[0]
}

impl Lowerer<'_, '_> {
    fn fold(&self, e: &ExprRef) -> ExprRef {
        fold_builtins(e, self.ctx.config, self.opts)
    }

    fn fold_stmt(&self, s: Statement) -> Statement {
        match s {
            Statement::Decl { name, ty, init } => Statement::Decl {
                name,
                ty,
                init: init.map(|e| self.fold(&e)),
            },
            Statement::Assign { name, value } => Statement::Assign {
                name,
                value: self.fold(&value),
            },
            Statement::Store {
                target,
                value,
                guard,
            } => Statement::Store {
                target: self.fold(&target),
                value: self.fold(&value),
                guard: guard.map(|g| self.fold(&g)),
            },
            other => other,
        }
    }

    /// Slots read after leaving `region`.
    fn live_out(&self, region: &Region) -> SlotSet {
        let mut blocks = Vec::new();
        region.blocks(&mut blocks);
        let mut live = SlotSet::default();
        for &b in &blocks {
            for (s, _) in self.cfg.blocks[b].successors() {
                if !blocks.contains(&s) {
                    live.union_with(&self.live_in[s]);
                }
            }
        }
        live
    }

    fn block(&mut self, b: BlockId, mut st: RegisterFile) -> (Vec<Stmt>, Option<RegisterFile>) {
        let mut out = Vec::new();
        let block = &self.cfg.blocks[b];
        for instr in &block.instrs {
            let (next, stmts) = step(&st, instr, &mut self.ctx);
            st = next;
            for s in stmts {
                out.push(Stmt::Simple(self.fold_stmt(s)));
            }
        }
        if block.term == Terminator::End {
            out.push(Stmt::Simple(Statement::Return));
            return (out, None);
        }
        (out, Some(st))
    }

    /// Condition under which the branch ending `b` is taken.
    fn taken_cond(&mut self, b: BlockId, st: &mut RegisterFile) -> Option<(ExprRef, BranchCond)> {
        let Terminator::Branch { cond, .. } = self.cfg.blocks[b].term else {
            return None;
        };
        let value = |slot: usize, st: &mut RegisterFile, ctx: &mut SymCtx| {
            if slot == EXEC {
                st.exec()
            } else if slot == VCC {
                Expr::to_bool(read_slot32(st, ctx, VCC))
            } else {
                Expr::to_bool(read_slot32(st, ctx, slot))
            }
        };
        let e = match cond {
            BranchCond::SccZero => Expr::not(value(SCC, st, &mut self.ctx)),
            BranchCond::SccNonZero => value(SCC, st, &mut self.ctx),
            BranchCond::VccZero => Expr::not(value(VCC, st, &mut self.ctx)),
            BranchCond::VccNonZero => value(VCC, st, &mut self.ctx),
            BranchCond::ExecZero => Expr::not(st.exec()),
            BranchCond::ExecNonZero => st.exec(),
        };
        Some((self.fold(&e), cond))
    }

    fn body_entry(&self, head_end: &RegisterFile, cond: BranchCond) -> RegisterFile {
        let mut st = head_end.clone();
        if self.model == ExecModel::Scoped && cond.on_exec() {
            st.set_exec(Expr::bool(true));
        }
        st
    }

    fn region(&mut self, r: &Region, st: RegisterFile) -> (Vec<Stmt>, Option<RegisterFile>) {
        match r {
            Region::Block(b) => self.block(*b, st),
            Region::Seq(v) => {
                let mut out = Vec::new();
                let mut cur = Some(st);
                for child in v {
                    let Some(s) = cur else { break };
                    let (mut stmts, next) = self.region(child, s);
                    out.append(&mut stmts);
                    cur = next;
                }
                (out, cur)
            }
            Region::If {
                head,
                body,
                body_on_taken,
            } => {
                let (mut out, hs) = self.region(head, st);
                let Some(mut hs) = hs else {
                    return (out, None);
                };
                let Some((taken, bc)) = exit_block(head).and_then(|b| self.taken_cond(b, &mut hs)) else {
                    return (out, Some(hs));
                };
                let cond = if *body_on_taken { taken } else { Expr::not(taken) };
                let entry = self.body_entry(&hs, bc);
                let (mut body_stmts, bs) = self.region(body, entry);
                let live = self.live_out(r);
                let mut paths = vec![hs.clone()];
                if let Some(bs) = bs {
                    paths.push(bs);
                }
                let plan = self.merge(&paths, &live, Some(0), &hs);
                out.extend(plan.decls.into_iter().map(Stmt::Simple));
                if let Some(assigns) = plan.assigns.get(1) {
                    body_stmts.extend(assigns.iter().cloned().map(Stmt::Simple));
                }
                out.push(Stmt::If {
                    cond,
                    then_: body_stmts,
                    else_: Vec::new(),
                });
                (out, Some(plan.state))
            }
            Region::IfElse { head, then_, else_ } => {
                let (mut out, hs) = self.region(head, st);
                let Some(mut hs) = hs else {
                    return (out, None);
                };
                let Some((taken, bc)) = exit_block(head).and_then(|b| self.taken_cond(b, &mut hs)) else {
                    return (out, Some(hs));
                };
                let entry = self.body_entry(&hs, bc);
                let (mut ts, tend) = self.region(then_, entry.clone());
                let (mut es, eend) = self.region(else_, entry);
                let live = self.live_out(r);
                let ends: Vec<(usize, RegisterFile)> = [tend, eend]
                    .into_iter()
                    .enumerate()
                    .filter_map(|(i, s)| s.map(|s| (i, s)))
                    .collect();
                let state = if ends.is_empty() {
                    None
                } else {
                    let paths: Vec<RegisterFile> = ends.iter().map(|(_, s)| s.clone()).collect();
                    let plan = self.merge(&paths, &live, None, &hs);
                    out.extend(plan.decls.into_iter().map(Stmt::Simple));
                    for ((side, _), assigns) in ends.iter().zip(plan.assigns) {
                        let target = if *side == 0 { &mut ts } else { &mut es };
                        target.extend(assigns.into_iter().map(Stmt::Simple));
                    }
                    Some(plan.state)
                };
                out.push(Stmt::If {
                    cond: Expr::not(taken),
                    then_: ts,
                    else_: es,
                });
                (out, state)
            }
        }
    }

    fn var_type(values: &[ExprRef], wide: bool) -> DataType {
        let first = values[0].ty;
        if values.iter().all(|v| v.ty == first) && !first.is_unknown() {
            if wide == (first.width() == 64) || first.base == Base::Bool && !wide {
                return first.concrete_or_bool();
            }
        }
        if wide {
            DataType::u64()
        } else {
            DataType::u32()
        }
    }

    /// Merges the register states arriving at a join point.
    fn merge(
        &mut self,
        paths: &[RegisterFile],
        live: &SlotSet,
        init_from: Option<usize>,
        head_end: &RegisterFile,
    ) -> MergePlan {
        let mut paths: Vec<RegisterFile> = paths.to_vec();
        if self.model == ExecModel::Scoped {
            let exec = head_end.slot(EXEC).clone();
            for p in paths.iter_mut() {
                p.put(EXEC, exec.clone());
            }
        }
        let mut state = paths[0].clone();
        let mut decls = Vec::new();
        let mut assigns = vec![Vec::new(); paths.len()];
        if paths.len() == 1 {
            return MergePlan {
                state,
                decls,
                assigns,
            };
        }
        let mut slot = 0;
        while slot < NUM_SLOTS {
            let slots: Vec<RegisterSlot> = paths.iter().map(|p| p.slot(slot).clone()).collect();
            let vmax = slots.iter().map(|s| s.version).max().unwrap_or(0);
            if slots.iter().all(|s| s.same_value(&slots[0])) {
                let mut s = slots[0].clone();
                if !slots.iter().all(|x| x.version == s.version) {
                    s.version = vmax + 1;
                }
                state.put(slot, s);
                slot += 1;
                continue;
            }
            let pairable = slot + 1 < VCC
                && (slot < NUM_SGPR) == (slot + 1 < NUM_SGPR)
                && paths.iter().all(|p| p.joint(slot).is_some());
            if !live.contains(slot) && !(pairable && live.contains(slot + 1)) {
                state.put(
                    slot,
                    RegisterSlot {
                        version: vmax + 1,
                        ty: DataType::unknown(),
                        integrity: Integrity::Entire,
                        expr: None,
                    },
                );
                slot += 1;
                continue;
            }
            let values: Vec<ExprRef> = paths
                .iter_mut()
                .map(|p| {
                    if pairable {
                        read_pair(p, &mut self.ctx, slot)
                    } else {
                        read_slot32(p, &mut self.ctx, slot)
                    }
                })
                .collect();
            let ty = Self::var_type(&values, pairable);
            let base = format!("{}_{}", slot_name(slot), vmax + 1);
            let name = self.ctx.names.fresh(&base);
            let init = init_from.map(|k| self.fold(&coerce(values[k].clone(), ty)));
            decls.push(Statement::Decl {
                name: name.clone(),
                ty,
                init,
            });
            for (k, v) in values.iter().enumerate() {
                if Some(k) == init_from {
                    continue;
                }
                assigns[k].push(Statement::Assign {
                    name: name.clone(),
                    value: self.fold(&coerce(v.clone(), ty)),
                });
            }
            let var = Expr::var(&name, ty);
            if pairable {
                let hi = paths.iter().map(|p| p.slot(slot + 1).version).max().unwrap_or(0);
                state.put(
                    slot,
                    RegisterSlot {
                        version: vmax + 1,
                        ty,
                        integrity: Integrity::LowPart,
                        expr: Some(var.clone()),
                    },
                );
                state.put(
                    slot + 1,
                    RegisterSlot {
                        version: hi + 1,
                        ty,
                        integrity: Integrity::HighPart,
                        expr: Some(var),
                    },
                );
                slot += 2;
            } else {
                state.put(
                    slot,
                    RegisterSlot {
                        version: vmax + 1,
                        ty,
                        integrity: Integrity::Entire,
                        expr: Some(var),
                    },
                );
                slot += 1;
            }
        }
        MergePlan {
            state,
            decls,
            assigns,
        }
    }

    fn carry_var(&mut self, slot: usize) -> ExprRef {
        if let Some((_, n, t)) = self.carried.iter().find(|(s, _, _)| *s == slot) {
            return Expr::var(n, *t);
        }
        let ty = if slot == EXEC || slot == SCC {
            DataType::bool()
        } else {
            DataType::u32()
        };
        let name = self.ctx.names.fresh(&format!("r_{}", slot_name(slot)));
        self.ctx.hoisted.push(Statement::Decl {
            name: name.clone(),
            ty,
            init: None,
        });
        self.carried.push((slot, name.clone(), ty));
        Expr::var(&name, ty)
    }

    /// Stores the live registers of `st` into their carry variables,
    /// going through temporaries when the assignments depend on each other.
    fn store_carried(&mut self, st: &mut RegisterFile, live: &SlotSet, out: &mut Vec<Stmt>) {
        let mut pending = Vec::new();
        for slot in live.iter() {
            let var = self.carry_var(slot);
            let value = if slot == EXEC {
                st.exec()
            } else {
                read_slot32(st, &mut self.ctx, slot)
            };
            let value = self.fold(&coerce(value, var.ty));
            if value != var {
                pending.push((var, value));
            }
        }
        let names: Vec<String> = pending
            .iter()
            .filter_map(|(v, _)| match &v.kind {
                ExprKind::Var(n) => Some(n.clone()),
                _ => None,
            })
            .collect();
        let needs_temps = pending.len() > 1
            && pending
                .iter()
                .any(|(_, val)| names.iter().any(|n| val.mentions_var(n)));
        let mut finals = Vec::new();
        for (var, value) in pending {
            let ExprKind::Var(name) = &var.kind else { continue };
            let value = if needs_temps {
                let tmp = self.ctx.names.fresh(&format!("t_{name}"));
                out.push(Stmt::Simple(Statement::Decl {
                    name: tmp.clone(),
                    ty: var.ty,
                    init: Some(value),
                }));
                Expr::var(&tmp, var.ty)
            } else {
                value
            };
            finals.push(Stmt::Simple(Statement::Assign {
                name: name.clone(),
                value,
            }));
        }
        out.extend(finals);
    }

    /// Emits regions that could not be structured as labelled blocks
    /// connected by gotos. Registers live across region boundaries are
    /// carried in `r_*` variables.
    fn residue(&mut self, red: &Reduction, init: RegisterFile) -> Vec<Stmt> {
        use crate::cfg::EdgeKind;
        let mut out = vec![Stmt::Comment(
            "control flow could not be fully structured".to_string(),
        )];
        let label = |id: usize| format!("region_{id}");
        for (k, (id, region, succs)) in red.remaining.iter().enumerate() {
            let fb = first_block(region);
            let targeted = red
                .remaining
                .iter()
                .any(|(_, _, ss)| ss.iter().any(|s| s.0 == *id));
            let st = if fb == self.cfg.entry && !targeted {
                out.push(Stmt::Label(label(*id)));
                init.clone()
            } else {
                if fb == self.cfg.entry {
                    let mut st0 = init.clone();
                    let live = self.live_in[fb].clone();
                    self.store_carried(&mut st0, &live, &mut out);
                }
                out.push(Stmt::Label(label(*id)));
                let mut st = RegisterFile::empty();
                for slot in self.live_in[fb].clone().iter() {
                    let v = self.carry_var(slot);
                    if slot == EXEC {
                        st.set_exec(v);
                    } else {
                        st.bind32(slot, v);
                    }
                }
                st
            };
            let (mut stmts, end) = self.region(region, st);
            out.append(&mut stmts);
            let Some(mut end) = end else { continue };
            let mut live = SlotSet::default();
            for (t, _) in succs {
                if let Some((_, r, _)) = red.remaining.iter().find(|(rid, _, _)| rid == t) {
                    live.union_with(&self.live_in[first_block(r)]);
                }
            }
            let cond = exit_block(region).and_then(|b| self.taken_cond(b, &mut end));
            // the condition is evaluated before the carried registers change
            let cond = cond.map(|(c, _)| {
                if succs.len() == 2 && !c.as_const().is_some() {
                    let name = self.ctx.names.fresh("cond");
                    out.push(Stmt::Simple(Statement::Decl {
                        name: name.clone(),
                        ty: DataType::bool(),
                        init: Some(c),
                    }));
                    Expr::var(&name, DataType::bool())
                } else {
                    c
                }
            });
            self.store_carried(&mut end, &live, &mut out);
            let next = red.remaining.get(k + 1).map(|r| r.0);
            let target_of = |kind: EdgeKind| succs.iter().find(|s| s.1 == kind).map(|s| s.0);
            match (succs.len(), cond) {
                (2, Some(taken)) => {
                    let t = target_of(EdgeKind::Taken).unwrap_or(succs[1].0);
                    let f = target_of(EdgeKind::Fall).unwrap_or(succs[0].0);
                    out.push(Stmt::CondGoto {
                        cond: taken,
                        label: label(t),
                    });
                    if Some(f) != next {
                        out.push(Stmt::Goto(label(f)));
                    }
                }
                (0, _) => {}
                _ => {
                    let t = succs[0].0;
                    if Some(t) != next {
                        out.push(Stmt::Goto(label(t)));
                    }
                }
            }
        }
        out
    }
}

struct MergePlan {
    state: RegisterFile,
    decls: Vec<Statement>,
    /// Per incoming path, assignments to append at its end.
    assigns: Vec<Vec<Statement>>,
}

trait ConcreteOrBool {
    fn concrete_or_bool(self) -> DataType;
}

impl ConcreteOrBool for DataType {
    fn concrete_or_bool(self) -> DataType {
        if self.base == Base::Bool || self.is_pointer() {
            self
        } else {
            self.concrete()
        }
    }
}

/// Lowers one kernel given its CFG and reduction.
pub fn lower_kernel(
    cfg: &Cfg,
    reduction: &Reduction,
    ctx: SymCtx,
    opts: FoldOptions,
    model: ExecModel,
) -> Lowered {
    let init = initial_register_state(ctx.config, ctx.abi);
    let mut l = Lowerer {
        cfg,
        live_in: liveness(cfg),
        ctx,
        opts,
        model,
        carried: Vec::new(),
    };
    let (body, structured) = match reduction.root() {
        Some(root) => (l.region(root, init).0, true),
        None => (l.residue(reduction, init), false),
    };
    let mut diags = std::mem::take(&mut l.ctx.diags);
    if !structured {
        diags.push(Diagnostic::warning(
            None,
            "control flow could not be fully structured; emitted with labels and goto",
        ));
    }
    let mut body = body;
    prune_unused(&mut body, &l.ctx.single);
    let mut decls = std::mem::take(&mut l.ctx.hoisted);
    decls.retain(|d| match d {
        Statement::Decl { name, init: None, .. } => body_mentions(&body, name),
        _ => true,
    });
    Lowered {
        decls,
        body,
        diags,
        structured,
    }
}

/// Removes initialized single-assignment declarations nobody reads,
/// repeating until nothing changes.
fn prune_unused(body: &mut Vec<Stmt>, single: &HashMap<String, Option<ExprRef>>) {
    fn candidates(stmts: &[Stmt], single: &HashMap<String, Option<ExprRef>>, out: &mut Vec<String>) {
        for s in stmts {
            match s {
                Stmt::Simple(Statement::Decl { name, init: Some(_), .. }) if single.contains_key(name) => {
                    out.push(name.clone())
                }
                Stmt::If { then_, else_, .. } => {
                    candidates(then_, single, out);
                    candidates(else_, single, out);
                }
                _ => {}
            }
        }
    }
    fn read_anywhere(stmts: &[Stmt], name: &str) -> bool {
        stmts.iter().any(|s| match s {
            Stmt::Simple(Statement::Decl { init, .. }) => {
                init.as_ref().is_some_and(|e| e.mentions_var(name))
            }
            Stmt::Simple(st) => statement_mentions(st, name),
            Stmt::If { cond, then_, else_ } => {
                cond.mentions_var(name) || read_anywhere(then_, name) || read_anywhere(else_, name)
            }
            Stmt::CondGoto { cond, .. } => cond.mentions_var(name),
            Stmt::Label(_) | Stmt::Goto(_) | Stmt::Comment(_) => false,
        })
    }
    fn remove(stmts: &mut Vec<Stmt>, dead: &HashSet<String>) {
        stmts.retain(|s| !matches!(s, Stmt::Simple(Statement::Decl { name, .. }) if dead.contains(name)));
        for s in stmts.iter_mut() {
            if let Stmt::If { then_, else_, .. } = s {
                remove(then_, dead);
                remove(else_, dead);
            }
        }
    }
    loop {
        let mut names = Vec::new();
        candidates(body, single, &mut names);
        let dead: HashSet<String> = names.into_iter().filter(|n| !read_anywhere(body, n)).collect();
        if dead.is_empty() {
            return;
        }
        remove(body, &dead);
    }
}

fn statement_mentions(s: &Statement, name: &str) -> bool {
    match s {
        Statement::Decl { name: n, init, .. } => {
            n == name || init.as_ref().is_some_and(|e| e.mentions_var(name))
        }
        Statement::Assign { name: n, value } => n == name || value.mentions_var(name),
        Statement::Store {
            target,
            value,
            guard,
        } => {
            target.mentions_var(name)
                || value.mentions_var(name)
                || guard.as_ref().is_some_and(|g| g.mentions_var(name))
        }
        Statement::RawAsm { .. } | Statement::Return => false,
    }
}

fn body_mentions(stmts: &[Stmt], name: &str) -> bool {
    stmts.iter().any(|s| match s {
        Stmt::Simple(st) => statement_mentions(st, name),
        Stmt::If { cond, then_, else_ } => {
            cond.mentions_var(name) || body_mentions(then_, name) || body_mentions(else_, name)
        }
        Stmt::CondGoto { cond, .. } => cond.mentions_var(name),
        Stmt::Label(_) | Stmt::Goto(_) | Stmt::Comment(_) => false,
    })
}
