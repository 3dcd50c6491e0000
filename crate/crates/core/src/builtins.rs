//! Recognition of OpenCL work-item builtins.
//!
//! Kernarg and dispatch-settings loads map directly to builtins through the
//! ABI table. Derived builtins such as `get_global_id` only exist as
//! arithmetic in the binary and are recovered by rewriting expressions.

use crate::abi::{AbiMap, BuiltinId, BuiltinKind, Part, SlotTarget};
use crate::asm::KernelConfig;
use crate::expr::{BinOp, Expr, ExprKind, ExprRef};
use crate::types::DataType;

/// How one piece of a scalar load covers an ABI entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadPart {
    /// A register pair receiving a whole 8-byte entry.
    Whole64,
    Dword(Part),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SettingsHit {
    pub target: SlotTarget,
    pub part: LoadPart,
}

/// Resolves an `s_load_dword*` from the kernarg base into the ABI entries
/// it reads, in register order. Fails if any dword is unmapped.
pub fn match_settings_load(abi: &AbiMap, offset: u32, dwords: u32) -> Option<Vec<SettingsHit>> {
    if dwords == 1 {
        let hit = abi.lookup_dword(offset)?;
        return Some(vec![SettingsHit {
            target: hit.entry.target.clone(),
            part: LoadPart::Dword(hit.part),
        }]);
    }
    let mut out = Vec::new();
    let mut k = 0;
    while k < dwords {
        let off = offset + 4 * k;
        if k + 1 < dwords {
            if let Some(hit) = abi.lookup_qword(off) {
                out.push(SettingsHit {
                    target: hit.entry.target.clone(),
                    part: LoadPart::Whole64,
                });
                k += 2;
                continue;
            }
        }
        let hit = abi.lookup_kernarg_dword(off)?;
        out.push(SettingsHit {
            target: hit.entry.target.clone(),
            part: LoadPart::Dword(hit.part),
        });
        k += 1;
    }
    Some(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FoldOptions {
    /// Replace work-group-size constants next to `get_group_id` with
    /// `get_local_size`.
    pub fold_local_size: bool,
}

fn builtin(kind: BuiltinKind, d: u8) -> ExprRef {
    Expr::builtin(BuiltinId::new(kind, d), DataType::u32())
}

/// Strips conversions that keep a 32-bit builtin value intact.
fn peel(e: &ExprRef) -> &ExprRef {
    match &e.kind {
        ExprKind::Cast(inner) if !e.ty.is_float() && !inner.ty.is_float() && !e.is_bool() => {
            if e.ty.width() >= inner.ty.width() || inner.as_builtin().is_some() {
                peel(inner)
            } else {
                e
            }
        }
        _ => e,
    }
}

fn builtin_dim(e: &ExprRef, kind: BuiltinKind) -> Option<u8> {
    match peel(e).as_builtin() {
        Some(b) if b.kind == kind => b.dim,
        _ => None,
    }
}

fn cws(config: &KernelConfig, d: u8) -> Option<u32> {
    if !config.cws_declared {
        return None;
    }
    config.cws.get(d as usize).copied()
}

/// Dimension `d` if `t` is `get_group_id(d) * local_size(d)` in one of its
/// compiled shapes.
fn group_term(t: &ExprRef, config: &KernelConfig) -> Option<u8> {
    let t = peel(t);
    if let Some(d) = builtin_dim(t, BuiltinKind::GroupId) {
        return (cws(config, d)? == 1).then_some(d);
    }
    match &t.kind {
        ExprKind::Binary(BinOp::Mul, a, b) => {
            for (g, c) in [(a, b), (b, a)] {
                if let (Some(d), Some(c)) = (builtin_dim(g, BuiltinKind::GroupId), c.const_value()) {
                    if cws(config, d)? as u64 == c {
                        return Some(d);
                    }
                }
                if let (Some(d), Some(l)) = (
                    builtin_dim(g, BuiltinKind::GroupId),
                    builtin_dim(c, BuiltinKind::LocalSize),
                ) {
                    if d == l {
                        return Some(d);
                    }
                }
            }
            None
        }
        ExprKind::Binary(BinOp::Shl, g, n) => {
            let d = builtin_dim(g, BuiltinKind::GroupId)?;
            let n = n.const_value()?;
            (n < 32 && cws(config, d)? as u64 == 1 << n).then_some(d)
        }
        _ => None,
    }
}

fn flatten(e: &ExprRef, ty: DataType, out: &mut Vec<ExprRef>) {
    match &e.kind {
        ExprKind::Binary(BinOp::Add, a, b) if e.ty == ty => {
            flatten(a, ty, out);
            flatten(b, ty, out);
        }
        _ => out.push(e.clone()),
    }
}

fn rebuild(terms: Vec<ExprRef>, ty: DataType) -> ExprRef {
    let mut it = terms.into_iter();
    let first = it.next().map(|t| retype(t, ty)).unwrap_or_else(|| Expr::constant(0, ty));
    it.fold(first, |acc, t| Expr::binary(BinOp::Add, acc, t))
}

fn retype(e: ExprRef, ty: DataType) -> ExprRef {
    if e.ty == ty {
        e
    } else {
        Expr::cast(e, ty)
    }
}

/// `get_global_id(d) - get_global_offset(d)` with `d`, after peeling.
fn relative_id(t: &ExprRef) -> Option<u8> {
    match &peel(t).kind {
        ExprKind::Binary(BinOp::Sub, a, b) => {
            let d = builtin_dim(a, BuiltinKind::GlobalId)?;
            (builtin_dim(b, BuiltinKind::GlobalOffset)? == d).then_some(d)
        }
        _ => None,
    }
}

/// Rewrites a flattened sum, returning `None` when nothing matched.
fn fold_sum(e: &ExprRef, config: &KernelConfig) -> Option<ExprRef> {
    let mut terms = Vec::new();
    flatten(e, e.ty, &mut terms);
    if terms.len() < 2 {
        return None;
    }
    let mut changed = false;
    for d in 0..3u8 {
        let g = terms.iter().position(|t| group_term(t, config) == Some(d));
        let l = terms
            .iter()
            .position(|t| builtin_dim(t, BuiltinKind::LocalId) == Some(d));
        if let (Some(g), Some(l)) = (g, l) {
            let (hi, lo) = (g.max(l), g.min(l));
            terms.remove(hi);
            terms.remove(lo);
            let gid = builtin(BuiltinKind::GlobalId, d);
            let off = terms
                .iter()
                .position(|t| builtin_dim(t, BuiltinKind::GlobalOffset) == Some(d));
            let folded = match off {
                Some(o) => {
                    terms.remove(o);
                    gid
                }
                None => Expr::binary(BinOp::Sub, gid, builtin(BuiltinKind::GlobalOffset, d)),
            };
            terms.insert(lo, folded);
            changed = true;
        }
        let r = terms.iter().position(|t| relative_id(t) == Some(d));
        let o = terms
            .iter()
            .position(|t| builtin_dim(t, BuiltinKind::GlobalOffset) == Some(d));
        if let (Some(r), Some(o)) = (r, o) {
            let (hi, lo) = (r.max(o), r.min(o));
            terms.remove(hi);
            terms.remove(lo);
            terms.insert(lo, builtin(BuiltinKind::GlobalId, d));
            changed = true;
        }
    }
    changed.then(|| rebuild(terms, e.ty))
}

fn fold_node(e: &ExprRef, config: &KernelConfig, opts: FoldOptions) -> ExprRef {
    if let ExprKind::Binary(BinOp::Add, ..) = e.kind {
        if !e.ty.is_pointer() && !e.ty.is_float() {
            if let Some(f) = fold_sum(e, config) {
                return f;
            }
        }
    }
    if let ExprKind::Binary(op @ (BinOp::Div | BinOp::Shr), a, b) = &e.kind {
        if let (Some(d), Some(c)) = (builtin_dim(a, BuiltinKind::GlobalSize), b.const_value()) {
            if let Some(w) = cws(config, d) {
                let hit = match op {
                    BinOp::Div => c == w as u64,
                    _ => c < 32 && 1u64 << c == w as u64,
                };
                if hit {
                    return retype(builtin(BuiltinKind::NumGroups, d), e.ty);
                }
            }
        }
    }
    if opts.fold_local_size {
        match &e.kind {
            ExprKind::Binary(BinOp::Mul | BinOp::Shl, ..) => {
                if let Some(d) = group_term(e, config) {
                    if cws(config, d) != Some(1) {
                        let g = builtin(BuiltinKind::GroupId, d);
                        let l = builtin(BuiltinKind::LocalSize, d);
                        return retype(Expr::binary(BinOp::Mul, g, l), e.ty);
                    }
                }
            }
            _ => {}
        }
    }
    e.clone()
}

/// Applies all builtin rewrites bottom-up.
pub fn fold_builtins(e: &ExprRef, config: &KernelConfig, opts: FoldOptions) -> ExprRef {
    let kids: Vec<ExprRef> = e
        .children()
        .into_iter()
        .map(|c| fold_builtins(c, config, opts))
        .collect();
    let changed = kids
        .iter()
        .zip(e.children())
        .any(|(n, o)| !std::rc::Rc::ptr_eq(n, o));
    let node = if changed {
        rebuild_node(e, kids)
    } else {
        e.clone()
    };
    fold_node(&node, config, opts)
}

/// Re-applies the simplifying constructors to a node with new children.
fn rebuild_node(e: &ExprRef, kids: Vec<ExprRef>) -> ExprRef {
    let k = |i: usize| kids[i].clone();
    match &e.kind {
        ExprKind::Binary(op, ..) => {
            let r = Expr::binary(*op, k(0), k(1));
            if r.ty == e.ty || op.is_comparison() || op.is_logical() {
                r
            } else {
                retype(r, e.ty)
            }
        }
        ExprKind::Cast(_) => Expr::cast(k(0), e.ty),
        ExprKind::Index(..) => Expr::index(k(0), crate::sym::strip_index_cast(k(1))),
        _ => e.with_children(kids),
    }
}
