//! Symbolic register state and per-instruction transfer functions.
//!
//! Each register slot holds the expression whose value the register
//! contains. Pure arithmetic stays symbolic; memory accesses and
//! unsupported instructions produce statements.

use std::collections::{HashMap, HashSet};

use crate::abi::{AbiMap, Part, SlotTarget};
use crate::asm::{Instruction, KernelConfig, Operand, Prefix, SpecialReg};
use crate::diag::Diagnostic;
use crate::expr::{half_of, high32, low32, BinOp, Expr, ExprKind, ExprRef, UnOp};
use crate::types::{type_from_suffix, AddressSpace, Base, DataType};

pub const NUM_SGPR: usize = 104;
pub const NUM_VGPR: usize = 256;
pub const VCC: usize = NUM_SGPR + NUM_VGPR;
pub const SCC: usize = VCC + 1;
pub const EXEC: usize = VCC + 2;
pub const M0: usize = VCC + 3;
pub const NUM_SLOTS: usize = VCC + 4;

/// Expressions larger than this are stored in a temporary variable.
pub const MATERIALIZE_SIZE: u32 = 40;

pub fn sgpr(i: u16) -> usize {
    i as usize
}

pub fn vgpr(i: u16) -> usize {
    NUM_SGPR + i as usize
}

pub fn slot_name(slot: usize) -> String {
    match slot {
        s if s < NUM_SGPR => format!("s{s}"),
        s if s < VCC => format!("v{}", s - NUM_SGPR),
        VCC => "vcc".into(),
        SCC => "scc".into(),
        EXEC => "exec".into(),
        _ => "m0".into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Integrity {
    Entire,
    LowPart,
    HighPart,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegisterSlot {
    pub version: u32,
    pub ty: DataType,
    pub integrity: Integrity,
    /// For `LowPart`/`HighPart`, the whole 64-bit value.
    pub expr: Option<ExprRef>,
}

impl RegisterSlot {
    fn unbound() -> Self {
        RegisterSlot {
            version: 0,
            ty: DataType::unknown(),
            integrity: Integrity::Entire,
            expr: None,
        }
    }

    /// Same binding, ignoring the version.
    pub fn same_value(&self, other: &RegisterSlot) -> bool {
        self.integrity == other.integrity && self.expr == other.expr
    }
}

/// Fixed-size set of register slots.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct SlotSet([u64; NUM_SLOTS.div_ceil(64)]);

impl SlotSet {
    pub fn insert(&mut self, s: usize) {
        self.0[s / 64] |= 1 << (s % 64);
    }
    pub fn remove(&mut self, s: usize) {
        self.0[s / 64] &= !(1 << (s % 64));
    }
    pub fn contains(&self, s: usize) -> bool {
        self.0[s / 64] >> (s % 64) & 1 == 1
    }
    pub fn union_with(&mut self, o: &SlotSet) {
        for (a, b) in self.0.iter_mut().zip(o.0.iter()) {
            *a |= b;
        }
    }
    pub fn subtract(&mut self, o: &SlotSet) {
        for (a, b) in self.0.iter_mut().zip(o.0.iter()) {
            *a &= !b;
        }
    }
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_SLOTS).filter(|s| self.contains(*s))
    }
    pub fn all() -> SlotSet {
        let mut s = SlotSet::default();
        for i in 0..NUM_SLOTS {
            s.insert(i);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegisterFile {
    slots: Vec<RegisterSlot>,
}

impl RegisterFile {
    pub fn empty() -> Self {
        let mut rf = RegisterFile {
            slots: vec![RegisterSlot::unbound(); NUM_SLOTS],
        };
        rf.slots[EXEC] = RegisterSlot {
            version: 0,
            ty: DataType::bool(),
            integrity: Integrity::Entire,
            expr: Some(Expr::bool(true)),
        };
        rf
    }

    pub fn slot(&self, i: usize) -> &RegisterSlot {
        &self.slots[i]
    }

    pub fn snapshot(&self) -> RegisterFile {
        self.clone()
    }

    /// Overwrites a slot, bumping its version.
    pub fn set(&mut self, i: usize, integrity: Integrity, expr: Option<ExprRef>) {
        let s = &mut self.slots[i];
        s.version += 1;
        s.ty = expr.as_ref().map(|e| e.ty).unwrap_or(DataType::unknown());
        s.integrity = integrity;
        s.expr = expr;
    }

    /// Replaces a slot wholesale (used when merging states).
    pub fn put(&mut self, i: usize, slot: RegisterSlot) {
        self.slots[i] = slot;
    }

    pub fn bind32(&mut self, i: usize, e: ExprRef) {
        self.set(i, Integrity::Entire, Some(e));
    }

    pub fn bind64(&mut self, lo: usize, e: ExprRef) {
        self.set(lo, Integrity::LowPart, Some(e.clone()));
        self.set(lo + 1, Integrity::HighPart, Some(e));
    }

    pub fn unbind(&mut self, i: usize) {
        self.set(i, Integrity::Entire, None);
    }

    pub fn exec(&self) -> ExprRef {
        self.slots[EXEC].expr.clone().unwrap_or_else(|| Expr::bool(true))
    }

    pub fn set_exec(&mut self, e: ExprRef) {
        self.bind32(EXEC, Expr::to_bool(e));
    }

    /// The joint 64-bit binding of a pair, if both halves come from it.
    pub fn joint(&self, lo: usize) -> Option<ExprRef> {
        let (l, h) = (&self.slots[lo], &self.slots[lo + 1]);
        match (l.integrity, h.integrity, &l.expr, &h.expr) {
            (Integrity::LowPart, Integrity::HighPart, Some(a), Some(b)) if a == b => Some(a.clone()),
            _ => None,
        }
    }
}

/// Register contents at kernel entry under the AMDGPU-Pro ABI.
pub fn initial_register_state(config: &KernelConfig, abi: &AbiMap) -> RegisterFile {
    use crate::abi::{BuiltinId, BuiltinKind};
    let mut rf = RegisterFile::empty();
    rf.bind64(sgpr(abi.kernarg_base), Expr::kernarg_base());
    let dims = config.dim_count().max(1);
    for (d, r) in abi.local_id_regs.iter().enumerate().take(dims) {
        rf.bind32(
            vgpr(*r),
            Expr::builtin(BuiltinId::new(BuiltinKind::LocalId, d as u8), DataType::u32()),
        );
    }
    for (d, r) in abi.group_id_regs.iter().enumerate().take(dims) {
        rf.bind32(
            sgpr(*r),
            Expr::builtin(BuiltinId::new(BuiltinKind::GroupId, d as u8), DataType::u32()),
        );
    }
    rf
}

#[derive(Clone, Debug, PartialEq)]
pub enum Statement {
    Decl {
        name: String,
        ty: DataType,
        init: Option<ExprRef>,
    },
    Assign {
        name: String,
        value: ExprRef,
    },
    /// `target` is a `Deref` or `Index` lvalue.
    Store {
        target: ExprRef,
        value: ExprRef,
        guard: Option<ExprRef>,
    },
    RawAsm {
        text: String,
        line: usize,
    },
    Return,
}

/// Unique identifier allocation for one kernel.
#[derive(Clone, Debug, Default)]
pub struct NameGen {
    used: HashSet<String>,
}

impl NameGen {
    pub fn reserve(&mut self, name: &str) {
        self.used.insert(name.to_string());
    }

    pub fn fresh(&mut self, base: &str) -> String {
        if self.used.insert(base.to_string()) {
            return base.to_string();
        }
        for k in 1.. {
            let cand = format!("{base}_{k}");
            if self.used.insert(cand.clone()) {
                return cand;
            }
        }
        unreachable!()
    }
}

/// Per-kernel context shared by all transfer steps.
pub struct SymCtx<'a> {
    pub config: &'a KernelConfig,
    pub abi: &'a AbiMap,
    pub names: NameGen,
    /// Declarations for values read before being written.
    pub hoisted: Vec<Statement>,
    pub diags: Vec<Diagnostic>,
    /// Variables assigned exactly once, with the defining expression for
    /// those introduced only to keep expressions small.
    pub single: HashMap<String, Option<ExprRef>>,
}

impl<'a> SymCtx<'a> {
    pub fn new(config: &'a KernelConfig, abi: &'a AbiMap) -> Self {
        let mut names = NameGen::default();
        for a in &config.args {
            names.reserve(&a.name);
        }
        SymCtx {
            config,
            abi,
            names,
            hoisted: Vec::new(),
            diags: Vec::new(),
            single: HashMap::new(),
        }
    }

    /// A declared-but-uninitialized variable standing for an unknown value.
    pub fn unknown_value(&mut self, base: &str, ty: DataType) -> ExprRef {
        let name = self.names.fresh(base);
        self.hoisted.push(Statement::Decl {
            name: name.clone(),
            ty,
            init: None,
        });
        Expr::var(&name, ty)
    }

    /// The definition of a materialized variable, if substituting it back
    /// cannot change its value.
    fn definition(&self, e: &ExprRef) -> Option<ExprRef> {
        let ExprKind::Var(name) = &e.kind else {
            return None;
        };
        let def = self.single.get(name)?.clone()?;
        let stable = !def.any(&|x| match &x.kind {
            ExprKind::Var(v) => !self.single.contains_key(v),
            _ => false,
        });
        stable.then_some(def)
    }
}

#[derive(Debug)]
struct Unsupported(String);

type Sem<T> = Result<T, Unsupported>;

fn unsupported<T>(why: impl Into<String>) -> Sem<T> {
    Err(Unsupported(why.into()))
}

/// Reinterprets or converts `e` so that it has exactly type `ty` while
/// keeping the register bits (the low bits for wider values).
pub fn coerce(e: ExprRef, ty: DataType) -> ExprRef {
    if e.ty == ty {
        return e;
    }
    if ty.base == Base::Bool {
        return Expr::to_bool(e);
    }
    if ty.is_pointer() {
        if e.ty.is_pointer() {
            return Expr::cast(e, ty);
        }
        return Expr::cast(coerce(e, DataType::u64()), ty);
    }
    let w = ty.width();
    let src = if e.ty.is_pointer() {
        Expr::cast(e, DataType::u64())
    } else if e.is_bool() {
        Expr::cast(e, DataType::u32())
    } else {
        e
    };
    let src = if src.ty.width() > w {
        if src.ty.is_float() {
            Expr::cast(Expr::bitcast(src, DataType::u64()), DataType::scalar(Base::Unsigned, w as u8))
        } else {
            Expr::cast(src, DataType::scalar(Base::Unsigned, w as u8))
        }
    } else if src.ty.width() < w {
        if src.ty.is_float() {
            Expr::cast(Expr::bitcast(src, DataType::u32()), DataType::u64())
        } else {
            Expr::cast(src, DataType::scalar(Base::Unsigned, w as u8))
        }
    } else {
        src
    };
    if ty.is_float() != src.ty.is_float() {
        Expr::bitcast(src, ty)
    } else {
        Expr::cast(src, ty)
    }
}

/// Operand form for ring arithmetic, where only the low bits matter.
fn ring(e: ExprRef) -> ExprRef {
    if e.ty.is_float() || e.ty.is_pointer() || e.is_bool() {
        coerce(e, DataType::u32())
    } else {
        e
    }
}

fn same32(a: &ExprRef, b: &ExprRef) -> bool {
    let strip = |e: &ExprRef| -> ExprRef {
        match &e.kind {
            ExprKind::Cast(x) | ExprKind::Bitcast(x) if x.ty.width() == 32 && e.ty.width() == 32 => {
                x.clone()
            }
            _ => e.clone(),
        }
    };
    a == b || strip(a) == strip(b)
}

/// `a + b` carry out of 32-bit unsigned addition.
pub fn carry(a: &ExprRef, b: &ExprRef, sum: &ExprRef) -> ExprRef {
    let _ = b;
    Expr::binary(BinOp::Lt, sum.clone(), a.clone())
}

fn sum_terms(e: &ExprRef, out: &mut Vec<ExprRef>) {
    match &e.kind {
        ExprKind::Binary(BinOp::Add, a, b) => {
            sum_terms(a, out);
            sum_terms(b, out);
        }
        _ => out.push(e.clone()),
    }
}

/// Adds a byte offset to a pointer, using element indexing when the
/// offset is a multiple of the element size.
pub fn ptr_add(p: ExprRef, off: ExprRef) -> ExprRef {
    let elem = p.ty.element().map(|e| e.byte_size()).unwrap_or(1) as u64;
    if let Some(idx) = scale_down(&off, elem) {
        let idx = strip_index_cast(idx);
        let idx = match idx.const_value() {
            Some(c) if (c as i64) >= 0 && c <= i32::MAX as u64 => Expr::i32(c as i32),
            _ => idx,
        };
        if let ExprKind::Binary(BinOp::Add, base, i0) = &p.kind {
            if base.ty.is_pointer() && !i0.ty.is_pointer() && i0.ty.width() == idx.ty.width() {
                return Expr::binary(BinOp::Add, base.clone(), Expr::binary(BinOp::Add, i0.clone(), idx));
            }
        }
        return Expr::binary(BinOp::Add, p, idx);
    }
    let space = p.ty.space.unwrap_or(AddressSpace::Global);
    let bytes = DataType::pointer_to(DataType::scalar(Base::Signed, 8), space);
    Expr::cast(
        Expr::binary(BinOp::Add, Expr::cast(p.clone(), bytes), off),
        p.ty,
    )
}

/// `e / k` when it can be read off the structure of `e` exactly.
pub fn scale_down(e: &ExprRef, k: u64) -> Option<ExprRef> {
    if k == 1 {
        return Some(e.clone());
    }
    if let Some(c) = e.const_value() {
        let c = c as i64;
        return (c % k as i64 == 0).then(|| Expr::constant((c / k as i64) as u64, e.ty));
    }
    match &e.kind {
        ExprKind::Binary(BinOp::Shl, x, n) => {
            let n = n.const_value()?;
            if n >= 63 || !k.is_power_of_two() {
                return None;
            }
            let f = 1u64 << n;
            if f % k != 0 {
                return None;
            }
            let rest = n - k.trailing_zeros() as u64;
            Some(if rest == 0 {
                x.clone()
            } else {
                Expr::binary(BinOp::Shl, x.clone(), Expr::u32(rest as u32))
            })
        }
        ExprKind::Binary(BinOp::Mul, a, b) => {
            for (x, c) in [(a, b), (b, a)] {
                if let Some(cv) = c.const_value() {
                    if cv % k == 0 && x.ty == e.ty {
                        let q = cv / k;
                        return Some(if q == 1 {
                            x.clone()
                        } else {
                            Expr::binary(BinOp::Mul, x.clone(), Expr::constant(q, c.ty))
                        });
                    }
                }
            }
            None
        }
        ExprKind::Binary(op @ (BinOp::Add | BinOp::Sub), a, b) => {
            let (sa, sb) = (scale_down(a, k)?, scale_down(b, k)?);
            Some(Expr::binary(*op, sa, sb))
        }
        _ => None,
    }
}

/// `p[(long)i]` is `p[i]` for any 32-bit integer `i`.
pub fn strip_index_cast(idx: ExprRef) -> ExprRef {
    if let ExprKind::Cast(inner) = &idx.kind {
        if idx.ty.width() == 64
            && !idx.ty.is_float()
            && inner.ty.is_integer()
            && !inner.is_bool()
            && inner.ty.width() <= 32
        {
            return inner.clone();
        }
    }
    idx
}

fn compose64(h: ExprRef, l: ExprRef) -> ExprRef {
    let hi = Expr::binary(
        BinOp::Shl,
        Expr::cast(coerce(h, DataType::u32()), DataType::u64()),
        Expr::u32(32),
    );
    let lo = Expr::cast(coerce(l, DataType::u32()), DataType::u64());
    Expr::binary(BinOp::Or, hi, lo)
}

/// Recovers a single 64-bit expression from its two register halves.
pub fn combine64(h: ExprRef, l: ExprRef) -> ExprRef {
    try_combine(&h, &l, 4).unwrap_or_else(|| compose64(h, l))
}

fn add64(a: ExprRef, b: ExprRef) -> ExprRef {
    if a.ty.is_pointer() && !b.ty.is_pointer() {
        return ptr_add(a, b);
    }
    if b.ty.is_pointer() && !a.ty.is_pointer() {
        return ptr_add(b, a);
    }
    Expr::binary(BinOp::Add, a, b)
}

fn try_combine(h: &ExprRef, l: &ExprRef, depth: u32) -> Option<ExprRef> {
    if let (Some(hv), Some(lv)) = (h.as_const(), l.as_const()) {
        return Some(Expr::constant(hv << 32 | (lv & 0xffff_ffff), DataType::u64()));
    }
    if let (Some((x, false)), Some((y, true))) = (half_of(l), half_of(h)) {
        if x == y {
            return Some(x);
        }
    }
    if let Some((x, true)) = half_of(h) {
        if low32(&x) == *l {
            return Some(x);
        }
    }
    if h.as_const() == Some(0) {
        return Some(Expr::cast(coerce(l.clone(), DataType::u32()), DataType::u64()));
    }
    if let ExprKind::Binary(BinOp::Shr, s, n) = &h.kind {
        if h.ty == DataType::i32() && n.const_value() == Some(31) && same32(s, l) {
            return Some(Expr::cast(s.clone(), DataType::i64()));
        }
    }
    if depth == 0 {
        return None;
    }
    match &l.kind {
        ExprKind::Binary(BinOp::Add, x, y) if l.ty.width() == 32 => {
            let mut terms = Vec::new();
            sum_terms(h, &mut terms);
            let pos = terms.iter().position(|t| match &t.kind {
                ExprKind::Binary(BinOp::Lt, s, a) => s == l && (a == x || a == y),
                _ => false,
            })?;
            terms.remove(pos);
            if terms.len() > 4 {
                return None;
            }
            // Every split of the remaining high terms between the operands.
            let sum = |ts: Vec<&ExprRef>| -> ExprRef {
                ts.into_iter()
                    .cloned()
                    .reduce(|a, b| Expr::binary(BinOp::Add, a, b))
                    .unwrap_or_else(|| Expr::u32(0))
            };
            let n = terms.len();
            let pairings: Vec<(ExprRef, ExprRef)> = (0u32..1 << n)
                .map(|m| {
                    let pick = |inside: bool| {
                        terms
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| (m >> i & 1 == 1) == inside)
                            .map(|(_, t)| t)
                            .collect::<Vec<_>>()
                    };
                    (sum(pick(true)), sum(pick(false)))
                })
                .collect();
            for (hx, hy) in pairings {
                if let (Some(a), Some(b)) = (
                    try_combine(&hx, x, depth - 1),
                    try_combine(&hy, y, depth - 1),
                ) {
                    return Some(add64(a, b));
                }
            }
            None
        }
        ExprKind::Binary(BinOp::Sub, x, y) if l.ty.width() == 32 => {
            let borrow = Expr::binary(BinOp::Lt, x.clone(), y.clone());
            let (hx, hy) = match &h.kind {
                ExprKind::Binary(BinOp::Sub, inner, b) if *b == borrow => match &inner.kind {
                    ExprKind::Binary(BinOp::Sub, hx, hy) => (hx.clone(), hy.clone()),
                    _ => (inner.clone(), Expr::u32(0)),
                },
                _ => return None,
            };
            let a = try_combine(&hx, x, depth - 1)?;
            let b = try_combine(&hy, y, depth - 1)?;
            if a.ty.is_pointer() && !b.ty.is_pointer() {
                return Some(ptr_add(a, Expr::unary(UnOp::Neg, b)));
            }
            Some(Expr::binary(BinOp::Sub, a, b))
        }
        _ => None,
    }
}

/// Builds the lvalue for a memory access of type `access` at `addr`.
pub fn lvalue(addr: ExprRef, access: DataType) -> ExprRef {
    if let Some(elem) = addr.ty.element() {
        if elem.width() == access.width() && !elem.is_pointer() {
            if let ExprKind::Binary(BinOp::Add, p, idx) = &addr.kind {
                if p.ty.is_pointer() {
                    return Expr::index(p.clone(), idx.clone());
                }
            }
            return Expr::deref(addr);
        }
        let space = addr.ty.space.unwrap_or(AddressSpace::Global);
        return Expr::deref(Expr::cast(addr, DataType::pointer_to(access, space)));
    }
    Expr::deref(Expr::cast(
        coerce(addr, DataType::u64()),
        DataType::pointer_to(access, AddressSpace::Global),
    ))
}

/// The 32-bit content of a slot. An unbound slot is bound to a fresh
/// uninitialized variable first.
pub fn read_slot32(st: &mut RegisterFile, ctx: &mut SymCtx, slot: usize) -> ExprRef {
    let s = st.slot(slot).clone();
    match s.expr {
        None => {
            let base = format!("{}_{}", slot_name(slot), s.version);
            let ty = if slot == SCC || slot == EXEC {
                DataType::bool()
            } else {
                DataType::u32()
            };
            let v = ctx.unknown_value(&base, ty);
            st.put(
                slot,
                RegisterSlot {
                    version: s.version,
                    ty,
                    integrity: Integrity::Entire,
                    expr: Some(v.clone()),
                },
            );
            v
        }
        Some(e) => match s.integrity {
            Integrity::Entire => e,
            Integrity::LowPart => low32(&e),
            Integrity::HighPart => high32(&e),
        },
    }
}

/// The 64-bit value held by a register pair.
pub fn read_pair(st: &mut RegisterFile, ctx: &mut SymCtx, lo: usize) -> ExprRef {
    if let Some(e) = st.joint(lo) {
        return e;
    }
    let l = read_slot32(st, ctx, lo);
    let h = read_slot32(st, ctx, lo + 1);
    if l.is_bool() && h.is_bool() && l == h {
        return l;
    }
    if let Some(e) = try_combine(&h, &l, 4) {
        return e;
    }
    // A half that was given a name may still pair with the other one.
    let hd = ctx.definition(&h);
    let ld = ctx.definition(&l);
    if hd.is_some() || ld.is_some() {
        let h2 = hd.unwrap_or_else(|| h.clone());
        let l2 = ld.unwrap_or_else(|| l.clone());
        if let Some(e) = try_combine(&h2, &l2, 4) {
            return e;
        }
    }
    compose64(h, l)
}

/// Register and literal access shared by the transfer functions.
struct Step<'s, 'c, 'a> {
    st: RegisterFile,
    ctx: &'s mut SymCtx<'c>,
    instr: &'a Instruction,
    stmts: Vec<Statement>,
}

fn suffix_type(instr: &Instruction, idx: usize) -> Option<DataType> {
    instr.suffix(idx).map(type_from_suffix)
}

impl<'s, 'c, 'a> Step<'s, 'c, 'a> {
    fn op(&self, i: usize) -> Sem<&'a Operand> {
        match self.instr.operands.get(i) {
            Some(o) => Ok(o),
            None => unsupported(format!("missing operand {i}")),
        }
    }

    fn ops(&self) -> usize {
        self.instr.operands.len()
    }

    fn slot_value32(&mut self, slot: usize) -> ExprRef {
        read_slot32(&mut self.st, self.ctx, slot)
    }

    fn literal(&self, op: &Operand, ty: DataType) -> Sem<ExprRef> {
        let wide = ty.width() == 64;
        match op {
            Operand::Int(v) => {
                let bits = if wide { *v as u64 } else { *v as u64 & 0xffff_ffff };
                Ok(Expr::constant(bits, if ty.is_float() && !wide { DataType::u32() } else { ty })
                    .pipe(|c| if ty.is_float() { Expr::bitcast(c, ty) } else { c }))
            }
            Operand::Float(f) => {
                let bits = if wide {
                    f.to_bits()
                } else {
                    (*f as f32).to_bits() as u64
                };
                let fty = DataType::scalar(Base::Float, if wide { 64 } else { 32 });
                Ok(coerce(Expr::constant(bits, fty), ty))
            }
            _ => unsupported("not a literal"),
        }
    }

    /// A 32-bit source operand, converted to `ty` when given.
    fn read32(&mut self, i: usize, ty: Option<DataType>) -> Sem<ExprRef> {
        let op = self.op(i)?;
        let raw = match op {
            Operand::Sgpr(r) => self.slot_value32(sgpr(*r)),
            Operand::Vgpr(r) => self.slot_value32(vgpr(*r)),
            Operand::Special(SpecialReg::M0) => self.slot_value32(M0),
            Operand::Special(SpecialReg::Scc) => {
                let v = self.slot_value32(SCC);
                coerce(v, DataType::u32())
            }
            Operand::Special(SpecialReg::VccLo) | Operand::Special(SpecialReg::Vcc) => {
                let v = self.slot_value32(VCC);
                low32(&v)
            }
            Operand::Special(SpecialReg::VccHi) => {
                let v = self.slot_value32(VCC);
                high32(&v)
            }
            Operand::Special(SpecialReg::ExecLo) | Operand::Special(SpecialReg::Exec) => {
                let v = self.st.exec();
                low32(&v)
            }
            Operand::Special(SpecialReg::ExecHi) => {
                let v = self.st.exec();
                high32(&v)
            }
            Operand::Int(_) | Operand::Float(_) => {
                return self.literal(op, ty.unwrap_or(DataType::u32()));
            }
            _ => return unsupported(format!("operand {i} is not a 32-bit source")),
        };
        Ok(match ty {
            Some(t) => coerce(raw, t),
            None => raw,
        })
    }

    fn pair_of(&self, i: usize) -> Sem<usize> {
        match self.op(i)? {
            Operand::SgprRange(a, b) if b - a == 1 => Ok(sgpr(*a)),
            Operand::VgprRange(a, b) if b - a == 1 => Ok(vgpr(*a)),
            _ => unsupported(format!("operand {i} is not a register pair")),
        }
    }

    fn read_pair(&mut self, lo: usize) -> ExprRef {
        read_pair(&mut self.st, self.ctx, lo)
    }

    /// A 64-bit source operand.
    fn read64(&mut self, i: usize, ty: Option<DataType>) -> Sem<ExprRef> {
        let op = self.op(i)?;
        let raw = match op {
            Operand::SgprRange(..) | Operand::VgprRange(..) => {
                let lo = self.pair_of(i)?;
                self.read_pair(lo)
            }
            Operand::Special(SpecialReg::Vcc) => self.slot_value32(VCC),
            Operand::Special(SpecialReg::Exec) => self.st.exec(),
            Operand::Int(_) | Operand::Float(_) => {
                return self.literal(op, ty.unwrap_or(DataType::u64()));
            }
            _ => return unsupported(format!("operand {i} is not a 64-bit source")),
        };
        Ok(match ty {
            Some(t) => coerce(raw, t),
            None => raw,
        })
    }

    /// A lane-mask operand viewed as this lane's predicate.
    fn read_mask(&mut self, i: usize) -> Sem<ExprRef> {
        Ok(Expr::to_bool(self.read64(i, None)?))
    }

    fn name_for(&mut self, slot: usize) -> String {
        let v = self.st.slot(slot).version + 1;
        self.ctx.names.fresh(&format!("{}_{v}", slot_name(slot)))
    }

    fn maybe_materialize(&mut self, slot: usize, e: ExprRef) -> ExprRef {
        if e.size() <= MATERIALIZE_SIZE {
            return e;
        }
        let name = self.name_for(slot);
        let ty = if e.is_bool() { DataType::bool() } else { e.ty };
        self.ctx.single.insert(name.clone(), Some(e.clone()));
        self.stmts.push(Statement::Decl {
            name: name.clone(),
            ty,
            init: Some(e),
        });
        Expr::var(&name, ty)
    }

    fn is_vector(&self) -> bool {
        matches!(self.instr.prefix, Prefix::V | Prefix::Flat)
    }

    /// Applies exec-mask gating to a vector result.
    fn gated(&mut self, new: ExprRef, old: impl FnOnce(&mut Self) -> ExprRef) -> ExprRef {
        let exec = self.st.exec();
        if !self.is_vector() || exec.is_true() {
            return new;
        }
        let old = old(self);
        let old = coerce(old, new.ty);
        Expr::ternary(exec, new, old)
    }

    fn dst_slot32(&self, i: usize) -> Sem<usize> {
        match self.op(i)? {
            Operand::Sgpr(r) => Ok(sgpr(*r)),
            Operand::Vgpr(r) => Ok(vgpr(*r)),
            Operand::Special(SpecialReg::M0) => Ok(M0),
            _ => unsupported(format!("operand {i} is not a 32-bit destination")),
        }
    }

    fn write32(&mut self, i: usize, e: ExprRef) -> Sem<()> {
        let slot = self.dst_slot32(i)?;
        let e = self.gated(e, |s| s.slot_value32(slot));
        let e = self.maybe_materialize(slot, e);
        self.st.bind32(slot, e);
        Ok(())
    }

    fn write64(&mut self, i: usize, e: ExprRef) -> Sem<()> {
        match self.op(i)? {
            Operand::Special(SpecialReg::Exec) => {
                self.st.set_exec(e);
                return Ok(());
            }
            Operand::Special(SpecialReg::Vcc) => {
                let e = self.gated(e, |s| s.slot_value32(VCC));
                self.st.bind32(VCC, e);
                return Ok(());
            }
            _ => {}
        }
        let lo = self.pair_of(i)?;
        let e = self.gated(e, |s| s.read_pair(lo));
        let e = self.maybe_materialize(lo, e);
        self.st.bind64(lo, e);
        Ok(())
    }

    /// Writes a lane predicate; inactive lanes read as false.
    fn write_mask(&mut self, i: usize, e: ExprRef) -> Sem<()> {
        let e = if self.is_vector() {
            Expr::binary(BinOp::LAnd, self.st.exec(), e)
        } else {
            e
        };
        match self.op(i)? {
            Operand::Special(SpecialReg::Exec) => self.st.set_exec(e),
            Operand::Special(SpecialReg::Vcc) => self.st.bind32(VCC, e),
            _ => {
                let lo = self.pair_of(i)?;
                self.st.bind64(lo, e);
            }
        }
        Ok(())
    }

    /// Copies a register source into a destination keeping its binding.
    fn copy32(&mut self, dst: usize, src: usize) -> Sem<()> {
        let d = self.dst_slot32(dst)?;
        let src_slot = match self.op(src)? {
            Operand::Sgpr(r) => Some(sgpr(*r)),
            Operand::Vgpr(r) => Some(vgpr(*r)),
            _ => None,
        };
        let exec_true = self.st.exec().is_true() || !self.is_vector();
        match src_slot {
            Some(s) if exec_true && self.st.slot(s).expr.is_some() => {
                let slot = self.st.slot(s).clone();
                self.st.set(d, slot.integrity, slot.expr);
                Ok(())
            }
            _ => {
                let v = self.read32(src, None)?;
                self.write32(dst, v)
            }
        }
    }

    fn set_scc(&mut self, e: ExprRef) {
        self.st.bind32(SCC, Expr::to_bool(e));
    }

    fn scc(&mut self) -> ExprRef {
        let v = self.slot_value32(SCC);
        Expr::to_bool(v)
    }

    fn emit_load(&mut self, dst_lo: usize, dwords: u32, addr: ExprRef) -> Sem<()> {
        let access = if dwords == 2 {
            DataType::u64()
        } else {
            DataType::u32()
        };
        let lv = lvalue(addr, access);
        let ty = lv.ty;
        let exec = self.st.exec();
        let init = if self.is_vector() && !exec.is_true() {
            Expr::ternary(exec, lv.clone(), Expr::constant(0, ty))
        } else {
            lv
        };
        let name = self.name_for(dst_lo);
        self.ctx.single.insert(name.clone(), None);
        self.stmts.push(Statement::Decl {
            name: name.clone(),
            ty,
            init: Some(init),
        });
        let var = Expr::var(&name, ty);
        if dwords == 2 {
            self.st.bind64(dst_lo, var);
        } else {
            self.st.bind32(dst_lo, var);
        }
        Ok(())
    }

    fn emit_store(&mut self, addr: ExprRef, value: ExprRef, dwords: u32) {
        let access = if dwords == 2 {
            DataType::u64()
        } else {
            DataType::u32()
        };
        let lv = lvalue(addr, access);
        let value = coerce(value, lv.ty);
        let exec = self.st.exec();
        let guard = (self.is_vector() && !exec.is_true()).then_some(exec);
        self.stmts.push(Statement::Store {
            target: lv,
            value,
            guard,
        });
    }
}

trait Pipe: Sized {
    fn pipe<T>(self, f: impl FnOnce(Self) -> T) -> T {
        f(self)
    }
}
impl<T> Pipe for T {}

fn cmp_op(name: &str, float: bool) -> Option<(BinOp, bool)> {
    Some(match name {
        "lt" => (BinOp::Lt, false),
        "le" => (BinOp::Le, false),
        "gt" => (BinOp::Gt, false),
        "ge" => (BinOp::Ge, false),
        "eq" => (BinOp::Eq, false),
        "ne" | "neq" => (BinOp::Ne, false),
        "lg" if float => (BinOp::Ne, true),
        "lg" => (BinOp::Ne, false),
        _ => return None,
    })
}

fn build_cmp(op: BinOp, ordered_ne: bool, a: ExprRef, b: ExprRef) -> ExprRef {
    if ordered_ne {
        let lt = Expr::binary(BinOp::Lt, a.clone(), b.clone());
        let gt = Expr::binary(BinOp::Gt, a, b);
        return Expr::binary(BinOp::LOr, lt, gt);
    }
    Expr::binary(op, a, b)
}

fn sext24(e: ExprRef) -> ExprRef {
    if let Some(v) = e.as_const() {
        let v = ((v as u32) << 8) as i32 >> 8;
        return Expr::i32(v);
    }
    if is_small_id(&e) {
        return coerce(e, DataType::i32());
    }
    let shl = Expr::binary(BinOp::Shl, coerce(e, DataType::u32()), Expr::u32(8));
    Expr::binary(BinOp::Shr, Expr::cast(shl, DataType::i32()), Expr::u32(8))
}

fn zext24(e: ExprRef) -> ExprRef {
    if let Some(v) = e.as_const() {
        return Expr::u32(v as u32 & 0xff_ffff);
    }
    if is_small_id(&e) {
        return coerce(e, DataType::u32());
    }
    Expr::binary(BinOp::And, coerce(e, DataType::u32()), Expr::u32(0xff_ffff))
}

/// Work-item and group ids are assumed to fit in 24 bits.
fn is_small_id(e: &ExprRef) -> bool {
    use crate::abi::BuiltinKind;
    matches!(
        e.as_builtin().map(|b| b.kind),
        Some(BuiltinKind::LocalId | BuiltinKind::GroupId)
    )
}

impl Step<'_, '_, '_> {
    fn run(&mut self) -> Sem<()> {
        let instr = self.instr;
        if instr.opaque {
            return unsupported("operands could not be parsed");
        }
        if !instr.modifiers.iter().all(|m| m == "glc" || m == "slc") {
            return unsupported(format!("modifier `{}`", instr.modifiers.join(" ")));
        }
        let m = instr.mnemonic.as_str();
        let ty0 = suffix_type(instr, 0);
        match instr.prefix {
            Prefix::S => self.scalar(m, ty0),
            Prefix::V => self.vector(m, ty0),
            Prefix::Flat => self.flat(m),
            _ => unsupported("unsupported instruction"),
        }
    }

    fn scalar(&mut self, m: &str, ty0: Option<DataType>) -> Sem<()> {
        let root = self.instr.root.as_str();
        match m {
            "s_waitcnt" | "s_nop" | "s_endpgm" | "s_branch" | "s_cbranch_scc0"
            | "s_cbranch_scc1" | "s_cbranch_vccz" | "s_cbranch_vccnz" | "s_cbranch_execz"
            | "s_cbranch_execnz" => return Ok(()),
            _ => {}
        }
        if root.starts_with("load_dword") {
            return self.scalar_load();
        }
        if root.starts_with("cmp_") {
            let ty = ty0.ok_or(Unsupported("compare without type".into()))?;
            if ty.width() != 32 {
                return unsupported("64-bit scalar compare");
            }
            let (op, _) = cmp_op(&root[4..], false).ok_or(Unsupported("compare kind".into()))?;
            let a = self.read32(0, Some(ty))?;
            let b = self.read32(1, Some(ty))?;
            self.set_scc(Expr::binary(op, a, b));
            return Ok(());
        }
        let Some(ty) = ty0 else {
            return unsupported("unsupported scalar instruction");
        };
        let wide = ty.width() == 64;
        if wide && root == "mov" {
            return self.mov64(0, 1);
        }
        match (root, wide) {
            ("mov", false) => self.copy32(0, 1),
            ("movk", false) => {
                let Operand::Int(v) = self.op(1)? else {
                    return unsupported("movk immediate");
                };
                let v = *v as u16 as i16 as i32;
                self.write32(0, Expr::i32(v))
            }
            ("add" | "sub", false) => {
                let a = self.read32(1, None)?;
                let b = self.read32(2, None)?;
                let unsigned = ty.base == Base::Unsigned;
                let (a, b) = if unsigned {
                    (coerce(a, DataType::u32()), coerce(b, DataType::u32()))
                } else {
                    (ring(a), ring(b))
                };
                let op = if root == "add" { BinOp::Add } else { BinOp::Sub };
                let r = Expr::binary(op, a.clone(), b.clone());
                if unsigned {
                    let c = if root == "add" {
                        carry(&a, &b, &r)
                    } else {
                        Expr::binary(BinOp::Lt, a, b)
                    };
                    self.set_scc(c);
                } else {
                    self.st.unbind(SCC);
                }
                self.write32(0, r)
            }
            ("addc" | "subb", false) => {
                let a = coerce(self.read32(1, None)?, DataType::u32());
                let b = coerce(self.read32(2, None)?, DataType::u32());
                let c = self.scc();
                let r = if root == "addc" {
                    Expr::binary(BinOp::Add, Expr::binary(BinOp::Add, a, b), c)
                } else {
                    Expr::binary(BinOp::Sub, Expr::binary(BinOp::Sub, a, b), c)
                };
                self.st.unbind(SCC);
                self.write32(0, coerce(r, DataType::u32()))
            }
            ("mul", false) => {
                let a = ring(self.read32(1, None)?);
                let b = ring(self.read32(2, None)?);
                self.write32(0, Expr::binary(BinOp::Mul, a, b))
            }
            ("and" | "or" | "xor" | "andn2" | "orn2" | "nand" | "nor" | "xnor", _) => {
                self.scalar_bitwise(root, wide)
            }
            ("not", _) => {
                if wide {
                    let a = self.read64(1, None)?;
                    let r = if a.is_bool() {
                        Expr::not(a)
                    } else {
                        Expr::unary(UnOp::Not, coerce(a, DataType::u64()))
                    };
                    self.set_scc(r.clone());
                    self.write64(0, r)
                } else {
                    let a = ring(self.read32(1, None)?);
                    let r = Expr::unary(UnOp::Not, a);
                    self.set_scc(r.clone());
                    self.write32(0, r)
                }
            }
            ("lshl" | "lshr" | "ashr", _) => {
                let n = coerce(self.read32(2, None)?, DataType::u32());
                let sty = match (root, wide) {
                    ("ashr", false) => DataType::i32(),
                    ("ashr", true) => DataType::i64(),
                    (_, false) => DataType::u32(),
                    _ => DataType::u64(),
                };
                let a = if wide {
                    self.read64(1, Some(sty))?
                } else {
                    self.read32(1, Some(sty))?
                };
                let op = if root == "lshl" { BinOp::Shl } else { BinOp::Shr };
                let r = Expr::binary(op, a, n);
                self.set_scc(r.clone());
                if wide {
                    self.write64(0, r)
                } else {
                    self.write32(0, r)
                }
            }
            ("min" | "max", false) => {
                let a = self.read32(1, Some(ty))?;
                let b = self.read32(2, Some(ty))?;
                let name = if root == "min" { "min" } else { "max" };
                self.st.unbind(SCC);
                self.write32(0, Expr::call(name, vec![a, b], ty.concrete()))
            }
            ("cselect", false) => {
                let c = self.scc();
                let a = self.read32(1, None)?;
                let b = self.read32(2, None)?;
                let b = coerce(b, a.ty);
                self.write32(0, Expr::ternary(c, a, b))
            }
            ("cselect", true) => {
                let c = self.scc();
                let a = self.read64(1, None)?;
                let b = self.read64(2, None)?;
                let b = if a.is_bool() { Expr::to_bool(b) } else { coerce(b, a.ty) };
                self.write64(0, Expr::ternary(c, a, b))
            }
            ("and_saveexec" | "or_saveexec", true) => {
                let old = self.st.exec();
                let mask = self.read_mask(1)?;
                let op = if root == "and_saveexec" {
                    BinOp::LAnd
                } else {
                    BinOp::LOr
                };
                let new = Expr::binary(op, old.clone(), mask);
                self.write64(0, old)?;
                self.st.set_exec(new.clone());
                self.set_scc(new);
                Ok(())
            }
            _ => unsupported("unsupported scalar instruction"),
        }
    }

    fn mov64(&mut self, dst: usize, src: usize) -> Sem<()> {
        let exec_dst = matches!(self.op(dst)?, Operand::Special(SpecialReg::Exec));
        if let (Operand::SgprRange(..), Operand::SgprRange(..)) = (self.op(dst)?, self.op(src)?) {
            let d = self.pair_of(dst)?;
            let s = self.pair_of(src)?;
            let (lo, hi) = (self.st.slot(s).clone(), self.st.slot(s + 1).clone());
            if lo.expr.is_some() && hi.expr.is_some() {
                self.st.set(d, lo.integrity, lo.expr);
                self.st.set(d + 1, hi.integrity, hi.expr);
                return Ok(());
            }
        }
        let v = self.read64(src, None)?;
        if exec_dst {
            self.st.set_exec(v);
            return Ok(());
        }
        self.write64(dst, v)
    }

    fn scalar_bitwise(&mut self, root: &str, wide: bool) -> Sem<()> {
        let (a, b) = if wide {
            (self.read64(1, None)?, self.read64(2, None)?)
        } else {
            (ring(self.read32(1, None)?), ring(self.read32(2, None)?))
        };
        let r = if wide && (a.is_bool() || b.is_bool()) {
            let (a, b) = (Expr::to_bool(a), Expr::to_bool(b));
            match root {
                "and" => Expr::binary(BinOp::LAnd, a, b),
                "or" => Expr::binary(BinOp::LOr, a, b),
                "xor" => Expr::binary(BinOp::Ne, coerce(a, DataType::i32()), coerce(b, DataType::i32()))
                    .pipe(Expr::to_bool),
                "andn2" => Expr::binary(BinOp::LAnd, a, Expr::not(b)),
                "orn2" => Expr::binary(BinOp::LOr, a, Expr::not(b)),
                "nand" => Expr::not(Expr::binary(BinOp::LAnd, a, b)),
                "nor" => Expr::not(Expr::binary(BinOp::LOr, a, b)),
                _ => Expr::binary(BinOp::Eq, coerce(a, DataType::i32()), coerce(b, DataType::i32())),
            }
        } else {
            let (a, b) = if wide {
                (coerce(a, DataType::u64()), coerce(b, DataType::u64()))
            } else {
                (a, b)
            };
            let not = |e: ExprRef| Expr::unary(UnOp::Not, e);
            match root {
                "and" => Expr::binary(BinOp::And, a, b),
                "or" => Expr::binary(BinOp::Or, a, b),
                "xor" => Expr::binary(BinOp::Xor, a, b),
                "andn2" => Expr::binary(BinOp::And, a, not(b)),
                "orn2" => Expr::binary(BinOp::Or, a, not(b)),
                "nand" => not(Expr::binary(BinOp::And, a, b)),
                "nor" => not(Expr::binary(BinOp::Or, a, b)),
                _ => not(Expr::binary(BinOp::Xor, a, b)),
            }
        };
        let scc = if r.is_bool() {
            r.clone()
        } else {
            let zero = Expr::constant(0, r.ty);
            Expr::binary(BinOp::Ne, r.clone(), zero)
        };
        self.set_scc(scc);
        if wide {
            self.write64(0, r)
        } else {
            self.write32(0, r)
        }
    }

    fn scalar_load(&mut self) -> Sem<()> {
        let dwords: u32 = match self.instr.root.as_str() {
            "load_dword" => 1,
            "load_dwordx2" => 2,
            "load_dwordx4" => 4,
            "load_dwordx8" => 8,
            "load_dwordx16" => 16,
            _ => return unsupported("scalar load width"),
        };
        let (first, last) = match self.op(0)? {
            Operand::Sgpr(r) => (*r, *r),
            Operand::SgprRange(a, b) => (*a, *b),
            _ => return unsupported("scalar load destination"),
        };
        if (last - first + 1) as u32 != dwords {
            return unsupported("destination size does not match load width");
        }
        let base_lo = self.pair_of(1)?;
        let base = self.read_pair(base_lo);
        let offset = match self.op(2)? {
            Operand::Int(v) if *v >= 0 => *v as u32,
            _ => return unsupported("non-constant scalar load offset"),
        };
        if matches!(base.kind, ExprKind::KernargBase) {
            let hits = crate::builtins::match_settings_load(self.ctx.abi, offset, dwords)
                .ok_or(Unsupported(format!("no kernarg entry at offset {offset:#x}")))?;
            let mut values = Vec::new();
            for hit in &hits {
                values.push(self.abi_value(hit)?);
            }
            let mut reg = first;
            for (hit, value) in hits.iter().zip(values) {
                match hit.part {
                    crate::builtins::LoadPart::Whole64 => {
                        self.st.bind64(sgpr(reg), value);
                        reg += 2;
                    }
                    crate::builtins::LoadPart::Dword(Part::Entire) => {
                        self.st.bind32(sgpr(reg), value);
                        reg += 1;
                    }
                    crate::builtins::LoadPart::Dword(Part::Low) => {
                        self.st.set(sgpr(reg), Integrity::LowPart, Some(value));
                        reg += 1;
                    }
                    crate::builtins::LoadPart::Dword(Part::High) => {
                        self.st.set(sgpr(reg), Integrity::HighPart, Some(value));
                        reg += 1;
                    }
                }
            }
            return Ok(());
        }
        if !base.ty.is_pointer() && base.ty.width() != 64 {
            return unsupported("scalar load base");
        }
        for k in 0..dwords.div_ceil(2) {
            let n = (dwords - 2 * k).min(2);
            let off = Expr::constant((offset + 8 * k) as u64, DataType::u64());
            let addr = if base.ty.is_pointer() {
                ptr_add(base.clone(), off)
            } else {
                Expr::binary(BinOp::Add, base.clone(), off)
            };
            self.emit_load(sgpr(first + 2 * k as u16), n, addr)?;
        }
        Ok(())
    }

    fn abi_value(&mut self, hit: &crate::builtins::SettingsHit) -> Sem<ExprRef> {
        match &hit.target {
            SlotTarget::Builtin(b) => {
                let ty = if matches!(hit.part, crate::builtins::LoadPart::Dword(Part::Entire)) {
                    DataType::u32()
                } else {
                    DataType::u64()
                };
                Ok(Expr::builtin(*b, ty))
            }
            SlotTarget::Arg(i) => {
                let arg = &self.ctx.config.args[*i];
                let Some(ty) = arg.ocl_type else {
                    return unsupported(format!("argument `{}` has an unmodelled type", arg.name));
                };
                Ok(Expr::arg(&arg.name, ty))
            }
            SlotTarget::Reserved(n) => unsupported(format!("load of reserved slot `{n}`")),
        }
    }

    fn vector(&mut self, m: &str, ty0: Option<DataType>) -> Sem<()> {
        let root = self.instr.root.as_str();
        if let Some(rest) = root.strip_prefix("cmpx_").or_else(|| root.strip_prefix("cmp_")) {
            let ty = ty0.ok_or(Unsupported("compare without type".into()))?;
            let (op, ordered) =
                cmp_op(rest, ty.is_float()).ok_or(Unsupported("compare kind".into()))?;
            let (a, b) = if ty.width() == 64 {
                (self.read64(1, Some(ty))?, self.read64(2, Some(ty))?)
            } else {
                (self.read32(1, Some(ty))?, self.read32(2, Some(ty))?)
            };
            let c = build_cmp(op, ordered, a, b);
            self.write_mask(0, c.clone())?;
            if root.starts_with("cmpx_") {
                let e = Expr::binary(BinOp::LAnd, self.st.exec(), c);
                self.st.set_exec(e);
            }
            return Ok(());
        }
        let Some(ty) = ty0 else {
            return unsupported("unsupported vector instruction");
        };
        let ty1 = suffix_type(self.instr, 1);
        let n = self.ops();
        match (root, ty.width()) {
            ("mov", 32) => self.copy32(0, 1),
            ("cndmask", 32) => {
                let mask = if n >= 4 {
                    self.read_mask(3)?
                } else {
                    let v = self.slot_value32(VCC);
                    Expr::to_bool(v)
                };
                let a = self.read32(1, None)?;
                let b = self.read32(2, None)?;
                let (a, b) = if a.ty == b.ty {
                    (a, b)
                } else {
                    (coerce(a, DataType::u32()), coerce(b, DataType::u32()))
                };
                self.write32(0, Expr::ternary(mask, b, a))
            }
            ("add" | "sub" | "subrev", 32) if !ty.is_float() => {
                let (ai, bi) = if n == 4 { (2, 3) } else { (1, 2) };
                let a = coerce(self.read32(ai, None)?, DataType::u32());
                let b = coerce(self.read32(bi, None)?, DataType::u32());
                let (a, b) = if root == "subrev" { (b, a) } else { (a, b) };
                let (r, c) = if root == "add" {
                    let r = Expr::binary(BinOp::Add, a.clone(), b.clone());
                    let c = carry(&a, &b, &r);
                    (r, c)
                } else {
                    (
                        Expr::binary(BinOp::Sub, a.clone(), b.clone()),
                        Expr::binary(BinOp::Lt, a, b),
                    )
                };
                if n == 4 {
                    self.write_mask(1, c)?;
                }
                self.write32(0, r)
            }
            ("addc" | "subb" | "subbrev", 32) if n == 5 => {
                let a = coerce(self.read32(2, None)?, DataType::u32());
                let b = coerce(self.read32(3, None)?, DataType::u32());
                let (a, b) = if root == "subbrev" { (b, a) } else { (a, b) };
                let cin = self.read_mask(4)?;
                let r = if root == "addc" {
                    Expr::binary(BinOp::Add, Expr::binary(BinOp::Add, a, b), cin)
                } else {
                    Expr::binary(BinOp::Sub, Expr::binary(BinOp::Sub, a, b), cin)
                };
                let r = coerce(r, DataType::u32());
                match self.op(1)? {
                    Operand::Special(SpecialReg::Vcc) => {
                        let v = self.ctx.unknown_value("vcc_carry", DataType::bool());
                        self.st.bind32(VCC, v);
                    }
                    _ => {
                        let lo = self.pair_of(1)?;
                        let v = self.ctx.unknown_value(&format!("{}_carry", slot_name(lo)), DataType::bool());
                        self.st.bind64(lo, v);
                    }
                }
                self.write32(0, r)
            }
            ("add" | "sub" | "subrev" | "mul" | "min" | "max", 32) if ty.is_float() => {
                let a = self.read32(1, Some(DataType::f32()))?;
                let b = self.read32(2, Some(DataType::f32()))?;
                let r = match root {
                    "add" => Expr::binary(BinOp::Add, a, b),
                    "sub" => Expr::binary(BinOp::Sub, a, b),
                    "subrev" => Expr::binary(BinOp::Sub, b, a),
                    "mul" => Expr::binary(BinOp::Mul, a, b),
                    "min" => Expr::call("fmin", vec![a, b], DataType::f32()),
                    _ => Expr::call("fmax", vec![a, b], DataType::f32()),
                };
                self.write32(0, r)
            }
            ("mac", 32) if ty.is_float() => {
                let a = self.read32(1, Some(DataType::f32()))?;
                let b = self.read32(2, Some(DataType::f32()))?;
                let c = self.read32(0, Some(DataType::f32()))?;
                self.write32(0, Expr::binary(BinOp::Add, Expr::binary(BinOp::Mul, a, b), c))
            }
            ("mad", 32) if ty.is_float() => {
                let a = self.read32(1, Some(DataType::f32()))?;
                let b = self.read32(2, Some(DataType::f32()))?;
                let c = self.read32(3, Some(DataType::f32()))?;
                self.write32(0, Expr::binary(BinOp::Add, Expr::binary(BinOp::Mul, a, b), c))
            }
            ("min" | "max", 32) => {
                let a = self.read32(1, Some(ty))?;
                let b = self.read32(2, Some(ty))?;
                let name = if root == "min" { "min" } else { "max" };
                self.write32(0, Expr::call(name, vec![a, b], ty.concrete()))
            }
            ("mul_lo", 32) => {
                let a = ring(self.read32(1, None)?);
                let b = ring(self.read32(2, None)?);
                self.write32(0, Expr::binary(BinOp::Mul, a, b))
            }
            ("mul_hi", 32) if ty1.is_none() => {
                let a = self.read32(1, Some(ty))?;
                let b = self.read32(2, Some(ty))?;
                self.write32(0, Expr::call("mul_hi", vec![a, b], ty.concrete()))
            }
            ("mul" | "mul_hi" | "mad", 32) if ty1.map(|t| t.bits) == Some(24) => {
                let signed = ty.is_signed();
                let ext = |e: ExprRef| if signed { sext24(e) } else { zext24(e) };
                let a = ext(self.read32(1, None)?);
                let b = ext(self.read32(2, None)?);
                let r = match root {
                    "mul_hi" => Expr::call("mul_hi", vec![a, b], ty.concrete()),
                    _ => Expr::binary(BinOp::Mul, a, b),
                };
                let r = if root == "mad" {
                    let c = ring(self.read32(3, None)?);
                    Expr::binary(BinOp::Add, r, c)
                } else {
                    r
                };
                self.write32(0, r)
            }
            ("and" | "or" | "xor", 32) => {
                let a = ring(self.read32(1, None)?);
                let b = ring(self.read32(2, None)?);
                let op = match root {
                    "and" => BinOp::And,
                    "or" => BinOp::Or,
                    _ => BinOp::Xor,
                };
                self.write32(0, Expr::binary(op, a, b))
            }
            ("not", 32) => {
                let a = ring(self.read32(1, None)?);
                self.write32(0, Expr::unary(UnOp::Not, a))
            }
            ("lshlrev" | "lshrrev" | "ashrrev" | "lshl" | "lshr" | "ashr", 32) => {
                let rev = root.ends_with("rev");
                let (vi, ni) = if rev { (2, 1) } else { (1, 2) };
                let sty = if root.starts_with("ashr") {
                    DataType::i32()
                } else {
                    DataType::u32()
                };
                let a = self.read32(vi, Some(sty))?;
                let nn = coerce(self.read32(ni, None)?, DataType::u32());
                let op = if root.starts_with("lshl") {
                    BinOp::Shl
                } else {
                    BinOp::Shr
                };
                self.write32(0, Expr::binary(op, a, nn))
            }
            ("lshlrev" | "lshrrev" | "ashrrev" | "lshl" | "lshr" | "ashr", 64) => {
                let rev = root.ends_with("rev");
                let (vi, ni) = if rev { (2, 1) } else { (1, 2) };
                let sty = if root.starts_with("ashr") {
                    DataType::i64()
                } else {
                    DataType::u64()
                };
                let a = self.read64(vi, None)?;
                let a = if a.ty.is_pointer() || a.ty.width() != 64 || a.ty.is_float() {
                    coerce(a, sty)
                } else if root.starts_with("lshl") {
                    a
                } else {
                    coerce(a, sty)
                };
                let nn = coerce(self.read32(ni, None)?, DataType::u32());
                let op = if root.starts_with("lshl") {
                    BinOp::Shl
                } else {
                    BinOp::Shr
                };
                self.write64(0, Expr::binary(op, a, nn))
            }
            ("cvt", 32) if ty.is_float() => {
                let src = ty1.ok_or(Unsupported("conversion source".into()))?;
                if src.is_float() || src.width() != 32 {
                    return unsupported("conversion source type");
                }
                let a = self.read32(1, Some(src))?;
                self.write32(0, Expr::cast(a, DataType::f32()))
            }
            ("cvt", 32) => {
                if ty1 != Some(DataType::f32()) {
                    return unsupported("conversion source type");
                }
                let a = self.read32(1, Some(DataType::f32()))?;
                let (name, t) = if ty.is_signed() {
                    ("convert_int_sat", DataType::i32())
                } else {
                    ("convert_uint_sat", DataType::u32())
                };
                self.write32(0, Expr::call(name, vec![a], t))
            }
            _ => {
                let _ = m;
                unsupported("unsupported vector instruction")
            }
        }
    }

    fn flat(&mut self, m: &str) -> Sem<()> {
        match m {
            "flat_load_dword" | "flat_load_dwordx2" => {
                let dwords = if m.ends_with("x2") { 2 } else { 1 };
                let dst = match (self.op(0)?, dwords) {
                    (Operand::Vgpr(r), 1) => vgpr(*r),
                    (Operand::VgprRange(a, b), 2) if b - a == 1 => vgpr(*a),
                    _ => return unsupported("load destination"),
                };
                let lo = self.pair_of(1)?;
                let addr = self.read_pair(lo);
                self.emit_load(dst, dwords, addr)
            }
            "flat_store_dword" | "flat_store_dwordx2" => {
                let lo = self.pair_of(0)?;
                let addr = self.read_pair(lo);
                let (value, dwords) = if m.ends_with("x2") {
                    (self.read64(1, None)?, 2)
                } else {
                    (self.read32(1, None)?, 1)
                };
                self.emit_store(addr, value, dwords);
                Ok(())
            }
            _ => unsupported("unsupported flat instruction"),
        }
    }
}

/// Executes one instruction symbolically. The input state is not
/// modified; unsupported instructions yield a raw-assembly statement and
/// invalidate whatever they may write.
pub fn step(state: &RegisterFile, instr: &Instruction, ctx: &mut SymCtx) -> (RegisterFile, Vec<Statement>) {
    let mut s = Step {
        st: state.snapshot(),
        ctx,
        instr,
        stmts: Vec::new(),
    };
    match s.run() {
        Ok(()) => (s.st, s.stmts),
        Err(Unsupported(why)) => {
            let mut st = state.snapshot();
            let (_, defs) = effects(instr);
            for d in defs.iter() {
                st.unbind(d);
            }
            ctx.diags.push(Diagnostic::warning(
                Some(instr.line),
                format!("`{}` kept as inline assembly: {why}", instr.mnemonic),
            ));
            (
                st,
                vec![Statement::RawAsm {
                    text: instr.source_text.clone(),
                    line: instr.line,
                }],
            )
        }
    }
}

fn operand_slots(op: &Operand, out: &mut SlotSet) {
    match op {
        Operand::Sgpr(r) => out.insert(sgpr(*r)),
        Operand::Vgpr(r) => out.insert(vgpr(*r)),
        Operand::SgprRange(a, b) => (*a..=*b).for_each(|r| out.insert(sgpr(r))),
        Operand::VgprRange(a, b) => (*a..=*b).for_each(|r| out.insert(vgpr(r))),
        Operand::Special(s) => match s {
            SpecialReg::Vcc | SpecialReg::VccLo | SpecialReg::VccHi => out.insert(VCC),
            SpecialReg::Exec | SpecialReg::ExecLo | SpecialReg::ExecHi => out.insert(EXEC),
            SpecialReg::Scc => out.insert(SCC),
            SpecialReg::M0 => out.insert(M0),
            SpecialReg::Other(_) => {}
        },
        _ => {}
    }
}

fn writes_scc(instr: &Instruction) -> bool {
    instr.prefix == Prefix::S
        && matches!(
            instr.root.as_str(),
            "add" | "sub" | "addc" | "subb" | "and" | "or" | "xor" | "andn2" | "orn2" | "nand"
                | "nor" | "xnor" | "not" | "lshl" | "lshr" | "ashr" | "min" | "max"
                | "and_saveexec" | "or_saveexec"
        )
        || (instr.prefix == Prefix::S && instr.root.starts_with("cmp_"))
}

/// Registers an instruction may read and registers it certainly writes.
/// Uses are over-approximated; definitions include only full overwrites
/// of whole slots.
pub fn effects(instr: &Instruction) -> (SlotSet, SlotSet) {
    let mut uses = SlotSet::default();
    let mut defs = SlotSet::default();
    let m = instr.mnemonic.as_str();
    let root = instr.root.as_str();
    if instr.opaque {
        return (SlotSet::all(), defs);
    }
    let no_dst = root.contains("store")
        || root.contains("write")
        || m.starts_with("s_cbranch")
        || matches!(m, "s_branch" | "s_waitcnt" | "s_nop" | "s_endpgm" | "s_barrier");
    let n_defs = if no_dst || instr.operands.is_empty() {
        0
    } else if instr.prefix == Prefix::V
        && matches!(root, "add" | "sub" | "subrev" | "addc" | "subb" | "subbrev")
        && instr.operands.len() >= 4
    {
        2
    } else {
        1
    };
    for (i, op) in instr.operands.iter().enumerate() {
        if i < n_defs {
            let partial = matches!(
                op,
                Operand::Special(
                    SpecialReg::VccLo | SpecialReg::VccHi | SpecialReg::ExecLo | SpecialReg::ExecHi
                )
            );
            if partial {
                operand_slots(op, &mut uses);
            }
            operand_slots(op, &mut defs);
        } else {
            operand_slots(op, &mut uses);
        }
    }
    if matches!(instr.prefix, Prefix::V | Prefix::Flat | Prefix::Ds) {
        uses.insert(EXEC);
    }
    if m == "v_cndmask_b32" && instr.operands.len() < 4 {
        uses.insert(VCC);
    }
    if matches!(root, "addc" | "subb" | "cselect") && instr.prefix == Prefix::S {
        uses.insert(SCC);
    }
    if matches!(root, "mac") {
        operand_slots(&instr.operands[0], &mut uses);
    }
    match m {
        "s_cbranch_scc0" | "s_cbranch_scc1" => uses.insert(SCC),
        "s_cbranch_vccz" | "s_cbranch_vccnz" => uses.insert(VCC),
        "s_cbranch_execz" | "s_cbranch_execnz" => uses.insert(EXEC),
        _ => {}
    }
    if root.ends_with("saveexec") {
        uses.insert(EXEC);
        defs.insert(EXEC);
    }
    if root.starts_with("cmpx_") {
        uses.insert(EXEC);
        defs.insert(EXEC);
    }
    if root.starts_with("load_dword") && instr.prefix == Prefix::S {
        // kernarg bindings depend only on the base pair
    }
    if writes_scc(instr) {
        defs.insert(SCC);
    }
    (uses, defs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{parse_config, parse_instruction, ParsedLine, SourceLine};

    fn cfg(text: &str) -> KernelConfig {
        let lines: Vec<SourceLine> = text
            .lines()
            .enumerate()
            .map(|(i, t)| SourceLine {
                number: i + 1,
                text: t.to_string(),
            })
            .collect();
        parse_config(&lines).unwrap()
    }

    fn ins(text: &str) -> Instruction {
        match parse_instruction(text, 1).unwrap() {
            ParsedLine::Instruction(i) => i,
            _ => panic!(),
        }
    }

    const COPY_CFG: &str = ".dims x\n.cws 64, 1, 1\n.useargs\n.arg _global_offset_0, \"size_t\", long\n.arg _global_offset_1, \"size_t\", long\n.arg _global_offset_2, \"size_t\", long\n.arg _printf_buffer, \"size_t\", void*, global, , ronly\n.arg _vqueue_pointer, \"size_t\", long\n.arg _aqlwrap_pointer, \"size_t\", long\n.arg data, \"int*\", int*, global,\n.arg x, \"int\", int";

    fn run(config: &KernelConfig, lines: &[&str]) -> (RegisterFile, Vec<Statement>) {
        let abi = AbiMap::build(config).unwrap();
        let mut ctx = SymCtx::new(config, &abi);
        let mut st = initial_register_state(config, &abi);
        let mut out = Vec::new();
        for l in lines {
            let (s, mut stmts) = step(&st, &ins(l), &mut ctx);
            st = s;
            out.append(&mut stmts);
        }
        (st, out)
    }

    #[test]
    fn initial_state_counts() {
        for (text, expect) in [(".dims x\n.useargs", 4), (".dims xyz\n.useargs", 8), (".dims x", 3)] {
            let c = cfg(text);
            let abi = AbiMap::build(&c).unwrap();
            let st = initial_register_state(&c, &abi);
            // s[4:5] counts as two slots; exec is always bound
            let bound = (0..EXEC).filter(|i| st.slot(*i).expr.is_some()).count();
            assert_eq!(bound, expect, "{text}");
        }
    }

    #[test]
    fn kernarg_pair_reads_as_base() {
        let c = cfg(".dims x");
        let abi = AbiMap::build(&c).unwrap();
        let st = initial_register_state(&c, &abi);
        assert_eq!(st.joint(4), Some(Expr::kernarg_base()));
    }

    #[test]
    fn scalar_add_rebinds_with_new_version() {
        let c = cfg(".dims x\n.useargs");
        let (st, stmts) = run(&c, &["s_mov_b32 s0, 3", "s_add_u32 s0, s6, s0"]);
        assert!(stmts.is_empty());
        let slot = st.slot(sgpr(0));
        assert_eq!(slot.version, 2);
        let e = slot.expr.clone().unwrap();
        assert_eq!(e.ty, DataType::u32());
        assert!(matches!(e.kind, ExprKind::Binary(BinOp::Add, _, _)));
    }

    #[test]
    fn global_offset_load_is_joint_pair() {
        let c = cfg(COPY_CFG);
        let (st, _) = run(&c, &["s_load_dwordx2 s[2:3], s[4:5], 0x0"]);
        let e = st.joint(2).unwrap();
        assert!(matches!(e.kind, ExprKind::Builtin(b) if b.to_string() == "get_global_offset(0)"));
    }

    #[test]
    fn pair_of_entire_values_concatenates() {
        let c = cfg(".dims x");
        let (mut st, _) = run(&c, &["v_mov_b32 v1, 0"]);
        let abi = AbiMap::build(&c).unwrap();
        let mut ctx = SymCtx::new(&c, &abi);
        st.bind32(vgpr(2), Expr::var("h", DataType::u32()));
        let instr = ins("flat_store_dword v[1:2], v0");
        let mut s = Step {
            st,
            ctx: &mut ctx,
            instr: &instr,
            stmts: Vec::new(),
        };
        let e = s.read_pair(vgpr(1));
        assert!(matches!(e.kind, ExprKind::Binary(BinOp::Shl, _, _)));
    }

    #[test]
    fn store_through_argument_pointer() {
        let c = cfg(COPY_CFG);
        let (_, stmts) = run(
            &c,
            &[
                "s_load_dwordx2 s[0:1], s[4:5], 0x30",
                "s_load_dword s2, s[4:5], 0x38",
                "v_mov_b32 v3, s2",
                "v_mov_b32 v1, s0",
                "v_mov_b32 v2, s1",
                "flat_store_dword v[1:2], v3",
            ],
        );
        assert_eq!(stmts.len(), 1);
        let Statement::Store { target, value, guard } = &stmts[0] else {
            panic!()
        };
        assert!(guard.is_none());
        assert!(matches!(&target.kind, ExprKind::Deref(a) if matches!(a.kind, ExprKind::Arg(_))));
        assert!(matches!(&value.kind, ExprKind::Arg(n) if n == "x"));
    }

    #[test]
    fn carry_chain_recovers_indexing() {
        let c = cfg(COPY_CFG);
        let (_, stmts) = run(
            &c,
            &[
                "s_load_dwordx2 s[0:1], s[4:5], 0x30",
                "v_mov_b32 v1, 0",
                "v_lshlrev_b64 v[0:1], 2, v[0:1]",
                "v_mov_b32 v2, s1",
                "v_add_u32 v0, vcc, s0, v0",
                "v_addc_u32 v1, vcc, v2, v1, vcc",
                "flat_store_dword v[0:1], v0",
            ],
        );
        let Statement::Store { target, .. } = &stmts[0] else {
            panic!()
        };
        let ExprKind::Index(base, idx) = &target.kind else {
            panic!("{target:?}")
        };
        assert!(matches!(&base.kind, ExprKind::Arg(n) if n == "data"));
        assert!(matches!(idx.kind, ExprKind::Builtin(_)), "{idx:?}");
    }

    #[test]
    fn sign_extension_pattern() {
        let h = Expr::binary(BinOp::Shr, Expr::var("a", DataType::i32()), Expr::u32(31));
        let e = combine64(h, Expr::var("a", DataType::i32()));
        assert_eq!(e, Expr::cast(Expr::var("a", DataType::i32()), DataType::i64()));
    }

    #[test]
    fn unsupported_instruction_is_raw_and_invalidates() {
        let c = cfg(".dims x");
        let (st, stmts) = run(&c, &["v_mov_b32 v1, 5", "ds_read_b32 v1, v2"]);
        assert_eq!(
            stmts,
            vec![Statement::RawAsm {
                text: "ds_read_b32 v1, v2".into(),
                line: 1
            }]
        );
        assert!(st.slot(vgpr(1)).expr.is_none());
        assert_eq!(st.slot(vgpr(1)).version, 2);
    }

    #[test]
    fn step_does_not_mutate_input() {
        let c = cfg(".dims x\n.useargs");
        let abi = AbiMap::build(&c).unwrap();
        let st = initial_register_state(&c, &abi);
        let before = st.clone();
        let mut ctx = SymCtx::new(&c, &abi);
        let i = ins("s_add_u32 s0, s6, 1");
        let a = step(&st, &i, &mut ctx);
        let b = step(&st, &i, &mut ctx);
        assert_eq!(st, before);
        assert_eq!(a, b);
    }

    #[test]
    fn cndmask_operand_order() {
        let c = cfg(".dims x\n.useargs");
        let (st, _) = run(
            &c,
            &[
                "v_cmp_lt_u32 vcc, v0, s6",
                "v_mov_b32 v1, 1",
                "v_mov_b32 v2, 2",
                "v_cndmask_b32 v3, v1, v2, vcc",
            ],
        );
        let e = st.slot(vgpr(3)).expr.clone().unwrap();
        let ExprKind::Ternary(c, a, b) = &e.kind else {
            panic!()
        };
        assert!(matches!(c.kind, ExprKind::Binary(BinOp::Lt, _, _)));
        assert_eq!(a.as_const(), Some(2));
        assert_eq!(b.as_const(), Some(1));
    }

    #[test]
    fn exec_gating_and_saveexec() {
        let c = cfg(".dims x\n.useargs");
        let (st, _) = run(
            &c,
            &[
                "v_cmp_gt_u32 vcc, 10, v0",
                "s_and_saveexec_b64 s[0:1], vcc",
                "v_mov_b32 v5, 7",
            ],
        );
        assert!(st.joint(0).unwrap().is_true());
        let e = st.slot(vgpr(5)).expr.clone().unwrap();
        assert!(matches!(e.kind, ExprKind::Ternary(..)));
    }

    #[test]
    fn effects_of_vop2_carry() {
        let (uses, defs) = effects(&ins("v_addc_u32 v1, vcc, v2, v1, vcc"));
        assert!(defs.contains(vgpr(1)) && defs.contains(VCC));
        assert!(uses.contains(vgpr(2)) && uses.contains(EXEC));
        let (_, defs) = effects(&ins("s_add_u32 s0, s1, s2"));
        assert!(defs.contains(SCC));
        let (uses, defs) = effects(&ins("flat_store_dword v[1:2], v3"));
        assert!(defs.iter().next().is_none());
        assert!(uses.contains(vgpr(1)) && uses.contains(vgpr(2)) && uses.contains(vgpr(3)));
    }
}
