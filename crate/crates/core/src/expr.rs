//! Symbolic expression trees. Every node carries the C type of the
//! expression it renders to; constructors apply local simplifications that
//! preserve that type.

use std::rc::Rc;

use crate::abi::BuiltinId;
use crate::types::{AddressSpace, Base, DataType};

pub type ExprRef = Rc<Expr>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    /// Bitwise `~`.
    Not,
    /// Logical `!`.
    LNot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    LAnd,
    LOr,
}

impl BinOp {
    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge
        )
    }

    pub fn is_logical(self) -> bool {
        matches!(self, BinOp::LAnd | BinOp::LOr)
    }

    pub fn is_commutative(self) -> bool {
        matches!(
            self,
            BinOp::Add
                | BinOp::Mul
                | BinOp::And
                | BinOp::Or
                | BinOp::Xor
                | BinOp::Eq
                | BinOp::Ne
                | BinOp::LAnd
                | BinOp::LOr
        )
    }

    /// The comparison that holds exactly when `self` does not, for
    /// operands that are totally ordered.
    pub fn inverse_comparison(self) -> Option<BinOp> {
        Some(match self {
            BinOp::Eq => BinOp::Ne,
            BinOp::Ne => BinOp::Eq,
            BinOp::Lt => BinOp::Ge,
            BinOp::Ge => BinOp::Lt,
            BinOp::Gt => BinOp::Le,
            BinOp::Le => BinOp::Gt,
            _ => return None,
        })
    }

    /// `a op b` == `b op' a`.
    pub fn swapped(self) -> BinOp {
        match self {
            BinOp::Lt => BinOp::Gt,
            BinOp::Gt => BinOp::Lt,
            BinOp::Le => BinOp::Ge,
            BinOp::Ge => BinOp::Le,
            other => other,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ExprKind {
    /// Raw bits, masked to the width of the node type.
    Const(u64),
    Builtin(BuiltinId),
    Arg(String),
    Var(String),
    /// The kernarg segment pointer held in `s[4:5]` at entry.
    KernargBase,
    Unary(UnOp, ExprRef),
    Binary(BinOp, ExprRef, ExprRef),
    /// Value conversion to the node type.
    Cast(ExprRef),
    /// Bit reinterpretation (`as_T`) to the node type.
    Bitcast(ExprRef),
    Call(&'static str, Vec<ExprRef>),
    Ternary(ExprRef, ExprRef, ExprRef),
    Deref(ExprRef),
    Index(ExprRef, ExprRef),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Expr {
    pub kind: ExprKind,
    pub ty: DataType,
    size: u32,
}

/// Integer promotion: bool and sub-int types become `int`.
pub fn promote(t: DataType) -> DataType {
    if t.is_pointer() {
        return t;
    }
    let c = t.concrete();
    match c.base {
        Base::Bool => DataType::i32(),
        Base::Signed | Base::Unsigned if c.bits < 32 => DataType::i32(),
        _ => c,
    }
}

/// The usual arithmetic conversions of C.
pub fn arith_conv(a: DataType, b: DataType) -> DataType {
    let (a, b) = (promote(a), promote(b));
    if a.is_float() || b.is_float() {
        let bits = match (a.is_float(), b.is_float()) {
            (true, true) => a.bits.max(b.bits),
            (true, false) => a.bits,
            _ => b.bits,
        };
        return DataType::scalar(Base::Float, bits);
    }
    if a == b {
        return a;
    }
    if a.is_signed() == b.is_signed() {
        return if a.bits >= b.bits { a } else { b };
    }
    let (u, s) = if a.is_signed() { (b, a) } else { (a, b) };
    if u.bits >= s.bits {
        u
    } else {
        s
    }
}

fn width_mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// Sign- or zero-extends `bits` of type `ty` to 64 bits.
pub fn extend(bits: u64, ty: DataType) -> u64 {
    let w = ty.width();
    let v = bits & width_mask(w);
    if ty.is_signed() && w < 64 && (v >> (w - 1)) & 1 == 1 {
        v | !width_mask(w)
    } else {
        v
    }
}

impl Expr {
    fn make(kind: ExprKind, ty: DataType) -> ExprRef {
        let size = 1 + match &kind {
            ExprKind::Unary(_, a) | ExprKind::Cast(a) | ExprKind::Bitcast(a) | ExprKind::Deref(a) => {
                a.size
            }
            ExprKind::Binary(_, a, b) | ExprKind::Index(a, b) => a.size.saturating_add(b.size),
            ExprKind::Ternary(a, b, c) => a.size.saturating_add(b.size).saturating_add(c.size),
            ExprKind::Call(_, args) => args.iter().fold(0u32, |s, a| s.saturating_add(a.size)),
            _ => 0,
        };
        Rc::new(Expr { kind, ty, size })
    }

    /// Number of nodes in the tree (shared subtrees counted each time).
    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn constant(bits: u64, ty: DataType) -> ExprRef {
        let ty = if ty.base == Base::Bool { ty } else { ty.concrete() };
        let bits = if ty.base == Base::Bool {
            (bits != 0) as u64
        } else {
            bits & width_mask(ty.width())
        };
        Self::make(ExprKind::Const(bits), ty)
    }

    pub fn u32(v: u32) -> ExprRef {
        Self::constant(v as u64, DataType::u32())
    }

    pub fn i32(v: i32) -> ExprRef {
        Self::constant(v as u32 as u64, DataType::i32())
    }

    pub fn bool(v: bool) -> ExprRef {
        Self::constant(v as u64, DataType::bool())
    }

    pub fn builtin(id: BuiltinId, ty: DataType) -> ExprRef {
        Self::make(ExprKind::Builtin(id), ty)
    }

    pub fn arg(name: &str, ty: DataType) -> ExprRef {
        Self::make(ExprKind::Arg(name.to_string()), ty)
    }

    pub fn var(name: &str, ty: DataType) -> ExprRef {
        Self::make(ExprKind::Var(name.to_string()), ty)
    }

    pub fn kernarg_base() -> ExprRef {
        Self::make(
            ExprKind::KernargBase,
            DataType::pointer_to(DataType::scalar(Base::Unsigned, 8), AddressSpace::Constant),
        )
    }

    pub fn as_const(&self) -> Option<u64> {
        match self.kind {
            ExprKind::Const(v) => Some(v),
            _ => None,
        }
    }

    /// Constant value sign- or zero-extended per the node type.
    pub fn const_value(&self) -> Option<u64> {
        self.as_const().map(|v| extend(v, self.ty))
    }

    pub fn is_true(&self) -> bool {
        self.ty.base == Base::Bool && self.as_const() == Some(1)
    }

    pub fn is_false(&self) -> bool {
        self.ty.base == Base::Bool && self.as_const() == Some(0)
    }

    pub fn is_bool(&self) -> bool {
        self.ty.base == Base::Bool
    }

    pub fn as_builtin(&self) -> Option<BuiltinId> {
        match self.kind {
            ExprKind::Builtin(b) => Some(b),
            _ => None,
        }
    }

    pub fn children(&self) -> Vec<&ExprRef> {
        match &self.kind {
            ExprKind::Unary(_, a) | ExprKind::Cast(a) | ExprKind::Bitcast(a) | ExprKind::Deref(a) => {
                vec![a]
            }
            ExprKind::Binary(_, a, b) | ExprKind::Index(a, b) => vec![a, b],
            ExprKind::Ternary(a, b, c) => vec![a, b, c],
            ExprKind::Call(_, args) => args.iter().collect(),
            _ => Vec::new(),
        }
    }

    /// True when any node satisfies `pred`.
    pub fn any(&self, pred: &dyn Fn(&Expr) -> bool) -> bool {
        pred(self) || self.children().into_iter().any(|c| c.any(pred))
    }

    pub fn mentions_var(&self, name: &str) -> bool {
        self.any(&|e| matches!(&e.kind, ExprKind::Var(v) if v == name))
    }

    pub fn unary(op: UnOp, a: ExprRef) -> ExprRef {
        match op {
            UnOp::LNot => {
                if let Some(v) = a.as_const() {
                    return Self::bool(v == 0);
                }
                match &a.kind {
                    ExprKind::Unary(UnOp::LNot, inner) if inner.is_bool() => return inner.clone(),
                    ExprKind::Binary(bop, l, r) if bop.is_comparison() => {
                        let ordered = !(l.ty.is_float() || r.ty.is_float());
                        if ordered || matches!(bop, BinOp::Eq | BinOp::Ne) {
                            if let Some(inv) = bop.inverse_comparison() {
                                return Self::binary(inv, l.clone(), r.clone());
                            }
                        }
                    }
                    _ => {}
                }
                Self::make(ExprKind::Unary(op, a), DataType::bool())
            }
            UnOp::Neg | UnOp::Not => {
                let ty = promote(a.ty);
                if let (Some(_), false) = (a.as_const(), ty.is_float()) {
                    let v = extend(a.as_const().unwrap(), a.ty);
                    let r = if op == UnOp::Neg { v.wrapping_neg() } else { !v };
                    return Self::constant(r, ty);
                }
                if let ExprKind::Unary(inner, x) = &a.kind {
                    if *inner == op && x.ty == ty {
                        return x.clone();
                    }
                }
                Self::make(ExprKind::Unary(op, a), ty)
            }
        }
    }

    /// Logical negation with comparisons inverted where that is exact.
    pub fn not(a: ExprRef) -> ExprRef {
        Self::unary(UnOp::LNot, a)
    }

    pub fn binary(op: BinOp, a: ExprRef, b: ExprRef) -> ExprRef {
        if op.is_logical() {
            return Self::logical(op, a, b);
        }
        let ty = if op.is_comparison() {
            DataType::bool()
        } else if matches!(op, BinOp::Shl | BinOp::Shr) {
            promote(a.ty)
        } else if a.ty.is_pointer() && matches!(op, BinOp::Add | BinOp::Sub) && !b.ty.is_pointer() {
            a.ty
        } else if b.ty.is_pointer() && op == BinOp::Add {
            b.ty
        } else {
            arith_conv(a.ty, b.ty)
        };
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if !a.ty.is_float() && !b.ty.is_float() && !ty.is_pointer() {
                if let Some(v) = fold_int(op, extend(x, a.ty), a.ty, extend(y, b.ty), b.ty, ty) {
                    return Self::constant(v, ty);
                }
            }
        }
        if !ty.is_float() {
            let zero = |e: &ExprRef| e.as_const() == Some(0) && !e.ty.is_float();
            let one = |e: &ExprRef| e.const_value() == Some(1) && !e.ty.is_float();
            let ones = |e: &ExprRef| {
                e.as_const() == Some(width_mask(ty.width())) && e.ty.width() >= ty.width()
            };
            let keep = |e: &ExprRef| if e.ty == ty { Some(e.clone()) } else { None };
            let simplified = match op {
                BinOp::Add | BinOp::Or | BinOp::Xor if zero(&b) => keep(&a),
                BinOp::Add | BinOp::Or | BinOp::Xor if zero(&a) => keep(&b),
                BinOp::Sub | BinOp::Shl | BinOp::Shr if zero(&b) => keep(&a),
                BinOp::Mul if one(&b) => keep(&a),
                BinOp::Mul if one(&a) => keep(&b),
                BinOp::And if ones(&b) => keep(&a),
                BinOp::And if ones(&a) => keep(&b),
                BinOp::Mul | BinOp::And if (zero(&a) || zero(&b)) && !ty.is_pointer() => {
                    Some(Self::constant(0, ty))
                }
                _ => None,
            };
            if let Some(s) = simplified {
                return s;
            }
        }
        Self::make(ExprKind::Binary(op, a, b), ty)
    }

    fn conjuncts(e: &ExprRef, op: BinOp, out: &mut Vec<ExprRef>) {
        match &e.kind {
            ExprKind::Binary(o, l, r) if *o == op => {
                Self::conjuncts(l, op, out);
                Self::conjuncts(r, op, out);
            }
            _ => out.push(e.clone()),
        }
    }

    fn logical(op: BinOp, a: ExprRef, b: ExprRef) -> ExprRef {
        let a = Self::to_bool(a);
        let b = Self::to_bool(b);
        let (unit, absorbing) = if op == BinOp::LAnd {
            (true, false)
        } else {
            (false, true)
        };
        for (x, y) in [(&a, &b), (&b, &a)] {
            if x.as_const() == Some(unit as u64) {
                return y.clone();
            }
            if x.as_const() == Some(absorbing as u64) {
                return Self::bool(absorbing);
            }
        }
        if a == b {
            return a;
        }
        // absorption: a || (a && b) == a, a && (a || b) == a
        let dual = if op == BinOp::LAnd {
            BinOp::LOr
        } else {
            BinOp::LAnd
        };
        for (x, y) in [(&a, &b), (&b, &a)] {
            let mut parts = Vec::new();
            Self::conjuncts(y, dual, &mut parts);
            if parts.len() > 1 && parts.iter().any(|p| p == x) {
                return x.clone();
            }
        }
        Self::make(ExprKind::Binary(op, a, b), DataType::bool())
    }

    /// Interprets a value as a per-lane predicate.
    pub fn to_bool(e: ExprRef) -> ExprRef {
        if e.is_bool() {
            return e;
        }
        if let Some(v) = e.as_const() {
            return Self::bool(v & 1 == 1);
        }
        let one = Self::constant(1, e.ty);
        let zero = Self::constant(0, e.ty);
        Self::binary(BinOp::Ne, Self::binary(BinOp::And, e, one), zero)
    }

    /// Value conversion to `ty`.
    pub fn cast(e: ExprRef, ty: DataType) -> ExprRef {
        let ty = if ty.base == Base::Bool || ty.is_pointer() {
            ty
        } else {
            ty.concrete()
        };
        if e.ty == ty {
            return e;
        }
        let int_like = |t: DataType| !t.is_pointer() && !t.is_float();
        if int_like(ty) && int_like(e.ty) && ty.base != Base::Bool {
            if let Some(v) = e.as_const() {
                return Self::constant(extend(v, e.ty), ty);
            }
            if let ExprKind::Cast(inner) = &e.kind {
                if int_like(inner.ty) && ty.width() <= e.ty.width() {
                    return Self::cast(inner.clone(), ty);
                }
            }
        }
        Self::make(ExprKind::Cast(e), ty)
    }

    /// Bit reinterpretation to a type of equal width.
    pub fn bitcast(e: ExprRef, ty: DataType) -> ExprRef {
        let ty = ty.concrete();
        if e.ty == ty {
            return e;
        }
        if let Some(v) = e.as_const() {
            if !e.is_bool() {
                return Self::constant(v, ty);
            }
        }
        if let ExprKind::Bitcast(inner) = &e.kind {
            return Self::bitcast(inner.clone(), ty);
        }
        Self::make(ExprKind::Bitcast(e), ty)
    }

    pub fn call(name: &'static str, args: Vec<ExprRef>, ty: DataType) -> ExprRef {
        Self::make(ExprKind::Call(name, args), ty)
    }

    pub fn ternary(c: ExprRef, a: ExprRef, b: ExprRef) -> ExprRef {
        let c = Self::to_bool(c);
        if c.is_true() || a == b {
            return a;
        }
        if c.is_false() {
            return b;
        }
        if let ExprKind::Unary(UnOp::LNot, inner) = &c.kind {
            return Self::ternary(inner.clone(), b, a);
        }
        let ty = if a.ty == b.ty { a.ty } else { arith_conv(a.ty, b.ty) };
        Self::make(ExprKind::Ternary(c, a, b), ty)
    }

    pub fn deref(addr: ExprRef) -> ExprRef {
        let ty = addr.ty.element().unwrap_or(DataType::u32());
        Self::make(ExprKind::Deref(addr), ty)
    }

    pub fn index(base: ExprRef, idx: ExprRef) -> ExprRef {
        let ty = base.ty.element().unwrap_or(DataType::u32());
        Self::make(ExprKind::Index(base, idx), ty)
    }

    /// Rebuilds this node with new children (same kind and type).
    pub fn with_children(&self, kids: Vec<ExprRef>) -> ExprRef {
        let mut it = kids.into_iter();
        let mut next = || it.next().expect("child count");
        let kind = match &self.kind {
            ExprKind::Unary(op, _) => ExprKind::Unary(*op, next()),
            ExprKind::Cast(_) => ExprKind::Cast(next()),
            ExprKind::Bitcast(_) => ExprKind::Bitcast(next()),
            ExprKind::Deref(_) => ExprKind::Deref(next()),
            ExprKind::Binary(op, _, _) => ExprKind::Binary(*op, next(), next()),
            ExprKind::Index(_, _) => ExprKind::Index(next(), next()),
            ExprKind::Ternary(..) => ExprKind::Ternary(next(), next(), next()),
            ExprKind::Call(name, args) => ExprKind::Call(name, (0..args.len()).map(|_| next()).collect()),
            other => other.clone(),
        };
        Self::make(kind, self.ty)
    }
}

fn fold_int(op: BinOp, x: u64, xt: DataType, y: u64, yt: DataType, ty: DataType) -> Option<u64> {
    let ct = arith_conv(xt, yt);
    let signed = ct.is_signed();
    let w = ct.width();
    let sx = |v: u64| extend(v, ct) as i64;
    Some(match op {
        BinOp::Add => x.wrapping_add(y),
        BinOp::Sub => x.wrapping_sub(y),
        BinOp::Mul => x.wrapping_mul(y),
        BinOp::And => x & y,
        BinOp::Or => x | y,
        BinOp::Xor => x ^ y,
        BinOp::Shl => x.wrapping_shl((y as u32) & (ty.width() - 1)),
        BinOp::Shr => {
            let n = (y as u32) & (ty.width() - 1);
            if ty.is_signed() {
                (extend(x, ty) as i64 >> n) as u64
            } else {
                (x & width_mask(ty.width())) >> n
            }
        }
        BinOp::Div | BinOp::Rem => return None,
        cmp if cmp.is_comparison() => {
            let (a, b) = (x & width_mask(w), y & width_mask(w));
            let ord = if signed {
                sx(a).cmp(&sx(b))
            } else {
                a.cmp(&b)
            };
            use std::cmp::Ordering::*;
            (match cmp {
                BinOp::Eq => ord == Equal,
                BinOp::Ne => ord != Equal,
                BinOp::Lt => ord == Less,
                BinOp::Le => ord != Greater,
                BinOp::Gt => ord == Greater,
                _ => ord != Less,
            }) as u64
        }
        _ => return None,
    })
}

/// Value of `e` truncated to 32 bits (the content of a register holding it).
pub fn low32(e: &ExprRef) -> ExprRef {
    if e.ty.width() <= 32 && !e.ty.is_pointer() && !e.is_bool() {
        return e.clone();
    }
    if e.ty.is_pointer() {
        return Expr::cast(Expr::cast(e.clone(), DataType::u64()), DataType::u32());
    }
    Expr::cast(e.clone(), DataType::u32())
}

/// Upper 32 bits of a 64-bit value.
pub fn high32(e: &ExprRef) -> ExprRef {
    let wide = if e.ty.is_pointer() || e.is_bool() || e.ty.is_float() {
        if e.ty.is_float() {
            Expr::bitcast(e.clone(), DataType::u64())
        } else {
            Expr::cast(e.clone(), DataType::u64())
        }
    } else if e.ty.width() < 64 {
        Expr::cast(e.clone(), DataType::u64())
    } else {
        e.clone()
    };
    Expr::cast(
        Expr::binary(BinOp::Shr, wide, Expr::u32(32)),
        DataType::u32(),
    )
}

/// Recognizes `low32(X)` and `high32(X)`, returning `X` and whether the
/// high half was taken.
pub fn half_of(e: &ExprRef) -> Option<(ExprRef, bool)> {
    let ExprKind::Cast(inner) = &e.kind else {
        return None;
    };
    if e.ty.width() != 32 {
        return None;
    }
    let unwrap = |x: &ExprRef| -> ExprRef {
        match &x.kind {
            ExprKind::Cast(p) if p.ty.is_pointer() || p.is_bool() => p.clone(),
            ExprKind::Bitcast(p) if p.ty.is_float() => p.clone(),
            _ => x.clone(),
        }
    };
    if let ExprKind::Binary(BinOp::Shr, x, n) = &inner.kind {
        if n.const_value() == Some(32) && x.ty.width() == 64 && !x.ty.is_signed() {
            return Some((unwrap(x), true));
        }
    }
    if inner.ty.width() == 64 {
        return Some((unwrap(inner), false));
    }
    None
}
