//! OpenCL C rendering of lowered kernels.

use std::fmt::Write as _;

use crate::asm::{ArgDecl, KernelConfig};
use crate::expr::{BinOp, Expr, ExprKind, UnOp};
use crate::lower::{Lowered, Stmt};
use crate::sym::Statement;
use crate::types::{Base, DataType};

const INDENT: &str = "    ";

/// Marker placed above every inline-assembly block.
pub const FALLBACK_COMMENT: &str =
    "/* unsupported instruction: inline assembly is not accepted by the AMDGPU-Pro driver */";

/// Comment opening a kernel body that still contains gotos.
pub const RESIDUE_COMMENT: &str =
    "/* control flow could not be fully structured; remaining blocks use goto */";

const PREC_TERNARY: u8 = 3;
const PREC_UNARY: u8 = 15;
const PREC_POSTFIX: u8 = 16;

fn binary_prec(op: BinOp) -> u8 {
    match op {
        BinOp::Mul | BinOp::Div | BinOp::Rem => 13,
        BinOp::Add | BinOp::Sub => 12,
        BinOp::Shl | BinOp::Shr => 11,
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 10,
        BinOp::Eq | BinOp::Ne => 9,
        BinOp::And => 8,
        BinOp::Xor => 7,
        BinOp::Or => 6,
        BinOp::LAnd => 5,
        BinOp::LOr => 4,
    }
}

fn binary_token(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div => "/",
        BinOp::Rem => "%",
        BinOp::And => "&",
        BinOp::Or => "|",
        BinOp::Xor => "^",
        BinOp::Shl => "<<",
        BinOp::Shr => ">>",
        BinOp::Eq => "==",
        BinOp::Ne => "!=",
        BinOp::Lt => "<",
        BinOp::Le => "<=",
        BinOp::Gt => ">",
        BinOp::Ge => ">=",
        BinOp::LAnd => "&&",
        BinOp::LOr => "||",
    }
}

/// Renders an expression with the fewest parentheses C precedence allows.
pub fn render_expr(e: &Expr) -> String {
    render(e, 0)
}

fn render(e: &Expr, min_prec: u8) -> String {
    let (text, prec) = render_node(e);
    if prec < min_prec {
        format!("({text})")
    } else {
        text
    }
}

fn render_node(e: &Expr) -> (String, u8) {
    match &e.kind {
        ExprKind::Const(bits) => render_const(*bits, e.ty),
        ExprKind::Builtin(id) => (id.to_string(), PREC_POSTFIX),
        ExprKind::Arg(name) | ExprKind::Var(name) => (name.clone(), PREC_POSTFIX),
        ExprKind::KernargBase => ("__kernarg_base".to_string(), PREC_POSTFIX),
        ExprKind::Unary(op, a) => {
            let tok = match op {
                UnOp::Neg => "-",
                UnOp::Not => "~",
                UnOp::LNot => "!",
            };
            let mut inner = render(a, PREC_UNARY);
            if inner.starts_with(tok) || (tok == "-" && inner.starts_with("--")) {
                inner = format!("({inner})");
            }
            (format!("{tok}{inner}"), PREC_UNARY)
        }
        ExprKind::Binary(op, a, b) => {
            let p = binary_prec(*op);
            let text = format!(
                "{} {} {}",
                render(a, p),
                binary_token(*op),
                render(b, p + 1)
            );
            (text, p)
        }
        ExprKind::Cast(a) => (
            format!("({}){}", type_name(e.ty), render(a, PREC_UNARY)),
            PREC_UNARY,
        ),
        ExprKind::Bitcast(a) => (
            format!("as_{}({})", type_name(e.ty), render(a, 0)),
            PREC_POSTFIX,
        ),
        ExprKind::Call(name, args) => {
            let args: Vec<String> = args.iter().map(|a| render(a, 0)).collect();
            (format!("{name}({})", args.join(", ")), PREC_POSTFIX)
        }
        ExprKind::Ternary(c, a, b) => (
            format!(
                "{} ? {} : {}",
                render(c, PREC_TERNARY + 1),
                render(a, 0),
                render(b, PREC_TERNARY)
            ),
            PREC_TERNARY,
        ),
        ExprKind::Deref(a) => (format!("*{}", render(a, PREC_UNARY)), PREC_UNARY),
        ExprKind::Index(base, idx) => (
            format!("{}[{}]", render(base, PREC_POSTFIX), render(idx, 0)),
            PREC_POSTFIX,
        ),
    }
}

fn type_name(ty: DataType) -> String {
    ty.c_name().trim_end().to_string()
}

fn render_const(bits: u64, ty: DataType) -> (String, u8) {
    let atom = |s: String| (s, PREC_POSTFIX);
    let signed = |s: String| {
        let p = if s.starts_with('-') { PREC_UNARY } else { PREC_POSTFIX };
        (s, p)
    };
    if ty.is_pointer() {
        return (format!("({}){bits:#x}ul", type_name(ty)), PREC_UNARY);
    }
    let c = ty.concrete();
    match (c.base, c.bits) {
        (Base::Bool, _) => atom(((bits != 0) as u8).to_string()),
        (Base::Float, 64) => {
            let v = f64::from_bits(bits);
            if v.is_finite() {
                signed(float_text(format!("{v:?}"), ""))
            } else {
                atom(format!("as_double({bits:#x}ul)"))
            }
        }
        (Base::Float, 16) => atom(format!("as_half((ushort){:#x})", bits & 0xffff)),
        (Base::Float, _) => {
            let v = f32::from_bits(bits as u32);
            if v.is_finite() {
                signed(float_text(format!("{v:?}"), "f"))
            } else {
                atom(format!("as_float({:#x}u)", bits as u32))
            }
        }
        (Base::Signed, 64) => {
            let v = bits as i64;
            if v == i64::MIN {
                atom("(-9223372036854775807l - 1)".to_string())
            } else if v < 0 {
                signed(format!("{v}l"))
            } else {
                atom(format!("{}l", int_digits(v as u64)))
            }
        }
        (Base::Signed, 32) | (Base::Signed, 24) => {
            let v = bits as u32 as i32;
            if v == i32::MIN {
                atom("(-2147483647 - 1)".to_string())
            } else if v < 0 {
                signed(v.to_string())
            } else {
                atom(int_digits(v as u64))
            }
        }
        (Base::Signed, _) => {
            let v = crate::expr::extend(bits, c) as i64;
            (format!("({}){v}", type_name(c)), PREC_UNARY)
        }
        (_, 64) => atom(format!("{}ul", int_digits(bits))),
        (_, 32) | (_, 24) => atom(format!("{}u", int_digits(bits & 0xffff_ffff))),
        _ => (format!("({}){}u", type_name(c), int_digits(bits)), PREC_UNARY),
    }
}

fn int_digits(v: u64) -> String {
    if v > 0xffff {
        format!("{v:#x}")
    } else {
        v.to_string()
    }
}

/// Rust's shortest round-trip float text, adjusted to C literal syntax.
fn float_text(mut s: String, suffix: &str) -> String {
    if !s.contains(['.', 'e', 'E']) {
        s.push_str(".0");
    } else if let Some(pos) = s.find('e') {
        if !s[..pos].contains('.') {
            s.insert_str(pos, ".0");
        }
    }
    s.push_str(suffix);
    s
}

fn declaration(ty: DataType, name: &str) -> String {
    let t = ty.c_name();
    if t.ends_with('*') {
        format!("{t}{name}")
    } else {
        format!("{t} {name}")
    }
}

fn escape_asm(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

/// Inverse of the escaping used inside `__asm__("...")`.
pub fn unescape_asm(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// The inline-assembly block kept in place of an unsupported instruction.
pub fn emit_fallback(source_text: &str) -> Vec<String> {
    vec![
        FALLBACK_COMMENT.to_string(),
        format!("__asm__(\"{}\");", escape_asm(source_text.trim())),
    ]
}

fn comment(text: &str) -> String {
    format!("/* {} */", text.replace("*/", "* /"))
}

struct Emitter {
    out: String,
}

impl Emitter {
    fn line(&mut self, depth: usize, text: &str) {
        for _ in 0..depth {
            self.out.push_str(INDENT);
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn statement(&mut self, depth: usize, s: &Statement) {
        match s {
            Statement::Decl { name, ty, init } => {
                let decl = declaration(*ty, name);
                match init {
                    Some(v) => self.line(depth, &format!("{decl} = {};", render_expr(v))),
                    None => self.line(depth, &format!("{decl};")),
                }
            }
            Statement::Assign { name, value } => {
                self.line(depth, &format!("{name} = {};", render_expr(value)))
            }
            Statement::Store {
                target,
                value,
                guard,
            } => {
                let store = format!("{} = {};", render_expr(target), render_expr(value));
                match guard {
                    Some(g) => {
                        self.line(depth, &format!("if ({}) {{", render_expr(g)));
                        self.line(depth + 1, &store);
                        self.line(depth, "}");
                    }
                    None => self.line(depth, &store),
                }
            }
            Statement::RawAsm { text, .. } => {
                for l in emit_fallback(text) {
                    self.line(depth, &l);
                }
            }
            Statement::Return => self.line(depth, "return;"),
        }
    }

    fn block(&mut self, depth: usize, stmts: &[Stmt]) {
        for (i, s) in stmts.iter().enumerate() {
            match s {
                Stmt::Simple(st) => self.statement(depth, st),
                Stmt::If { cond, then_, else_ } => self.if_stmt(depth, cond, then_, else_, false),
                Stmt::Label(name) => {
                    // A label must be followed by a statement.
                    let needs_null = match stmts.get(i + 1) {
                        None => true,
                        Some(Stmt::Simple(Statement::Decl { .. })) => true,
                        Some(_) => false,
                    };
                    let text = if needs_null {
                        format!("{name}: ;")
                    } else {
                        format!("{name}:")
                    };
                    self.line(depth.saturating_sub(1), &text);
                }
                Stmt::Goto(label) => self.line(depth, &format!("goto {label};")),
                Stmt::CondGoto { cond, label } => self.line(
                    depth,
                    &format!("if ({}) goto {label};", render_expr(cond)),
                ),
                Stmt::Comment(text) => self.line(depth, &comment(text)),
            }
        }
    }

    fn if_stmt(
        &mut self,
        depth: usize,
        cond: &crate::expr::ExprRef,
        then_: &[Stmt],
        else_: &[Stmt],
        chained: bool,
    ) {
        let (cond, then_, else_) = if then_.is_empty() && !else_.is_empty() {
            (Expr::not(cond.clone()), else_, then_)
        } else {
            (cond.clone(), then_, else_)
        };
        let head = format!("if ({}) {{", render_expr(&cond));
        if chained {
            self.line(depth, &format!("}} else {head}"));
        } else {
            self.line(depth, &head);
        }
        self.block(depth + 1, then_);
        match else_ {
            [] => self.line(depth, "}"),
            [Stmt::If {
                cond: c2,
                then_: t2,
                else_: e2,
            }] if !t2.is_empty() => self.if_stmt(depth, c2, t2, e2, true),
            _ => {
                self.line(depth, "} else {");
                self.block(depth + 1, else_);
                self.line(depth, "}");
            }
        }
    }
}

fn render_arg(arg: &ArgDecl) -> String {
    let words: Vec<&str> = arg
        .qualifiers
        .iter()
        .flat_map(|q| q.split_whitespace())
        .collect();
    let pointer = arg.type_text.ends_with('*');
    let mut prefix = String::new();
    for q in ["const", "volatile"] {
        if words.contains(&q) {
            prefix.push_str(q);
            prefix.push(' ');
        }
    }
    let restrict = pointer && words.contains(&"restrict");
    let ty = match arg.ocl_type {
        Some(t) => t.c_name(),
        None => match arg.address_space.address_space() {
            Some(space) => {
                let elem = arg.type_text.trim_end_matches('*').trim_end();
                let stars = arg.type_text.len() - arg.type_text.trim_end_matches('*').len();
                format!("{} {elem} {}", space.qualifier(), "*".repeat(stars))
            }
            None => arg.type_text.clone(),
        },
    };
    let sep = if ty.ends_with('*') { "" } else { " " };
    let restrict = if restrict { "restrict " } else { "" };
    format!("{prefix}{ty}{sep}{restrict}{}", arg.name)
}

/// The `__kernel void name(...)` line, without the opening brace.
pub fn signature(name: &str, config: &KernelConfig) -> String {
    let args: Vec<String> = config
        .args
        .iter()
        .filter(|a| !a.implicit)
        .map(render_arg)
        .collect();
    format!("__kernel void {name}({})", args.join(", "))
}

/// Renders one kernel. A trailing top-level `return` is dropped.
pub fn emit_kernel(name: &str, config: &KernelConfig, lowered: &Lowered) -> String {
    let mut em = Emitter { out: String::new() };
    if config.cws_declared {
        let [x, y, z] = config.cws;
        let _ = writeln!(
            em.out,
            "__attribute__((reqd_work_group_size({x}, {y}, {z})))"
        );
    }
    em.line(0, &format!("{} {{", signature(name, config)));
    if !lowered.structured {
        em.line(1, RESIDUE_COMMENT);
    }
    for d in &lowered.decls {
        em.statement(1, d);
    }
    let mut body: &[Stmt] = &lowered.body;
    if let [rest @ .., Stmt::Simple(Statement::Return)] = body {
        body = rest;
    }
    em.block(1, body);
    em.line(0, "}");
    em.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abi::{BuiltinId, BuiltinKind};
    use crate::asm::parse_config;
    use crate::asm::SourceLine;

    fn int(name: &str) -> crate::expr::ExprRef {
        Expr::var(name, DataType::i32())
    }

    #[test]
    fn precedence_is_minimal() {
        let e = Expr::binary(
            BinOp::Add,
            int("a"),
            Expr::binary(BinOp::Mul, int("b"), int("c")),
        );
        assert_eq!(render_expr(&e), "a + b * c");
        let e = Expr::binary(
            BinOp::Mul,
            Expr::binary(BinOp::Add, int("a"), int("b")),
            int("c"),
        );
        assert_eq!(render_expr(&e), "(a + b) * c");
        let e = Expr::binary(
            BinOp::Sub,
            int("a"),
            Expr::binary(BinOp::Sub, int("b"), int("c")),
        );
        assert_eq!(render_expr(&e), "a - (b - c)");
    }

    #[test]
    fn ternary_under_add_is_parenthesized() {
        let t = Expr::ternary(
            Expr::binary(BinOp::Lt, int("a"), int("b")),
            int("a"),
            int("b"),
        );
        let e = Expr::binary(BinOp::Add, t, int("c"));
        assert_eq!(render_expr(&e), "(a < b ? a : b) + c");
    }

    #[test]
    fn constants() {
        assert_eq!(render_expr(&Expr::i32(i32::MIN)), "(-2147483647 - 1)");
        assert_eq!(render_expr(&Expr::i32(-4)), "-4");
        assert_eq!(render_expr(&Expr::u32(0x10000)), "0x10000u");
        assert_eq!(render_expr(&Expr::constant(5, DataType::u64())), "5ul");
        assert_eq!(render_expr(&Expr::constant(5, DataType::i64())), "5l");
        let one = Expr::constant(1.0f32.to_bits() as u64, DataType::f32());
        assert_eq!(render_expr(&one), "1.0f");
        let inf = Expr::constant(f32::INFINITY.to_bits() as u64, DataType::f32());
        assert_eq!(render_expr(&inf), "as_float(0x7f800000u)");
        let tiny = Expr::constant(1e-7f32.to_bits() as u64, DataType::f32());
        assert_eq!(render_expr(&tiny), "1.0e-7f");
    }

    #[test]
    fn negation_of_negative_constant() {
        let c = Expr::constant((-1.5f32).to_bits() as u64, DataType::f32());
        let e = Expr::unary(UnOp::Neg, c);
        assert_eq!(render_expr(&e), "-(-1.5f)");
    }

    #[test]
    fn builtin_and_index() {
        let gid = Expr::builtin(BuiltinId::new(BuiltinKind::GlobalId, 0), DataType::u32());
        let goff = Expr::builtin(BuiltinId::new(BuiltinKind::GlobalOffset, 0), DataType::u32());
        let data = Expr::arg("data", DataType::pointer_to(DataType::i32(), crate::types::AddressSpace::Global));
        let e = Expr::index(data, Expr::binary(BinOp::Sub, gid, goff));
        assert_eq!(render_expr(&e), "data[get_global_id(0) - get_global_offset(0)]");
    }

    fn config(text: &str) -> KernelConfig {
        let lines: Vec<SourceLine> = text
            .lines()
            .enumerate()
            .map(|(i, l)| SourceLine {
                number: i + 1,
                text: l.to_string(),
            })
            .collect();
        parse_config(&lines).unwrap()
    }

    #[test]
    fn copy_signature() {
        let cfg = config(
            ".arg _global_offset_0, \"size_t\", long\n.arg data, \"int*\", int*, global,\n.arg x, \"int\", int",
        );
        assert_eq!(
            signature("copy", &cfg),
            "__kernel void copy(__global int *data, int x)"
        );
    }

    #[test]
    fn qualifiers_and_unresolved_types() {
        let cfg = config(".arg p, \"float4*\", float4*, global, const restrict\n.arg n, \"uint\", uint");
        assert_eq!(
            signature("k", &cfg),
            "__kernel void k(const __global float4 *restrict p, uint n)"
        );
    }

    #[test]
    fn empty_kernel_and_fallback() {
        let cfg = KernelConfig::default();
        let lowered = Lowered {
            decls: vec![],
            body: vec![Stmt::Simple(Statement::Return)],
            diags: vec![],
            structured: true,
        };
        assert_eq!(emit_kernel("e", &cfg, &lowered), "__kernel void e() {\n}\n");
        let lowered = Lowered {
            decls: vec![],
            body: vec![Stmt::Simple(Statement::RawAsm {
                text: "ds_read_b32 v1, v2".into(),
                line: 3,
            })],
            diags: vec![],
            structured: true,
        };
        let out = emit_kernel("e", &cfg, &lowered);
        assert!(out.contains("__asm__(\"ds_read_b32 v1, v2\");"));
        assert!(out.contains(FALLBACK_COMMENT));
    }

    #[test]
    fn asm_escape_round_trips() {
        let s = "s_mov_b32 s0, \"x\\y\"\t";
        assert_eq!(unescape_asm(&escape_asm(s)), s);
    }

    #[test]
    fn empty_then_is_inverted() {
        let cfg = KernelConfig::default();
        let c = Expr::binary(BinOp::Lt, int("a"), int("b"));
        let lowered = Lowered {
            decls: vec![],
            body: vec![Stmt::If {
                cond: c,
                then_: vec![],
                else_: vec![Stmt::Simple(Statement::Return)],
            }],
            diags: vec![],
            structured: true,
        };
        let out = emit_kernel("k", &cfg, &lowered);
        assert!(out.contains("if (a >= b) {\n        return;\n    }"), "{out}");
    }
}
