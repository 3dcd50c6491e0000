//! A checker for the OpenCL C subset the decompiler emits.
//!
//! Beyond syntax it resolves every identifier against block scopes,
//! kernel parameters and a list of built-in functions, and every `goto`
//! against the labels of its function.

use std::collections::HashSet;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(String),
    Float(String),
    Str(String),
    Punct(&'static str),
}

const PUNCTS: &[&str] = &[
    "<<=", ">>=", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "++", "--", "->", "+=", "-=",
    "*=", "/=", "%=", "&=", "|=", "^=", "(", ")", "[", "]", "{", "}", ",", ";", ":", "?", "=",
    "+", "-", "*", "/", "%", "&", "|", "^", "~", "!", "<", ">", ".",
];

const SCALARS: &[&str] = &[
    "void", "bool", "char", "uchar", "short", "ushort", "int", "uint", "long", "ulong", "float",
    "double", "half", "size_t", "ptrdiff_t", "intptr_t", "uintptr_t",
];

const QUALIFIERS: &[&str] = &[
    "__global", "global", "__local", "local", "__constant", "constant", "__private", "private",
    "const", "volatile", "unsigned", "signed",
];

const BUILTINS: &[&str] = &[
    "get_global_id", "get_local_id", "get_group_id", "get_global_offset", "get_global_size",
    "get_local_size", "get_num_groups", "get_work_dim", "min", "max", "fmin", "fmax", "mul_hi",
    "mad24", "mul24", "abs", "clamp", "select", "convert_int_sat", "convert_uint_sat",
    "convert_int", "convert_uint", "convert_float",
];

const KEYWORDS: &[&str] = &[
    "if", "else", "goto", "return", "while", "for", "do", "switch", "case", "default", "break",
    "continue", "__kernel", "kernel", "__attribute__", "__asm__", "restrict", "sizeof",
];

fn is_type_name(s: &str) -> bool {
    if SCALARS.contains(&s) {
        return true;
    }
    // Vector types such as float4 or uint2.
    for base in SCALARS {
        if let Some(n) = s.strip_prefix(base) {
            if matches!(n, "2" | "3" | "4" | "8" | "16") {
                return true;
            }
        }
    }
    false
}

fn is_builtin(s: &str) -> bool {
    if BUILTINS.contains(&s) {
        return true;
    }
    match s.strip_prefix("as_") {
        Some(t) => is_type_name(t) && t != "void",
        None => false,
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, String> {
    let b = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    while i < b.len() {
        let c = b[i] as char;
        if c == '\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if src[i..].starts_with("/*") {
            let end = src[i + 2..]
                .find("*/")
                .ok_or_else(|| format!("line {line}: unterminated comment"))?;
            line += src[i..i + 2 + end].matches('\n').count();
            i += end + 4;
            continue;
        }
        if src[i..].starts_with("//") {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let s = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[s..i].to_string()), line));
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && i + 1 < b.len() && b[i + 1].is_ascii_digit()) {
            let s = i;
            let mut float = false;
            if src[i..].starts_with("0x") || src[i..].starts_with("0X") {
                i += 2;
                while i < b.len() && b[i].is_ascii_hexdigit() {
                    i += 1;
                }
            } else {
                while i < b.len() && b[i].is_ascii_digit() {
                    i += 1;
                }
                if i < b.len() && b[i] == b'.' {
                    float = true;
                    i += 1;
                    while i < b.len() && b[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                    float = true;
                    i += 1;
                    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
                        i += 1;
                    }
                    let ds = i;
                    while i < b.len() && b[i].is_ascii_digit() {
                        i += 1;
                    }
                    if ds == i {
                        return Err(format!("line {line}: malformed exponent"));
                    }
                }
            }
            let suffix_start = i;
            while i < b.len() && b[i].is_ascii_alphabetic() {
                i += 1;
            }
            let suffix = src[suffix_start..i].to_ascii_lowercase();
            let ok = if float {
                matches!(suffix.as_str(), "" | "f" | "h")
            } else {
                matches!(suffix.as_str(), "" | "u" | "l" | "ul" | "lu")
            };
            if !ok {
                return Err(format!("line {line}: bad literal suffix in `{}`", &src[s..i]));
            }
            let text = src[s..i].to_string();
            out.push((if float { Tok::Float(text) } else { Tok::Int(text) }, line));
            continue;
        }
        if c == '"' {
            let mut s = String::new();
            i += 1;
            loop {
                if i >= b.len() || b[i] == b'\n' {
                    return Err(format!("line {line}: unterminated string"));
                }
                match b[i] {
                    b'"' => {
                        i += 1;
                        break;
                    }
                    b'\\' => {
                        let e = *b.get(i + 1).ok_or_else(|| format!("line {line}: bad escape"))?;
                        if !matches!(e, b'\\' | b'"' | b'n' | b't' | b'\'' | b'0') {
                            return Err(format!("line {line}: unknown escape `\\{}`", e as char));
                        }
                        s.push('\\');
                        s.push(e as char);
                        i += 2;
                    }
                    _ => {
                        let ch = src[i..].chars().next().unwrap();
                        s.push(ch);
                        i += ch.len_utf8();
                    }
                }
            }
            out.push((Tok::Str(s), line));
            continue;
        }
        match PUNCTS.iter().find(|p| src[i..].starts_with(**p)) {
            Some(p) => {
                out.push((Tok::Punct(p), line));
                i += p.len();
            }
            None => return Err(format!("line {line}: unexpected character `{c}`")),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    scopes: Vec<HashSet<String>>,
    labels: HashSet<String>,
    gotos: Vec<(String, usize)>,
    kernels: HashSet<String>,
}

type R<T> = Result<T, String>;

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.0)
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or(self.toks.last())
            .map(|t| t.1)
            .unwrap_or(0)
    }

    fn err<T>(&self, msg: impl AsRef<str>) -> R<T> {
        Err(format!("line {}: {} (at {:?})", self.line(), msg.as_ref(), self.peek()))
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Some(Tok::Punct(q)) if *q == p)
    }

    fn is_ident(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(q)) if q == s)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> R<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.err(format!("expected `{p}`"))
        }
    }

    fn eat_ident(&mut self, s: &str) -> bool {
        if self.is_ident(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> R<String> {
        match self.peek() {
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) && !is_type_name(s) && !QUALIFIERS.contains(&s.as_str()) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("expected identifier"),
        }
    }

    fn declare(&mut self, name: &str) -> R<()> {
        let scope = self.scopes.last_mut().expect("scope");
        if !scope.insert(name.to_string()) {
            return self.err(format!("`{name}` redeclared in the same scope"));
        }
        Ok(())
    }

    fn resolve(&self, name: &str) -> bool {
        self.scopes.iter().any(|s| s.contains(name))
    }

    fn starts_type(&self) -> bool {
        match self.peek() {
            Some(Tok::Ident(s)) => is_type_name(s) || QUALIFIERS.contains(&s.as_str()),
            _ => false,
        }
    }

    /// Qualifiers, a base type and pointer declarators.
    fn type_spec(&mut self) -> R<()> {
        let mut seen_base = false;
        let mut seen_sign = false;
        while let Some(Tok::Ident(s)) = self.peek() {
            let s = s.clone();
            if QUALIFIERS.contains(&s.as_str()) {
                if s == "unsigned" || s == "signed" {
                    seen_sign = true;
                }
                self.pos += 1;
            } else if is_type_name(&s) && !seen_base {
                seen_base = true;
                self.pos += 1;
            } else {
                break;
            }
        }
        if !seen_base && !seen_sign {
            return self.err("expected a type");
        }
        while self.eat_punct("*") {
            while self.eat_ident("restrict") || self.eat_ident("const") || self.eat_ident("volatile") {}
        }
        Ok(())
    }

    fn unit(&mut self) -> R<()> {
        while self.peek().is_some() {
            self.kernel()?;
        }
        Ok(())
    }

    fn attribute(&mut self) -> R<()> {
        self.expect_punct("(")?;
        self.expect_punct("(")?;
        match self.peek() {
            Some(Tok::Ident(s)) if s == "reqd_work_group_size" || s == "work_group_size_hint" => {
                self.pos += 1;
            }
            _ => return self.err("unknown attribute"),
        }
        self.expect_punct("(")?;
        for k in 0..3 {
            if k > 0 {
                self.expect_punct(",")?;
            }
            match self.peek() {
                Some(Tok::Int(_)) => self.pos += 1,
                _ => return self.err("attribute arguments must be integers"),
            }
        }
        self.expect_punct(")")?;
        self.expect_punct(")")?;
        self.expect_punct(")")
    }

    fn kernel(&mut self) -> R<()> {
        while self.eat_ident("__attribute__") {
            self.attribute()?;
        }
        if !(self.eat_ident("__kernel") || self.eat_ident("kernel")) {
            return self.err("expected a kernel definition");
        }
        if !self.eat_ident("void") {
            return self.err("kernels return void");
        }
        let name = self.ident()?;
        if !self.kernels.insert(name.clone()) {
            return self.err(format!("kernel `{name}` defined twice"));
        }
        self.scopes.push(HashSet::new());
        self.expect_punct("(")?;
        if !self.eat_punct(")") {
            loop {
                self.type_spec()?;
                let p = self.ident()?;
                self.declare(&p)?;
                if self.eat_punct(")") {
                    break;
                }
                self.expect_punct(",")?;
            }
        }
        self.labels.clear();
        self.gotos.clear();
        self.collect_labels()?;
        self.compound()?;
        self.scopes.pop();
        for (l, line) in &self.gotos {
            if !self.labels.contains(l) {
                return Err(format!("line {line}: goto to undefined label `{l}`"));
            }
        }
        Ok(())
    }

    /// Labels have function scope, so they are gathered before parsing.
    fn collect_labels(&mut self) -> R<()> {
        let mut depth = 0usize;
        let mut k = self.pos;
        while k < self.toks.len() {
            match &self.toks[k].0 {
                Tok::Punct("{") => depth += 1,
                Tok::Punct("}") => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                Tok::Ident(s) => {
                    let prev = self.toks.get(k.wrapping_sub(1)).map(|t| &t.0);
                    let starts_statement = matches!(prev, Some(Tok::Punct("{" | "}" | ";")))
                        || matches!(prev, Some(Tok::Ident(e)) if e == "else");
                    let colon = matches!(self.toks.get(k + 1).map(|t| &t.0), Some(Tok::Punct(":")));
                    if starts_statement && colon && !KEYWORDS.contains(&s.as_str()) && !self.labels.insert(s.clone()) {
                        return Err(format!("line {}: label `{s}` defined twice", self.toks[k].1));
                    }
                }
                _ => {}
            }
            k += 1;
        }
        Ok(())
    }

    fn compound(&mut self) -> R<()> {
        self.expect_punct("{")?;
        self.scopes.push(HashSet::new());
        while !self.is_punct("}") {
            if self.peek().is_none() {
                return self.err("unterminated block");
            }
            self.statement()?;
        }
        self.pos += 1;
        self.scopes.pop();
        Ok(())
    }

    fn statement(&mut self) -> R<()> {
        if self.is_punct("{") {
            return self.compound();
        }
        if self.eat_punct(";") {
            return Ok(());
        }
        if self.eat_ident("if") {
            self.expect_punct("(")?;
            self.expr()?;
            self.expect_punct(")")?;
            self.sub_statement()?;
            if self.eat_ident("else") {
                self.sub_statement()?;
            }
            return Ok(());
        }
        if self.eat_ident("goto") {
            let line = self.line();
            let l = self.ident()?;
            self.gotos.push((l, line));
            return self.expect_punct(";");
        }
        if self.eat_ident("return") {
            return self.expect_punct(";");
        }
        if self.eat_ident("__asm__") {
            self.expect_punct("(")?;
            match self.peek() {
                Some(Tok::Str(_)) => self.pos += 1,
                _ => return self.err("inline assembly takes a string"),
            }
            self.expect_punct(")")?;
            return self.expect_punct(";");
        }
        if let (Some(Tok::Ident(_)), Some(Tok::Punct(":"))) = (self.peek(), self.peek_at(1)) {
            self.ident()?;
            self.pos += 1;
            // A label must label a statement, not a declaration.
            if self.starts_type() || self.is_punct("}") {
                return self.err("label not followed by a statement");
            }
            return self.statement();
        }
        if self.starts_type() {
            self.type_spec()?;
            let name = self.ident()?;
            if self.eat_punct("=") {
                self.assignment()?;
            }
            self.declare(&name)?;
            return self.expect_punct(";");
        }
        let start = self.pos;
        self.expr()?;
        let is_assign = self.toks[start..self.pos]
            .iter()
            .any(|t| matches!(t.0, Tok::Punct("=")));
        let is_call = matches!(self.toks.get(start + 1).map(|t| &t.0), Some(Tok::Punct("(")))
            && matches!(self.toks.get(start).map(|t| &t.0), Some(Tok::Ident(_)));
        if !is_assign && !is_call {
            return self.err("expression statement without effect");
        }
        self.expect_punct(";")
    }

    /// The body of an `if`; a declaration alone is not allowed there.
    fn sub_statement(&mut self) -> R<()> {
        if self.starts_type() {
            return self.err("declaration as the body of an if");
        }
        self.scopes.push(HashSet::new());
        let r = self.statement();
        self.scopes.pop();
        r
    }

    fn expr(&mut self) -> R<()> {
        self.assignment()?;
        while self.eat_punct(",") {
            self.assignment()?;
        }
        Ok(())
    }

    fn assignment(&mut self) -> R<()> {
        let start = self.pos;
        let lvalue = self.conditional()?;
        const OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>="];
        if let Some(Tok::Punct(p)) = self.peek() {
            if OPS.contains(p) {
                if !lvalue {
                    self.pos = start;
                    return self.err("assignment to a non-lvalue");
                }
                self.pos += 1;
                self.assignment()?;
            }
        }
        Ok(())
    }

    fn conditional(&mut self) -> R<bool> {
        let lv = self.binary(0)?;
        if self.eat_punct("?") {
            self.expr()?;
            self.expect_punct(":")?;
            self.conditional()?;
            return Ok(false);
        }
        Ok(lv)
    }

    fn binary(&mut self, level: usize) -> R<bool> {
        const LEVELS: &[&[&str]] = &[
            &["||"],
            &["&&"],
            &["|"],
            &["^"],
            &["&"],
            &["==", "!="],
            &["<", ">", "<=", ">="],
            &["<<", ">>"],
            &["+", "-"],
            &["*", "/", "%"],
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lv = self.binary(level + 1)?;
        loop {
            let Some(Tok::Punct(p)) = self.peek() else {
                break;
            };
            if !LEVELS[level].contains(p) {
                break;
            }
            self.pos += 1;
            self.binary(level + 1)?;
            lv = false;
        }
        Ok(lv)
    }

    fn is_cast(&self) -> bool {
        if !self.is_punct("(") {
            return false;
        }
        match self.peek_at(1) {
            Some(Tok::Ident(s)) => is_type_name(s) || QUALIFIERS.contains(&s.as_str()),
            _ => false,
        }
    }

    fn unary(&mut self) -> R<bool> {
        if self.eat_punct("*") {
            self.unary()?;
            return Ok(true);
        }
        for p in ["-", "+", "~", "!", "&"] {
            if self.eat_punct(p) {
                self.unary()?;
                return Ok(false);
            }
        }
        if self.is_punct("++") || self.is_punct("--") {
            return self.err("increment operators are not emitted");
        }
        if self.is_cast() {
            self.pos += 1;
            self.type_spec()?;
            self.expect_punct(")")?;
            self.unary()?;
            return Ok(false);
        }
        self.postfix()
    }

    fn postfix(&mut self) -> R<bool> {
        let mut lv = self.primary()?;
        loop {
            if self.eat_punct("[") {
                self.expr()?;
                self.expect_punct("]")?;
                lv = true;
            } else if self.is_punct("(") {
                return self.err("call of a non-function");
            } else {
                break;
            }
        }
        Ok(lv)
    }

    fn primary(&mut self) -> R<bool> {
        match self.peek().cloned() {
            Some(Tok::Int(_)) | Some(Tok::Float(_)) => {
                self.pos += 1;
                Ok(false)
            }
            Some(Tok::Punct("(")) => {
                self.pos += 1;
                self.expr()?;
                self.expect_punct(")")?;
                Ok(false)
            }
            Some(Tok::Ident(name)) => {
                if matches!(self.peek_at(1), Some(Tok::Punct("("))) {
                    if !is_builtin(&name) {
                        return self.err(format!("call of unknown function `{name}`"));
                    }
                    self.pos += 2;
                    if !self.eat_punct(")") {
                        loop {
                            self.assignment()?;
                            if self.eat_punct(")") {
                                break;
                            }
                            self.expect_punct(",")?;
                        }
                    }
                    return Ok(false);
                }
                let name = self.ident()?;
                if !self.resolve(&name) {
                    self.pos -= 1;
                    return self.err(format!("use of undeclared identifier `{name}`"));
                }
                Ok(true)
            }
            _ => self.err("expected an expression"),
        }
    }
}

/// Checks `src` as a sequence of kernel definitions.
pub fn check(src: &str) -> Result<(), String> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        scopes: Vec::new(),
        labels: HashSet::new(),
        gotos: Vec::new(),
        kernels: HashSet::new(),
    };
    p.unit()
}
