//! Random structured programs lowered to branch-and-label assembly.
//!
//! Every straight-line item leaves a marker `v_mov_b32 v1, <id>`, so a
//! region tree can be read back as a string over marker ids and compared
//! with the tree the program was generated from.

use gcn2cl::asm::Operand;
use gcn2cl::cfg::Cfg;
use gcn2cl::structure::Region;
use rand::Rng;

/// How a conditional is encoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Form {
    /// `s_cmp` and a scalar branch around the body.
    Scalar,
    /// Mask save/invert/restore with no branches at all.
    Mask,
    /// Mask operations plus `s_cbranch_execz` skips; the flags say which
    /// halves get one.
    MaskSkip { then_: bool, else_: bool },
}

#[derive(Clone, Debug)]
pub enum Node {
    Linear(u32),
    If { cond: u32, body: Vec<Node>, form: Form },
    IfElse { cond: u32, then_: Vec<Node>, else_: Vec<Node>, form: Form },
}

pub struct Generator<'r, R: Rng> {
    rng: &'r mut R,
    next_id: u32,
    budget: i32,
    pub max_depth: u32,
}

impl<'r, R: Rng> Generator<'r, R> {
    /// `budget` bounds the number of basic blocks the program needs.
    pub fn new(rng: &'r mut R, budget: i32, max_depth: u32) -> Self {
        Generator {
            rng,
            next_id: 1,
            budget,
            max_depth,
        }
    }

    fn id(&mut self) -> u32 {
        let i = self.next_id;
        self.next_id += 1;
        i
    }

    fn form(&mut self, has_else: bool) -> Form {
        match self.rng.gen_range(0..3) {
            0 => Form::Scalar,
            1 => Form::Mask,
            _ => Form::MaskSkip {
                then_: self.rng.gen_bool(0.7),
                else_: has_else && self.rng.gen_bool(0.7),
            },
        }
    }

    pub fn program(&mut self) -> Vec<Node> {
        self.seq(0)
    }

    fn seq(&mut self, depth: u32) -> Vec<Node> {
        let mut out = vec![self.node(depth)];
        while self.budget > 0 && self.rng.gen_bool(0.55) {
            out.push(self.node(depth));
        }
        out
    }

    fn node(&mut self, depth: u32) -> Node {
        let room = depth < self.max_depth;
        let pick = self.rng.gen_range(0..10);
        if room && pick < 3 && self.budget >= 3 {
            self.budget -= 3;
            let cond = self.id();
            let form = self.form(false);
            let body = self.seq(depth + 1);
            return Node::If { cond, body, form };
        }
        if room && pick < 6 && self.budget >= 5 {
            self.budget -= 5;
            let cond = self.id();
            let form = self.form(true);
            let then_ = self.seq(depth + 1);
            let else_ = self.seq(depth + 1);
            return Node::IfElse {
                cond,
                then_,
                else_,
                form,
            };
        }
        Node::Linear(self.id())
    }
}

/// The generator's tree in the string form used for comparison.
pub fn truth(nodes: &[Node]) -> String {
    let mut s = String::new();
    for n in nodes {
        match n {
            Node::Linear(id) => s += &format!("{id} "),
            Node::If { cond, body, .. } => s += &format!("{cond} ?{{{}}} ", truth(body)),
            Node::IfElse {
                cond, then_, else_, ..
            } => s += &format!("{cond} ?{{{}}}:{{{}}} ", truth(then_), truth(else_)),
        }
    }
    s
}

fn block_markers(cfg: &Cfg, b: usize) -> String {
    let mut s = String::new();
    for i in &cfg.blocks[b].instrs {
        if i.mnemonic == "v_mov_b32" && i.operands.first() == Some(&Operand::Vgpr(1)) {
            if let Some(Operand::Int(v)) = i.operands.get(1) {
                s += &format!("{v} ");
            }
        }
    }
    s
}

/// A reduced region tree in the same string form as [`truth`].
pub fn recovered(r: &Region, cfg: &Cfg) -> String {
    match r {
        Region::Block(b) => block_markers(cfg, *b),
        Region::Seq(rs) => rs.iter().map(|x| recovered(x, cfg)).collect(),
        Region::If {
            head,
            body,
            body_on_taken,
        } => {
            let tag = if *body_on_taken { "?!" } else { "?" };
            format!("{}{tag}{{{}}} ", recovered(head, cfg), recovered(body, cfg))
        }
        Region::IfElse { head, then_, else_ } => format!(
            "{}?{{{}}}:{{{}}} ",
            recovered(head, cfg),
            recovered(then_, cfg),
            recovered(else_, cfg)
        ),
    }
}

/// Emission settings.
#[derive(Clone, Copy, Debug)]
pub struct Emit {
    /// Store every marker to `out[0]` so that runs are observable.
    pub stores: bool,
}

struct Writer {
    lines: Vec<String>,
    labels: u32,
    emit: Emit,
}

impl Writer {
    fn label(&mut self) -> String {
        self.labels += 1;
        format!(".L{}", self.labels)
    }

    fn ins(&mut self, s: impl Into<String>) {
        self.lines.push(format!("        {}", s.into()));
    }

    fn place(&mut self, l: &str) {
        self.lines.push(format!("{l}:"));
    }

    fn marker(&mut self, id: u32) {
        self.ins(format!("v_mov_b32 v1, {id}"));
        if self.emit.stores {
            self.ins("flat_store_dword v[2:3], v1");
        }
    }

    /// Condition on the lane (mask forms) or on the work-group (scalar).
    fn vector_cond(&mut self, id: u32) {
        self.ins(format!("v_cmp_gt_u32 vcc, {}, v0", id * 7 % 64));
    }

    fn seq(&mut self, nodes: &[Node], depth: u32) {
        for n in nodes {
            self.node(n, depth);
        }
    }

    fn node(&mut self, n: &Node, depth: u32) {
        let pair = 20 + 2 * depth;
        let saved = format!("s[{}:{}]", pair, pair + 1);
        match n {
            Node::Linear(id) => self.marker(*id),
            Node::If { cond, body, form } => {
                self.marker(*cond);
                match form {
                    Form::Scalar => {
                        let end = self.label();
                        self.ins(format!("s_cmp_gt_u32 s6, {}", cond * 5 % 64));
                        self.ins(format!("s_cbranch_scc0 {end}"));
                        self.seq(body, depth + 1);
                        self.place(&end);
                    }
                    Form::Mask | Form::MaskSkip { .. } => {
                        let skip = matches!(form, Form::MaskSkip { then_: true, .. });
                        let end = self.label();
                        self.vector_cond(*cond);
                        self.ins(format!("s_and_saveexec_b64 {saved}, vcc"));
                        if skip {
                            self.ins(format!("s_cbranch_execz {end}"));
                        }
                        self.seq(body, depth + 1);
                        if skip {
                            self.place(&end);
                        }
                        if cond % 2 == 0 {
                            self.ins(format!("s_or_b64 exec, exec, {saved}"));
                        } else {
                            self.ins(format!("s_mov_b64 exec, {saved}"));
                        }
                    }
                }
            }
            Node::IfElse {
                cond,
                then_,
                else_,
                form,
            } => {
                self.marker(*cond);
                match form {
                    Form::Scalar => {
                        let els = self.label();
                        let end = self.label();
                        self.ins(format!("s_cmp_gt_u32 s6, {}", cond * 5 % 64));
                        self.ins(format!("s_cbranch_scc0 {els}"));
                        self.seq(then_, depth + 1);
                        self.ins(format!("s_branch {end}"));
                        self.place(&els);
                        self.seq(else_, depth + 1);
                        self.place(&end);
                    }
                    Form::Mask | Form::MaskSkip { .. } => {
                        let (skip_then, skip_else) = match form {
                            Form::MaskSkip { then_, else_ } => (*then_, *else_),
                            _ => (false, false),
                        };
                        let els = self.label();
                        let end = self.label();
                        self.vector_cond(*cond);
                        self.ins(format!("s_and_saveexec_b64 {saved}, vcc"));
                        if skip_then {
                            self.ins(format!("s_cbranch_execz {els}"));
                        }
                        self.seq(then_, depth + 1);
                        if skip_then {
                            self.place(&els);
                        }
                        if cond % 2 == 0 {
                            self.ins(format!("s_andn2_b64 exec, {saved}, exec"));
                        } else {
                            self.ins(format!("s_xor_b64 exec, exec, {saved}"));
                        }
                        if skip_else {
                            self.ins(format!("s_cbranch_execz {end}"));
                        }
                        self.seq(else_, depth + 1);
                        if skip_else {
                            self.place(&end);
                        }
                        self.ins(format!("s_or_b64 exec, exec, {saved}"));
                    }
                }
            }
        }
    }
}

/// A complete one-kernel listing for `nodes`.
pub fn listing(name: &str, nodes: &[Node], emit: Emit) -> String {
    let mut w = Writer {
        lines: Vec::new(),
        labels: 0,
        emit,
    };
    if emit.stores {
        w.ins("s_load_dwordx2 s[2:3], s[4:5], 0x30");
        w.ins("s_waitcnt lgkmcnt(0)");
        w.ins("v_mov_b32 v2, s2");
        w.ins("v_mov_b32 v3, s3");
    }
    w.seq(nodes, 0);
    w.ins("s_endpgm");
    let mut s = String::from(".amd\n.gpu Bonaire\n.32bit\n");
    s += &format!(".kernel {name}\n    .config\n        .dims x\n        .cws 64, 1, 1\n");
    s += "        .sgprsnum 40\n        .vgprsnum 8\n        .useargs\n";
    s += "        .arg _global_offset_0, \"size_t\", long\n";
    s += "        .arg _global_offset_1, \"size_t\", long\n";
    s += "        .arg _global_offset_2, \"size_t\", long\n";
    s += "        .arg _printf_buffer, \"size_t\", void*, global, , ronly\n";
    s += "        .arg _vqueue_pointer, \"size_t\", long\n";
    s += "        .arg _aqlwrap_pointer, \"size_t\", long\n";
    s += "        .arg out, \"uint*\", uint*, global,\n";
    s += "    .text\n";
    for l in w.lines {
        s += &l;
        s.push('\n');
    }
    s
}
