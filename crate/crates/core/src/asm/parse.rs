use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::AsmError;
use crate::isa::{normalize_sizes, Disp, MemRef, Mnemonic, OpSize, Operand, Reg, SymbolRef};
use crate::Address;

/// `plus - minus + constant`, with each side carrying its own offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expr {
    pub plus: Option<SymbolRef>,
    pub minus: Option<SymbolRef>,
    pub constant: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionDecl {
    pub name: String,
    pub base: Option<Address>,
    pub flags: Option<String>,
    pub nobits: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ItemKind {
    Section(SectionDecl),
    Entry(Expr),
    Label(String),
    Func(String),
    EndFunc,
    Slot {
        function: String,
        name: String,
        offset: u64,
    },
    Set {
        name: String,
        value: Expr,
    },
    Size {
        name: String,
        size: u64,
    },
    Instr {
        mnemonic: Mnemonic,
        operands: Vec<Operand>,
        disp32: bool,
        imm32: bool,
    },
    Data {
        width: u8,
        values: Vec<Expr>,
    },
    Zero(u64),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Item {
    pub line: usize,
    pub kind: ItemKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(i64),
    Str(Vec<u8>),
    Punct(char),
}

fn ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '.' || c == '$'
}

fn ident_char(c: char) -> bool {
    ident_start(c) || c.is_ascii_digit()
}

fn syntax(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError::Syntax {
        line,
        msg: msg.into(),
    }
}

fn lex(s: &str, line: usize) -> Result<Vec<Tok>, AsmError> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c == '"' {
            let mut v = Vec::new();
            i += 1;
            loop {
                match b.get(i) {
                    None => return Err(syntax(line, "unterminated string")),
                    Some(b'"') => break,
                    Some(b'\\') => {
                        let e = *b.get(i + 1).ok_or_else(|| syntax(line, "bad escape"))?;
                        i += 2;
                        v.push(match e {
                            b'n' => b'\n',
                            b't' => b'\t',
                            b'0' => 0,
                            b'"' | b'\\' => e,
                            b'x' => {
                                let h =
                                    s.get(i..i + 2).ok_or_else(|| syntax(line, "bad escape"))?;
                                i += 2;
                                u8::from_str_radix(h, 16).map_err(|_| syntax(line, "bad escape"))?
                            }
                            _ => return Err(syntax(line, "bad escape")),
                        });
                    }
                    Some(&x) => {
                        v.push(x);
                        i += 1;
                    }
                }
            }
            i += 1;
            out.push(Tok::Str(v));
        } else if c.is_ascii_digit() {
            let start = i;
            while i < b.len() && (b[i] as char).is_ascii_alphanumeric() {
                i += 1;
            }
            out.push(Tok::Num(parse_number(&s[start..i], line)?));
        } else if ident_start(c) {
            let start = i;
            while i < b.len() && ident_char(b[i] as char) {
                i += 1;
            }
            out.push(Tok::Ident(s[start..i].to_string()));
        } else if "+-*[](),:{}=".contains(c) {
            out.push(Tok::Punct(c));
            i += 1;
        } else {
            return Err(syntax(line, alloc::format!("unexpected character {c:?}")));
        }
    }
    Ok(out)
}

fn parse_number(s: &str, line: usize) -> Result<i64, AsmError> {
    let r = if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(h, 16).map(|v| v as i64)
    } else {
        s.parse::<i64>()
            .or_else(|_| s.parse::<u64>().map(|v| v as i64))
    };
    r.map_err(|_| syntax(line, alloc::format!("bad number {s:?}")))
}

struct Cursor {
    toks: Vec<Tok>,
    pos: usize,
    line: usize,
}

impl Cursor {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), AsmError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(alloc::format!("expected '{c}'")))
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn err(&self, msg: impl Into<String>) -> AsmError {
        syntax(self.line, msg)
    }

    fn ident(&mut self) -> Result<String, AsmError> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            _ => Err(self.err("expected a name")),
        }
    }

    fn number(&mut self) -> Result<i64, AsmError> {
        let neg = self.eat('-');
        match self.next() {
            Some(Tok::Num(v)) => Ok(if neg { v.wrapping_neg() } else { v }),
            _ => Err(self.err("expected a number")),
        }
    }

    fn finish(&self) -> Result<(), AsmError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.err("trailing tokens"))
        }
    }

    /// `label [+|- n]...` or `n [+|- n]...` inside parentheses.
    fn group(&mut self) -> Result<(Option<String>, i64), AsmError> {
        let mut label = None;
        let mut value = 0i64;
        let mut sign = if self.eat('-') { -1 } else { 1 };
        loop {
            match self.next() {
                Some(Tok::Num(v)) => value = value.wrapping_add(sign * v),
                Some(Tok::Ident(s)) if label.is_none() && sign == 1 => label = Some(s),
                _ => return Err(self.err("malformed expression")),
            }
            if self.eat('+') {
                sign = 1;
            } else if self.eat('-') {
                sign = -1;
            } else {
                return Ok((label, value));
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, AsmError> {
        let mut plus: Option<SymbolRef> = None;
        let mut minus: Option<SymbolRef> = None;
        let mut constant = 0i64;
        let mut sign = if self.eat('-') {
            -1
        } else {
            self.eat('+');
            1
        };
        loop {
            let (label, value) = match self.next() {
                Some(Tok::Num(v)) => (None, v),
                Some(Tok::Ident(s)) => (Some(s), 0),
                Some(Tok::Punct('(')) => {
                    let g = self.group()?;
                    self.expect(')')?;
                    g
                }
                _ => return Err(self.err("malformed expression")),
            };
            match (label, sign) {
                (None, _) => constant = constant.wrapping_add(sign * value),
                (Some(l), 1) if plus.is_none() => plus = Some(SymbolRef::new(l, value)),
                (Some(l), -1) if minus.is_none() => minus = Some(SymbolRef::new(l, value)),
                _ => return Err(self.err("too many labels in expression")),
            }
            if self.eat('+') {
                sign = 1;
            } else if self.eat('-') {
                sign = -1;
            } else {
                break;
            }
        }
        if let Some(p) = plus.as_mut() {
            p.offset = p.offset.wrapping_add(constant);
            constant = 0;
        }
        Ok(Expr {
            plus,
            minus,
            constant,
        })
    }

    fn expr_list(&mut self) -> Result<Vec<Expr>, AsmError> {
        let mut v = alloc::vec![self.expr()?];
        while self.eat(',') {
            v.push(self.expr()?);
        }
        self.finish()?;
        Ok(v)
    }

    fn mem(&mut self, size: Option<OpSize>) -> Result<MemRef, AsmError> {
        let mut m = MemRef {
            base: None,
            index: None,
            scale: 1,
            disp: Disp::Value(0),
            rip: false,
            size: size.unwrap_or(OpSize::Qword),
            force_disp32: false,
        };
        let mut label: Option<String> = None;
        let mut slot: Option<String> = None;
        let mut value = 0i64;
        let mut sign = if self.eat('-') { -1 } else { 1 };
        loop {
            match self.next() {
                Some(Tok::Num(v)) => value = value.wrapping_add(sign * v),
                Some(Tok::Ident(s)) if s == "rip" && sign == 1 && !m.rip => m.rip = true,
                Some(Tok::Ident(s)) if Reg::from_name(&s).is_some() && sign == 1 => {
                    let r = Reg::from_name(&s).unwrap();
                    if self.eat('*') {
                        let Some(Tok::Num(sc)) = self.next() else {
                            return Err(self.err("expected a scale"));
                        };
                        if m.index.is_some() {
                            return Err(self.err("two index registers"));
                        }
                        m.index = Some(r);
                        m.scale = sc as u8;
                    } else if m.base.is_none() {
                        m.base = Some(r);
                    } else if m.index.is_none() {
                        m.index = Some(r);
                    } else {
                        return Err(self.err("too many registers"));
                    }
                }
                Some(Tok::Ident(s)) if sign == 1 && label.is_none() => label = Some(s),
                Some(Tok::Ident(s)) if sign == -1 && slot.is_none() => slot = Some(s),
                _ => return Err(self.err("malformed memory operand")),
            }
            if self.eat('+') {
                sign = 1;
            } else if self.eat('-') {
                sign = -1;
            } else {
                break;
            }
        }
        self.expect(']')?;
        m.disp = match (label, slot) {
            (Some(l), None) => Disp::Symbol(SymbolRef::new(l, value)),
            (None, Some(name)) => Disp::Slot { name, bias: value },
            (None, None) => {
                let v = i32::try_from(value)
                    .or_else(|_| u32::try_from(value).map(|u| u as i32))
                    .map_err(|_| self.err("displacement out of range"))?;
                Disp::Value(v)
            }
            _ => return Err(self.err("label and slot in one operand")),
        };
        Ok(m)
    }

    fn operand(&mut self, branch: bool) -> Result<(Operand, bool), AsmError> {
        let size = match self.peek() {
            Some(Tok::Ident(s)) if s == "qword" || s == "dword" => {
                let sz = if s == "qword" {
                    OpSize::Qword
                } else {
                    OpSize::Dword
                };
                self.pos += 1;
                if matches!(self.peek(), Some(Tok::Ident(p)) if p == "ptr") {
                    self.pos += 1;
                }
                Some(sz)
            }
            _ => None,
        };
        if self.eat('[') {
            return Ok((Operand::Mem(self.mem(size)?), size.is_some()));
        }
        if size.is_some() {
            return Err(self.err("size keyword needs a memory operand"));
        }
        if let Some(Tok::Ident(s)) = self.peek() {
            if let Some(r) = Reg::from_name(s) {
                self.pos += 1;
                return Ok((Operand::Reg(r), false));
            }
        }
        let e = self.expr()?;
        if e.minus.is_some() {
            return Err(self.err("difference not allowed here"));
        }
        Ok(match e.plus {
            Some(s) => (Operand::Sym(s), false),
            None if branch => (Operand::PcRel(Address(e.constant as u64)), false),
            None => (Operand::imm(e.constant, 0), false),
        })
    }
}

/// Splits off a comment, respecting string literals.
fn strip_comment(s: &str) -> &str {
    let mut in_str = false;
    let mut esc = false;
    for (i, c) in s.char_indices() {
        match c {
            _ if esc => esc = false,
            '\\' if in_str => esc = true,
            '"' => in_str = !in_str,
            '#' | ';' if !in_str => return &s[..i],
            _ => {}
        }
    }
    s
}

pub fn parse_assembly(text: &str) -> Result<Vec<Item>, AsmError> {
    let mut items = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let toks = lex(strip_comment(raw), line)?;
        let mut c = Cursor { toks, pos: 0, line };
        while let (Some(Tok::Ident(name)), Some(Tok::Punct(':'))) =
            (c.toks.get(c.pos), c.toks.get(c.pos + 1))
        {
            items.push(Item {
                line,
                kind: ItemKind::Label(name.clone()),
            });
            c.pos += 2;
        }
        if c.at_end() {
            continue;
        }
        let kind = statement(&mut c)?;
        items.push(Item { line, kind });
    }
    Ok(items)
}

fn statement(c: &mut Cursor) -> Result<ItemKind, AsmError> {
    let mut disp32 = false;
    let mut imm32 = false;
    while c.eat('{') {
        match c.ident()?.as_str() {
            "disp32" => disp32 = true,
            "imm32" => imm32 = true,
            p => return Err(c.err(alloc::format!("unknown prefix {{{p}}}"))),
        }
        c.expect('}')?;
    }
    let word = c.ident()?;
    if word.starts_with('.') && !disp32 && !imm32 {
        return directive(c, &word);
    }
    let mut mnemonic = Mnemonic::from_name(&word)
        .ok_or_else(|| c.err(alloc::format!("unknown mnemonic {word}")))?;
    if mnemonic == Mnemonic::Jmp && matches!(c.peek(), Some(Tok::Ident(s)) if s == "short") {
        c.pos += 1;
        mnemonic = Mnemonic::JmpShort;
    }
    let mut operands = Vec::new();
    let mut sized = Vec::new();
    if !c.at_end() {
        loop {
            let (o, s) = c.operand(mnemonic.is_branch())?;
            operands.push(o);
            sized.push(s);
            if !c.eat(',') {
                break;
            }
        }
    }
    c.finish()?;
    let has_reg = operands.iter().any(|o| matches!(o, Operand::Reg(_)));
    let fixed = matches!(
        mnemonic,
        Mnemonic::Push | Mnemonic::Pop | Mnemonic::Call | Mnemonic::Jmp | Mnemonic::Movsxd
    );
    for (o, s) in operands.iter().zip(&sized) {
        if matches!(o, Operand::Mem(_)) && !s && !has_reg && !fixed && mnemonic != Mnemonic::Lea {
            return Err(c.err("memory operand needs a size keyword"));
        }
    }
    normalize_sizes(mnemonic, &mut operands);
    for o in operands.iter_mut() {
        if let Operand::Mem(m) = o {
            m.force_disp32 = disp32;
        }
    }
    Ok(ItemKind::Instr {
        mnemonic,
        operands,
        disp32,
        imm32,
    })
}

fn directive(c: &mut Cursor, word: &str) -> Result<ItemKind, AsmError> {
    let kind = match word {
        ".section" => {
            let name = c.ident()?;
            let mut d = SectionDecl {
                name,
                base: None,
                flags: None,
                nobits: None,
            };
            while let Some(key) = c.next() {
                match key {
                    Tok::Ident(k) if k == "base" => {
                        c.expect('=')?;
                        d.base = Some(Address(c.number()? as u64));
                    }
                    Tok::Ident(k) if k == "flags" => {
                        c.expect('=')?;
                        d.flags = Some(c.ident()?);
                    }
                    Tok::Ident(k) if k == "nobits" => d.nobits = Some(true),
                    Tok::Ident(k) if k == "progbits" => d.nobits = Some(false),
                    _ => return Err(c.err("bad section attribute")),
                }
            }
            return Ok(ItemKind::Section(d));
        }
        ".entry" => ItemKind::Entry(c.expr()?),
        ".func" => ItemKind::Func(c.ident()?),
        ".endfunc" => ItemKind::EndFunc,
        ".slot" => {
            let function = c.ident()?;
            c.expect(',')?;
            let name = c.ident()?;
            c.expect(',')?;
            let offset = c.number()?;
            if offset <= 0 {
                return Err(c.err("slot offset must be positive"));
            }
            ItemKind::Slot {
                function,
                name,
                offset: offset as u64,
            }
        }
        ".set" => {
            let name = c.ident()?;
            c.expect(',')?;
            ItemKind::Set {
                name,
                value: c.expr()?,
            }
        }
        ".size" => {
            let name = c.ident()?;
            c.expect(',')?;
            let size = c.number()?;
            if size < 0 {
                return Err(c.err("negative size"));
            }
            ItemKind::Size {
                name,
                size: size as u64,
            }
        }
        ".byte" => {
            let vals = c.expr_list()?;
            let mut bytes = Vec::new();
            for v in vals {
                if v.plus.is_some() || v.minus.is_some() || !(-128..=255).contains(&v.constant) {
                    return Err(c.err(".byte takes values in -128..=255"));
                }
                bytes.push(v.constant as u8);
            }
            return Ok(ItemKind::Bytes(bytes));
        }
        ".long" | ".quad" => {
            let width = if word == ".long" { 4 } else { 8 };
            return Ok(ItemKind::Data {
                width,
                values: c.expr_list()?,
            });
        }
        ".zero" => {
            let n = c.number()?;
            if n < 0 {
                return Err(c.err("negative size"));
            }
            ItemKind::Zero(n as u64)
        }
        ".ascii" | ".asciz" => {
            let Some(Tok::Str(mut s)) = c.next() else {
                return Err(c.err("expected a string"));
            };
            if word == ".asciz" {
                s.push(0);
            }
            ItemKind::Bytes(s)
        }
        _ => {
            return Err(AsmError::UnknownDirective {
                line: c.line,
                name: word.into(),
            })
        }
    };
    c.finish()?;
    Ok(kind)
}
