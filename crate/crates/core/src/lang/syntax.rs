//! Lexer, AST and recursive-descent parser for `main.app` files.

use std::fmt;

use super::LangError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
}

impl fmt::Display for BinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinOp::Or => "or",
            BinOp::And => "and",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Lit(Literal),
    /// A bare identifier; only `__return__` is meaningful.
    Var(String),
    /// `app_state.NAME`
    Register(String),
    /// `TARGET.method(args)`
    Method {
        target: String,
        method: String,
        args: Vec<Expr>,
    },
    /// `name(args)`
    Call {
        name: String,
        args: Vec<Expr>,
    },
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignOp {
    Set,
    Add,
    Sub,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    If {
        branches: Vec<(Expr, Vec<Stmt>)>,
        otherwise: Option<Vec<Stmt>>,
        span: Span,
    },
    Assign {
        register: String,
        op: AssignOp,
        value: Expr,
        span: Span,
    },
    Expr(Expr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeName {
    Bool,
    Int,
    Real,
    Str,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceLine {
    pub instance: String,
    pub kind: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncheckedDecl {
    pub name: String,
    pub params: Vec<(String, TypeName)>,
    pub ret: TypeName,
    pub posts: Vec<Expr>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub devices: Vec<DeviceLine>,
    pub unchecked: Vec<UncheckedDecl>,
    pub invariant: Expr,
    pub iteration: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Real(f64),
    Str(String),
    Punct(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(i) => write!(f, "`{i}`"),
            Tok::Real(r) => write!(f, "`{r}`"),
            Tok::Str(s) => write!(f, "{s:?}"),
            Tok::Punct(p) => write!(f, "`{p}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

const LOOP_KEYWORDS: [&str; 5] = ["while", "for", "loop", "def", "lambda"];

// Longest first so that `<=` wins over `<`.
const PUNCT: [&str; 20] = [
    "->", "==", "!=", "<=", ">=", "+=", "-=", "(", ")", "{", "}", ".", ",", ":", ";", "=", "+",
    "-", "*", "<",
];

fn lex(src: &str) -> Result<Vec<(Tok, Span)>, LangError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            if LOOP_KEYWORDS.contains(&word.as_str()) {
                return Err(LangError::Unsupported {
                    span,
                    construct: word,
                });
            }
            out.push((Tok::Ident(word), span));
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let mut is_real = false;
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                is_real = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let text: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            let tok = if is_real {
                Tok::Real(
                    text.parse()
                        .map_err(|_| LangError::syntax(span, "bad number"))?,
                )
            } else {
                Tok::Int(
                    text.parse()
                        .map_err(|_| LangError::syntax(span, "integer literal too large"))?,
                )
            };
            out.push((tok, span));
            continue;
        }
        if c == '"' {
            let mut s = String::new();
            i += 1;
            col += 1;
            loop {
                match chars.get(i) {
                    None | Some('\n') => {
                        return Err(LangError::syntax(span, "unterminated string literal"))
                    }
                    Some('"') => {
                        i += 1;
                        col += 1;
                        break;
                    }
                    Some('\\') => {
                        let esc = chars
                            .get(i + 1)
                            .ok_or_else(|| LangError::syntax(span, "unterminated string"))?;
                        s.push(match esc {
                            'n' => '\n',
                            't' => '\t',
                            other => *other,
                        });
                        i += 2;
                        col += 2;
                    }
                    Some(ch) => {
                        s.push(*ch);
                        i += 1;
                        col += 1;
                    }
                }
            }
            out.push((Tok::Str(s), span));
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match PUNCT
            .iter()
            .chain(std::iter::once(&">"))
            .find(|p| rest.starts_with(**p))
        {
            Some(p) => {
                i += p.len();
                col += p.len() as u32;
                out.push((Tok::Punct(p), span));
            }
            None => {
                return Err(LangError::syntax(
                    span,
                    format!("unexpected character {c:?}"),
                ))
            }
        }
    }
    out.push((Tok::Eof, Span { line, col }));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == w)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.is_word(w) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn unexpected(&self, wanted: &str) -> LangError {
        LangError::syntax(
            self.span(),
            format!("expected {wanted}, found {}", self.peek()),
        )
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), LangError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{p}`")))
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), LangError> {
        if self.eat_word(w) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{w}`")))
        }
    }

    fn ident(&mut self) -> Result<String, LangError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected("an identifier")),
        }
    }

    fn program(&mut self) -> Result<Program, LangError> {
        let mut devices = Vec::new();
        let mut unchecked = Vec::new();
        loop {
            if self.is_word("device") {
                let span = self.span();
                self.bump();
                let instance = self.ident()?;
                self.expect_punct(":")?;
                let kind = self.ident()?;
                self.expect_punct(";")?;
                devices.push(DeviceLine {
                    instance,
                    kind,
                    span,
                });
            } else if self.is_word("fn") {
                unchecked.push(self.unchecked_decl()?);
            } else {
                break;
            }
        }
        self.expect_word("invariant")?;
        self.expect_punct(":")?;
        let invariant = self.expr()?;
        self.eat_punct(";");
        self.expect_word("iteration")?;
        self.expect_punct(":")?;
        let iteration = self.block()?;
        if *self.peek() != Tok::Eof {
            return Err(self.unexpected("end of input"));
        }
        Ok(Program {
            devices,
            unchecked,
            invariant,
            iteration,
        })
    }

    fn type_name(&mut self) -> Result<TypeName, LangError> {
        let span = self.span();
        Ok(match self.ident()?.as_str() {
            "bool" => TypeName::Bool,
            "int" => TypeName::Int,
            "real" | "float" => TypeName::Real,
            "str" => TypeName::Str,
            "none" | "None" => TypeName::None,
            other => return Err(LangError::syntax(span, format!("unknown type `{other}`"))),
        })
    }

    fn unchecked_decl(&mut self) -> Result<UncheckedDecl, LangError> {
        self.expect_word("fn")?;
        let span = self.span();
        let name = self.ident()?;
        if !name.starts_with("unchecked") {
            return Err(LangError::UncheckedName { span, name });
        }
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                let p = self.ident()?;
                self.expect_punct(":")?;
                let t = self.type_name()?;
                params.push((p, t));
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        if !self.is_punct("->") {
            return Err(LangError::syntax(
                self.span(),
                format!("unchecked function `{name}` needs an explicit return type"),
            ));
        }
        self.bump();
        let ret = self.type_name()?;
        let mut posts = Vec::new();
        if self.eat_punct("{") {
            while !self.eat_punct("}") {
                self.expect_word("post")?;
                self.expect_punct(":")?;
                posts.push(self.expr()?);
                self.eat_punct(";");
            }
        } else {
            self.expect_punct(";")?;
        }
        Ok(UncheckedDecl {
            name,
            params,
            ret,
            posts,
            span,
        })
    }

    fn block(&mut self) -> Result<Vec<Stmt>, LangError> {
        self.expect_punct("{")?;
        let mut stmts = Vec::new();
        while !self.eat_punct("}") {
            if *self.peek() == Tok::Eof {
                return Err(self.unexpected("`}`"));
            }
            stmts.push(self.stmt()?);
        }
        Ok(stmts)
    }

    fn stmt(&mut self) -> Result<Stmt, LangError> {
        let span = self.span();
        if self.eat_word("if") {
            let mut branches = vec![(self.expr()?, self.block()?)];
            let mut otherwise = None;
            loop {
                if self.eat_word("elif") {
                    branches.push((self.expr()?, self.block()?));
                } else if self.eat_word("else") {
                    otherwise = Some(if self.is_word("if") {
                        vec![self.stmt()?]
                    } else {
                        self.block()?
                    });
                    break;
                } else {
                    break;
                }
            }
            return Ok(Stmt::If {
                branches,
                otherwise,
                span,
            });
        }
        if self.is_word("app_state") && *self.peek_at(1) == Tok::Punct(".") {
            let is_assign = matches!(self.peek_at(3), Tok::Punct("=" | "+=" | "-="));
            if is_assign {
                self.bump();
                self.bump();
                let register = self.ident()?;
                let op = match self.bump() {
                    Tok::Punct("=") => AssignOp::Set,
                    Tok::Punct("+=") => AssignOp::Add,
                    _ => AssignOp::Sub,
                };
                let value = self.expr()?;
                self.eat_punct(";");
                return Ok(Stmt::Assign {
                    register,
                    op,
                    value,
                    span,
                });
            }
        }
        let e = self.expr()?;
        if !matches!(e.kind, ExprKind::Method { .. } | ExprKind::Call { .. }) {
            return Err(LangError::syntax(
                span,
                "only assignments, device calls and unchecked calls can be statements",
            ));
        }
        self.eat_punct(";");
        Ok(Stmt::Expr(e))
    }

    fn expr(&mut self) -> Result<Expr, LangError> {
        self.or_expr()
    }

    fn binary(op: BinOp, l: Expr, r: Expr) -> Expr {
        let span = l.span;
        Expr {
            kind: ExprKind::Binary(op, Box::new(l), Box::new(r)),
            span,
        }
    }

    fn or_expr(&mut self) -> Result<Expr, LangError> {
        let mut l = self.and_expr()?;
        while self.eat_word("or") {
            let r = self.and_expr()?;
            l = Self::binary(BinOp::Or, l, r);
        }
        Ok(l)
    }

    fn and_expr(&mut self) -> Result<Expr, LangError> {
        let mut l = self.not_expr()?;
        while self.eat_word("and") {
            let r = self.not_expr()?;
            l = Self::binary(BinOp::And, l, r);
        }
        Ok(l)
    }

    fn not_expr(&mut self) -> Result<Expr, LangError> {
        let span = self.span();
        if self.eat_word("not") {
            let e = self.not_expr()?;
            return Ok(Expr {
                kind: ExprKind::Unary(UnOp::Not, Box::new(e)),
                span,
            });
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> Result<Expr, LangError> {
        let l = self.add_expr()?;
        let op = match self.peek() {
            Tok::Punct("==") => BinOp::Eq,
            Tok::Punct("!=") => BinOp::Ne,
            Tok::Punct("<") => BinOp::Lt,
            Tok::Punct("<=") => BinOp::Le,
            Tok::Punct(">") => BinOp::Gt,
            Tok::Punct(">=") => BinOp::Ge,
            _ => return Ok(l),
        };
        self.bump();
        let r = self.add_expr()?;
        if matches!(
            self.peek(),
            Tok::Punct("==" | "!=" | "<" | "<=" | ">" | ">=")
        ) {
            return Err(LangError::syntax(
                self.span(),
                "chained comparisons are not supported",
            ));
        }
        Ok(Self::binary(op, l, r))
    }

    fn add_expr(&mut self) -> Result<Expr, LangError> {
        let mut l = self.mul_expr()?;
        loop {
            let op = if self.eat_punct("+") {
                BinOp::Add
            } else if self.eat_punct("-") {
                BinOp::Sub
            } else {
                return Ok(l);
            };
            let r = self.mul_expr()?;
            l = Self::binary(op, l, r);
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, LangError> {
        let mut l = self.unary_expr()?;
        while self.eat_punct("*") {
            let r = self.unary_expr()?;
            l = Self::binary(BinOp::Mul, l, r);
        }
        Ok(l)
    }

    fn unary_expr(&mut self) -> Result<Expr, LangError> {
        let span = self.span();
        if self.eat_punct("-") {
            let e = self.unary_expr()?;
            return Ok(Expr {
                kind: ExprKind::Unary(UnOp::Neg, Box::new(e)),
                span,
            });
        }
        self.primary()
    }

    fn args(&mut self) -> Result<Vec<Expr>, LangError> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        if !self.is_punct(")") {
            loop {
                args.push(self.expr()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        Ok(args)
    }

    fn primary(&mut self) -> Result<Expr, LangError> {
        let span = self.span();
        let kind = match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                ExprKind::Lit(Literal::Int(i))
            }
            Tok::Real(r) => {
                self.bump();
                ExprKind::Lit(Literal::Real(r))
            }
            Tok::Str(s) => {
                self.bump();
                ExprKind::Lit(Literal::Str(s))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                return Ok(e);
            }
            Tok::Ident(word) => {
                self.bump();
                match word.as_str() {
                    "true" | "True" => ExprKind::Lit(Literal::Bool(true)),
                    "false" | "False" => ExprKind::Lit(Literal::Bool(false)),
                    "app_state" => {
                        self.expect_punct(".")?;
                        ExprKind::Register(self.ident()?)
                    }
                    _ if self.is_punct(".") => {
                        self.bump();
                        let method = self.ident()?;
                        let args = self.args()?;
                        ExprKind::Method {
                            target: word,
                            method,
                            args,
                        }
                    }
                    _ if self.is_punct("(") => {
                        let args = self.args()?;
                        ExprKind::Call { name: word, args }
                    }
                    _ => ExprKind::Var(word),
                }
            }
            _ => return Err(self.unexpected("an expression")),
        };
        Ok(Expr { kind, span })
    }
}

pub fn parse_program(text: &str) -> Result<Program, LangError> {
    let toks = lex(text)?;
    Parser { toks, pos: 0 }.program()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const PAPER_EXAMPLE: &str = r#"
device BINARY_SENSOR: binary;
device SWITCH: switch;

# The switch should be on when the binary sensor is on or when INT_0 == 42,
# off otherwise.
invariant:
    ((BINARY_SENSOR.is_on() or app_state.INT_0 == 42) and SWITCH.is_on())
    or (not BINARY_SENSOR.is_on() and not SWITCH.is_on())

iteration: {
    if BINARY_SENSOR.is_on() or app_state.INT_0 == 42 {
        SWITCH.on();
    } else {
        SWITCH.off();
    }
}
"#;

    #[test]
    fn paper_example_parses() {
        let p = parse_program(PAPER_EXAMPLE).unwrap();
        assert_eq!(p.devices.len(), 2);
        assert_eq!(p.iteration.len(), 1);
        match &p.iteration[0] {
            Stmt::If {
                branches,
                otherwise,
                ..
            } => {
                assert_eq!(branches.len(), 1);
                assert!(otherwise.is_some());
            }
            other => panic!("expected if, got {other:?}"),
        }
        assert!(matches!(
            p.invariant.kind,
            ExprKind::Binary(BinOp::Or, _, _)
        ));
    }

    #[test]
    fn trivial_program() {
        let p = parse_program("invariant: true  iteration: {}").unwrap();
        assert!(p.iteration.is_empty());
        assert_eq!(p.invariant.kind, ExprKind::Lit(Literal::Bool(true)));
    }

    #[test]
    fn loops_are_rejected() {
        let err = parse_program("invariant: true iteration: { while true { } }").unwrap_err();
        match err {
            LangError::Unsupported { construct, span } => {
                assert_eq!(construct, "while");
                assert_eq!(span, Span { line: 1, col: 30 });
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_program("# for\ninvariant: true iteration: { for }"),
            Err(LangError::Unsupported { .. })
        ));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err =
            parse_program("invariant: true\niteration: {\n  app_state.INT_0 = ;\n}").unwrap_err();
        match err {
            LangError::Syntax { span, .. } => assert_eq!(span.line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_program("invariant: 1 < 2 < 3 iteration: {}").is_err());
        assert!(parse_program("invariant: true iteration: { 1 + 2; }").is_err());
        assert!(parse_program("invariant: \"abc iteration: {}").is_err());
    }

    #[test]
    fn unchecked_declarations() {
        let src = r#"
fn unchecked_get() -> int {
    post: __return__ > 0;
    post: __return__ != 3
}
fn unchecked_send(msg: str, level: int) -> none;
invariant: true
iteration: { unchecked_send("hi", unchecked_get()); }
"#;
        let p = parse_program(src).unwrap();
        assert_eq!(p.unchecked.len(), 2);
        assert_eq!(p.unchecked[0].posts.len(), 2);
        assert_eq!(p.unchecked[0].ret, TypeName::Int);
        assert_eq!(p.unchecked[1].params.len(), 2);
        assert_eq!(p.unchecked[1].ret, TypeName::None);

        assert!(matches!(
            parse_program("fn get() -> int; invariant: true iteration: {}"),
            Err(LangError::UncheckedName { .. })
        ));
        assert!(parse_program("fn unchecked_get(); invariant: true iteration: {}").is_err());
    }

    #[test]
    fn elif_chains_and_compound_assignment() {
        let src = "invariant: true iteration: {
            if app_state.INT_0 > 1 { app_state.INT_0 += 1 }
            elif app_state.INT_0 < -1 { app_state.INT_0 -= 2 * app_state.INT_1 }
            else if true { app_state.STR_0 = \"x\" }
        }";
        let p = parse_program(src).unwrap();
        match &p.iteration[0] {
            Stmt::If {
                branches,
                otherwise,
                ..
            } => {
                assert_eq!(branches.len(), 2);
                assert!(matches!(otherwise.as_deref(), Some([Stmt::If { .. }])));
            }
            other => panic!("{other:?}"),
        }
    }
}
