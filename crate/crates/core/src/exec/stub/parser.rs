use std::rc::Rc;

use super::lexer::Tok;
use super::StubError;

#[derive(Debug, Clone, PartialEq)]
pub enum Lit {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    FloorDiv,
    Mod,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    In,
    NotIn,
    Is,
    IsNot,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(Lit),
    Name(String),
    List(Vec<Expr>),
    Tuple(Vec<Expr>),
    Dict(Vec<(Expr, Expr)>),
    Set(Vec<Expr>),
    ListComp {
        elt: Box<Expr>,
        target: Box<Target>,
        iter: Box<Expr>,
        cond: Option<Box<Expr>>,
    },
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Compare(Box<Expr>, Vec<(CmpOp, Expr)>),
    IfExp {
        cond: Box<Expr>,
        then: Box<Expr>,
        other: Box<Expr>,
    },
    Call {
        func: Box<Expr>,
        args: Vec<Expr>,
        kwargs: Vec<(String, Expr)>,
    },
    Attr(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    Slice(Box<Expr>, Option<Box<Expr>>, Option<Box<Expr>>, Option<Box<Expr>>),
    Lambda(Rc<FuncDef>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Name(String),
    Index(Expr, Expr),
    Tuple(Vec<Target>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuncDef {
    pub name: String,
    pub params: Vec<(String, Option<Expr>)>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Expr(Expr),
    Assign(Vec<Target>, Expr),
    AugAssign(Target, BinOp, Expr),
    Return(Option<Expr>),
    If(Vec<(Expr, Vec<Stmt>)>, Option<Vec<Stmt>>),
    While(Expr, Vec<Stmt>),
    For(Target, Expr, Vec<Stmt>),
    Def(Rc<FuncDef>),
    Raise(Option<Expr>),
    Assert(Expr, Option<Expr>),
    Pass,
    Break,
    Continue,
}

pub fn parse(tokens: Vec<(Tok, usize)>) -> Result<Vec<Stmt>, StubError> {
    let mut p = Parser { toks: tokens, pos: 0 };
    let mut out = Vec::new();
    while !p.at(&Tok::Eof) {
        if p.eat(&Tok::Newline) {
            continue;
        }
        out.extend(p.statement()?);
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn line(&self) -> usize {
        self.toks[self.pos].1
    }

    fn at(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn at_op(&self, op: &str) -> bool {
        matches!(self.peek(), Tok::Op(o) if *o == op)
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Name(n) if n == kw)
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.at(t) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.at_op(op) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn err<T>(&self, msg: &str) -> Result<T, StubError> {
        Err(StubError::syntax(self.line(), &format!("{msg} (found {:?})", self.peek())))
    }

    fn expect_op(&mut self, op: &str) -> Result<(), StubError> {
        if self.eat_op(op) {
            Ok(())
        } else {
            self.err(&format!("expected `{op}`"))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), StubError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.err(&format!("expected `{kw}`"))
        }
    }

    fn name(&mut self) -> Result<String, StubError> {
        match self.peek().clone() {
            Tok::Name(n) if !is_keyword(&n) => {
                self.advance();
                Ok(n)
            }
            _ => self.err("expected a name"),
        }
    }

    fn statement(&mut self) -> Result<Vec<Stmt>, StubError> {
        if self.at_kw("def") {
            return Ok(vec![self.def()?]);
        }
        if self.eat_kw("if") {
            let mut branches = vec![];
            let cond = self.expr()?;
            self.expect_op(":")?;
            branches.push((cond, self.block()?));
            let mut other = None;
            loop {
                if self.eat_kw("elif") {
                    let cond = self.expr()?;
                    self.expect_op(":")?;
                    branches.push((cond, self.block()?));
                } else if self.eat_kw("else") {
                    self.expect_op(":")?;
                    other = Some(self.block()?);
                    break;
                } else {
                    break;
                }
            }
            return Ok(vec![Stmt::If(branches, other)]);
        }
        if self.eat_kw("while") {
            let cond = self.expr()?;
            self.expect_op(":")?;
            return Ok(vec![Stmt::While(cond, self.block()?)]);
        }
        if self.eat_kw("for") {
            let target = self.target_list()?;
            self.expect_kw("in")?;
            let iter = self.expr_list()?;
            self.expect_op(":")?;
            return Ok(vec![Stmt::For(target, iter, self.block()?)]);
        }
        let mut stmts = vec![self.simple()?];
        while self.eat_op(";") {
            if self.at(&Tok::Newline) {
                break;
            }
            stmts.push(self.simple()?);
        }
        if !self.eat(&Tok::Newline) && !self.at(&Tok::Eof) {
            return self.err("expected end of line");
        }
        Ok(stmts)
    }

    fn def(&mut self) -> Result<Stmt, StubError> {
        self.expect_kw("def")?;
        let name = self.name()?;
        self.expect_op("(")?;
        let params = self.params(")")?;
        self.expect_op(")")?;
        if self.eat_op("->") {
            self.expr()?;
        }
        self.expect_op(":")?;
        let body = self.block()?;
        Ok(Stmt::Def(Rc::new(FuncDef { name, params, body })))
    }

    fn params(&mut self, close: &str) -> Result<Vec<(String, Option<Expr>)>, StubError> {
        let mut params = Vec::new();
        while !self.at_op(close) {
            let name = self.name()?;
            if close == ")" && self.eat_op(":") {
                self.expr()?;
            }
            let default = if self.eat_op("=") { Some(self.expr()?) } else { None };
            params.push((name, default));
            if !self.eat_op(",") {
                break;
            }
        }
        Ok(params)
    }

    fn block(&mut self) -> Result<Vec<Stmt>, StubError> {
        if !self.eat(&Tok::Newline) {
            // `if x: return y` on one line
            let mut stmts = vec![self.simple()?];
            while self.eat_op(";") {
                if self.at(&Tok::Newline) {
                    break;
                }
                stmts.push(self.simple()?);
            }
            if !self.eat(&Tok::Newline) && !self.at(&Tok::Eof) {
                return self.err("expected end of line");
            }
            return Ok(stmts);
        }
        if !self.eat(&Tok::Indent) {
            return self.err("expected an indented block");
        }
        let mut body = Vec::new();
        while !self.eat(&Tok::Dedent) {
            if self.at(&Tok::Eof) {
                break;
            }
            if self.eat(&Tok::Newline) {
                continue;
            }
            body.extend(self.statement()?);
        }
        Ok(body)
    }

    fn simple(&mut self) -> Result<Stmt, StubError> {
        if self.eat_kw("pass") {
            return Ok(Stmt::Pass);
        }
        if self.eat_kw("break") {
            return Ok(Stmt::Break);
        }
        if self.eat_kw("continue") {
            return Ok(Stmt::Continue);
        }
        if self.eat_kw("return") {
            if self.at(&Tok::Newline) || self.at_op(";") || self.at(&Tok::Eof) {
                return Ok(Stmt::Return(None));
            }
            return Ok(Stmt::Return(Some(self.expr_list()?)));
        }
        if self.eat_kw("raise") {
            if self.at(&Tok::Newline) || self.at(&Tok::Eof) {
                return Ok(Stmt::Raise(None));
            }
            return Ok(Stmt::Raise(Some(self.expr()?)));
        }
        if self.eat_kw("assert") {
            let cond = self.expr()?;
            let msg = if self.eat_op(",") { Some(self.expr()?) } else { None };
            return Ok(Stmt::Assert(cond, msg));
        }
        if self.at_kw("import") || self.at_kw("from") {
            while !self.at(&Tok::Newline) && !self.at(&Tok::Eof) && !self.at_op(";") {
                self.advance();
            }
            return Ok(Stmt::Pass);
        }
        let first = self.expr_list()?;
        for (op, bin) in [
            ("+=", BinOp::Add),
            ("-=", BinOp::Sub),
            ("*=", BinOp::Mul),
            ("/=", BinOp::Div),
            ("//=", BinOp::FloorDiv),
            ("%=", BinOp::Mod),
            ("**=", BinOp::Pow),
        ] {
            if self.eat_op(op) {
                let value = self.expr_list()?;
                return Ok(Stmt::AugAssign(self.to_target(first)?, bin, value));
            }
        }
        if self.at_op(":") {
            // annotated assignment `x: int = 3`
            self.advance();
            self.expr()?;
            if !self.eat_op("=") {
                return Ok(Stmt::Pass);
            }
            let value = self.expr_list()?;
            return Ok(Stmt::Assign(vec![self.to_target(first)?], value));
        }
        if !self.at_op("=") {
            return Ok(Stmt::Expr(first));
        }
        let mut targets = vec![first];
        while self.eat_op("=") {
            targets.push(self.expr_list()?);
        }
        let value = targets.pop().expect("at least two sides");
        let targets = targets
            .into_iter()
            .map(|t| self.to_target(t))
            .collect::<Result<_, _>>()?;
        Ok(Stmt::Assign(targets, value))
    }

    fn to_target(&self, e: Expr) -> Result<Target, StubError> {
        match e {
            Expr::Name(n) => Ok(Target::Name(n)),
            Expr::Index(obj, idx) => Ok(Target::Index(*obj, *idx)),
            Expr::Tuple(items) | Expr::List(items) => Ok(Target::Tuple(
                items
                    .into_iter()
                    .map(|i| self.to_target(i))
                    .collect::<Result<_, _>>()?,
            )),
            _ => self.err("cannot assign to expression"),
        }
    }

    fn target_list(&mut self) -> Result<Target, StubError> {
        let mut items = vec![self.postfix()?];
        while self.eat_op(",") {
            if self.at_kw("in") {
                break;
            }
            items.push(self.postfix()?);
        }
        let e = if items.len() == 1 {
            items.pop().expect("one item")
        } else {
            Expr::Tuple(items)
        };
        self.to_target(e)
    }

    fn expr_list(&mut self) -> Result<Expr, StubError> {
        let first = self.expr()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.at(&Tok::Newline) || self.at_op("=") || self.at_op(")") || self.at_op(":") {
                break;
            }
            items.push(self.expr()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn expr(&mut self) -> Result<Expr, StubError> {
        if self.eat_kw("lambda") {
            let params = self.params(":")?;
            self.expect_op(":")?;
            let body = self.expr()?;
            return Ok(Expr::Lambda(Rc::new(FuncDef {
                name: "<lambda>".into(),
                params,
                body: vec![Stmt::Return(Some(body))],
            })));
        }
        let e = self.or_expr()?;
        if self.at_kw("if") {
            // a conditional expression, not a comprehension filter
            let save = self.pos;
            self.advance();
            let cond = self.or_expr()?;
            if self.eat_kw("else") {
                let other = self.expr()?;
                return Ok(Expr::IfExp {
                    cond: Box::new(cond),
                    then: Box::new(e),
                    other: Box::new(other),
                });
            }
            self.pos = save;
        }
        Ok(e)
    }

    fn or_expr(&mut self) -> Result<Expr, StubError> {
        let mut e = self.and_expr()?;
        while self.eat_kw("or") {
            e = Expr::Or(Box::new(e), Box::new(self.and_expr()?));
        }
        Ok(e)
    }

    fn and_expr(&mut self) -> Result<Expr, StubError> {
        let mut e = self.not_expr()?;
        while self.eat_kw("and") {
            e = Expr::And(Box::new(e), Box::new(self.not_expr()?));
        }
        Ok(e)
    }

    fn not_expr(&mut self) -> Result<Expr, StubError> {
        if self.eat_kw("not") {
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, StubError> {
        let first = self.arith()?;
        let mut rest = Vec::new();
        loop {
            let op = if self.eat_op("==") {
                CmpOp::Eq
            } else if self.eat_op("!=") {
                CmpOp::Ne
            } else if self.eat_op("<=") {
                CmpOp::Le
            } else if self.eat_op(">=") {
                CmpOp::Ge
            } else if self.eat_op("<") {
                CmpOp::Lt
            } else if self.eat_op(">") {
                CmpOp::Gt
            } else if self.eat_kw("in") {
                CmpOp::In
            } else if self.at_kw("not") && matches!(self.toks.get(self.pos + 1), Some((Tok::Name(n), _)) if n == "in") {
                self.advance();
                self.advance();
                CmpOp::NotIn
            } else if self.eat_kw("is") {
                if self.eat_kw("not") {
                    CmpOp::IsNot
                } else {
                    CmpOp::Is
                }
            } else {
                break;
            };
            rest.push((op, self.arith()?));
        }
        if rest.is_empty() {
            Ok(first)
        } else {
            Ok(Expr::Compare(Box::new(first), rest))
        }
    }

    fn arith(&mut self) -> Result<Expr, StubError> {
        let mut e = self.term()?;
        loop {
            let op = if self.eat_op("+") {
                BinOp::Add
            } else if self.eat_op("-") {
                BinOp::Sub
            } else {
                break;
            };
            e = Expr::Bin(op, Box::new(e), Box::new(self.term()?));
        }
        Ok(e)
    }

    fn term(&mut self) -> Result<Expr, StubError> {
        let mut e = self.factor()?;
        loop {
            let op = if self.eat_op("*") {
                BinOp::Mul
            } else if self.eat_op("//") {
                BinOp::FloorDiv
            } else if self.eat_op("/") {
                BinOp::Div
            } else if self.eat_op("%") {
                BinOp::Mod
            } else {
                break;
            };
            e = Expr::Bin(op, Box::new(e), Box::new(self.factor()?));
        }
        Ok(e)
    }

    fn factor(&mut self) -> Result<Expr, StubError> {
        if self.eat_op("-") {
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        if self.eat_op("+") {
            return self.factor();
        }
        let base = self.postfix()?;
        if self.eat_op("**") {
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(self.factor()?)));
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Result<Expr, StubError> {
        let mut e = self.atom()?;
        loop {
            if self.eat_op("(") {
                let mut args = Vec::new();
                let mut kwargs = Vec::new();
                while !self.at_op(")") {
                    let is_kw = matches!(self.peek(), Tok::Name(_))
                        && matches!(self.toks.get(self.pos + 1), Some((Tok::Op("="), _)));
                    if is_kw {
                        let name = self.name()?;
                        self.expect_op("=")?;
                        kwargs.push((name, self.expr()?));
                    } else {
                        let arg = self.expr()?;
                        if self.at_kw("for") {
                            args.push(self.comprehension(arg)?);
                        } else {
                            args.push(arg);
                        }
                    }
                    if !self.eat_op(",") {
                        break;
                    }
                }
                self.expect_op(")")?;
                e = Expr::Call {
                    func: Box::new(e),
                    args,
                    kwargs,
                };
            } else if self.eat_op("[") {
                let lower = if self.at_op(":") { None } else { Some(Box::new(self.expr()?)) };
                if self.eat_op(":") {
                    let upper = if self.at_op("]") || self.at_op(":") { None } else { Some(Box::new(self.expr()?)) };
                    let step = if self.eat_op(":") && !self.at_op("]") { Some(Box::new(self.expr()?)) } else { None };
                    self.expect_op("]")?;
                    e = Expr::Slice(Box::new(e), lower, upper, step);
                } else {
                    self.expect_op("]")?;
                    e = Expr::Index(Box::new(e), lower.expect("index present"));
                }
            } else if self.eat_op(".") {
                let attr = self.name()?;
                e = Expr::Attr(Box::new(e), attr);
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn comprehension(&mut self, elt: Expr) -> Result<Expr, StubError> {
        self.expect_kw("for")?;
        let target = self.target_list()?;
        self.expect_kw("in")?;
        let iter = self.or_expr()?;
        let cond = if self.eat_kw("if") { Some(Box::new(self.or_expr()?)) } else { None };
        Ok(Expr::ListComp {
            elt: Box::new(elt),
            target: Box::new(target),
            iter: Box::new(iter),
            cond,
        })
    }

    fn atom(&mut self) -> Result<Expr, StubError> {
        match self.advance() {
            Tok::Int(i) => Ok(Expr::Lit(Lit::Int(i))),
            Tok::Float(f) => Ok(Expr::Lit(Lit::Float(f))),
            Tok::Str(s) => {
                let mut s = s;
                while let Tok::Str(more) = self.peek().clone() {
                    self.advance();
                    s.push_str(&more);
                }
                Ok(Expr::Lit(Lit::Str(s)))
            }
            Tok::Name(n) => match n.as_str() {
                "True" => Ok(Expr::Lit(Lit::Bool(true))),
                "False" => Ok(Expr::Lit(Lit::Bool(false))),
                "None" => Ok(Expr::Lit(Lit::None)),
                kw if is_keyword(kw) => {
                    self.pos -= 1;
                    self.err("unexpected keyword")
                }
                _ => Ok(Expr::Name(n)),
            },
            Tok::Op("(") => {
                if self.eat_op(")") {
                    return Ok(Expr::Tuple(vec![]));
                }
                let first = self.expr()?;
                if self.at_kw("for") {
                    let comp = self.comprehension(first)?;
                    self.expect_op(")")?;
                    return Ok(comp);
                }
                if self.eat_op(")") {
                    return Ok(first);
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op(")") {
                        break;
                    }
                    items.push(self.expr()?);
                }
                self.expect_op(")")?;
                Ok(Expr::Tuple(items))
            }
            Tok::Op("[") => {
                if self.eat_op("]") {
                    return Ok(Expr::List(vec![]));
                }
                let first = self.expr()?;
                if self.at_kw("for") {
                    let comp = self.comprehension(first)?;
                    self.expect_op("]")?;
                    return Ok(comp);
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op("]") {
                        break;
                    }
                    items.push(self.expr()?);
                }
                self.expect_op("]")?;
                Ok(Expr::List(items))
            }
            Tok::Op("{") => {
                let mut pairs = Vec::new();
                if !self.at_op("}") {
                    let first = self.expr()?;
                    if !self.at_op(":") {
                        let mut items = vec![first];
                        while self.eat_op(",") {
                            if self.at_op("}") {
                                break;
                            }
                            items.push(self.expr()?);
                        }
                        self.expect_op("}")?;
                        return Ok(Expr::Set(items));
                    }
                    self.expect_op(":")?;
                    let v = self.expr()?;
                    pairs.push((first, v));
                    self.eat_op(",");
                }
                while !self.at_op("}") {
                    let k = self.expr()?;
                    self.expect_op(":")?;
                    let v = self.expr()?;
                    pairs.push((k, v));
                    if !self.eat_op(",") {
                        break;
                    }
                }
                self.expect_op("}")?;
                Ok(Expr::Dict(pairs))
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                self.err("unexpected token")
            }
        }
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(
        s,
        "def" | "return" | "if" | "elif" | "else" | "while" | "for" | "in" | "not" | "and" | "or"
            | "pass" | "break" | "continue" | "raise" | "import" | "from" | "lambda" | "is"
            | "assert" | "True" | "False" | "None"
    )
}
