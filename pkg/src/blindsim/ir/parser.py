"""Lexer and recursive-descent parser for the mini source language.

Grammar (EBNF-ish)::

    program   := (global | function)*
    global    := ["blinded"] "var" NAME array? ("=" ginit)? ";"
    array     := "[" NUM "]"
    ginit     := NUM | "-" NUM | "{" NUM ("," NUM)* "}"
    function  := ["blinded"] "fn" NAME "(" [param ("," param)*] ")" block
    param     := ["blinded"] NAME ["[" "]"]
    block     := "{" stmt* "}"
    stmt      := ["blinded"] "var" NAME array? ("=" expr)? ";"
               | NAME "=" expr ";"
               | NAME "[" expr "]" "=" expr ";"
               | "if" "(" expr ")" block ["else" (block | if-stmt)]
               | "while" "(" expr ")" block
               | "return" [expr] ";"
               | "out" expr ";"
               | "free" "(" expr ")" ";"
               | NAME "(" args ")" ";"
    expr      := binary operators with C precedence:
                 unary - ! ~  >  *  >  + -  >  << >>  >  < <= > >=
                 >  == !=  >  &  >  ^  >  |
    primary   := NUM | NAME | NAME "[" expr "]" | NAME "(" args ")"
               | "declassify" "(" expr ")" | "malloc" "(" expr ")"
               | "bmalloc" "(" expr ")" | "(" expr ")"

``//`` and ``/* */`` comments are skipped.  There is no ``&&``/``||``
(short-circuit evaluation would introduce hidden branches) and no division.
"""

from __future__ import annotations

from . import nodes as N


class ParseError(Exception):
    """Raised on malformed source; formats as file:line:col: error message."""

    def __init__(self, filename: str, line: int, col: int, message: str):
        self.filename = filename
        self.line = line
        self.col = col
        self.message = message
        super().__init__(f"{filename}:{line}:{col}: error E_PARSE {message}")


KEYWORDS = {
    "var", "blinded", "fn", "if", "else", "while", "return", "out",
    "free", "declassify", "malloc", "bmalloc",
}

# Multi-character operators first so the lexer prefers the longest match.
OPERATORS = [
    "<<", ">>", "<=", ">=", "==", "!=",
    "+", "-", "*", "<", ">", "&", "^", "|", "!", "~",
    "=", "(", ")", "{", "}", "[", "]", ",", ";",
]


class Token:
    __slots__ = ("kind", "text", "value", "line", "col")

    def __init__(self, kind, text, value, line, col):
        self.kind = kind      # 'num' | 'name' | 'kw' | 'op' | 'eof'
        self.text = text
        self.value = value
        self.line = line
        self.col = col

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Token({self.kind},{self.text!r}@{self.line}:{self.col})"


def tokenize(src: str, filename: str = "<input>") -> list[Token]:
    toks: list[Token] = []
    i, n = 0, len(src)
    line, col = 1, 1

    def advance(k: int):
        nonlocal i, line, col
        for _ in range(k):
            if i < n and src[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        c = src[i]
        if c in " \t\r\n":
            advance(1)
            continue
        if src.startswith("//", i):
            j = src.find("\n", i)
            advance((j - i) if j != -1 else (n - i))
            continue
        if src.startswith("/*", i):
            j = src.find("*/", i + 2)
            if j == -1:
                raise ParseError(filename, line, col, "unterminated block comment")
            advance(j + 2 - i)
            continue
        if c.isdigit():
            start, sl, sc = i, line, col
            if src.startswith("0x", i) or src.startswith("0X", i):
                j = i + 2
                while j < n and src[j] in "0123456789abcdefABCDEF":
                    j += 1
                if j == i + 2:
                    raise ParseError(filename, sl, sc, "malformed hex literal")
                text = src[start:j]
                val = int(text, 16)
            else:
                j = i
                while j < n and src[j].isdigit():
                    j += 1
                text = src[start:j]
                val = int(text, 10)
            advance(j - i)
            toks.append(Token("num", text, val, sl, sc))
            continue
        if c.isalpha() or c == "_":
            start, sl, sc = i, line, col
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            text = src[start:j]
            advance(j - i)
            kind = "kw" if text in KEYWORDS else "name"
            toks.append(Token(kind, text, None, sl, sc))
            continue
        for op in OPERATORS:
            if src.startswith(op, i):
                toks.append(Token("op", op, None, line, col))
                advance(len(op))
                break
        else:
            if c in "&|" and src.startswith(c * 2, i):
                raise ParseError(filename, line, col,
                                 f"'{c*2}' is not supported (no short-circuit operators)")
            raise ParseError(filename, line, col, f"unexpected character {c!r}")
    toks.append(Token("eof", "", None, line, col))
    return toks


# Binary operator precedence, loosest binds last. Each tier is left-assoc.
_PRECEDENCE = [
    ["|"],
    ["^"],
    ["&"],
    ["==", "!="],
    ["<", "<=", ">", ">="],
    ["<<", ">>"],
    ["+", "-"],
    ["*"],
]


class Parser:
    def __init__(self, src: str, filename: str = "<input>"):
        self.filename = filename
        self.toks = tokenize(src, filename)
        self.pos = 0

    # -- token helpers ----------------------------------------------------

    @property
    def cur(self) -> Token:
        return self.toks[self.pos]

    def _err(self, message: str, tok: Token | None = None) -> ParseError:
        t = tok or self.cur
        return ParseError(self.filename, t.line, t.col, message)

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        t = self.cur
        if t.kind == kind and (text is None or t.text == text):
            self.pos += 1
            return t
        return None

    def expect(self, kind: str, text: str | None = None) -> Token:
        t = self.accept(kind, text)
        if t is None:
            want = text if text is not None else kind
            raise self._err(f"expected {want!r}, found {self.cur.text!r}")
        return t

    # -- top level ---------------------------------------------------------

    def parse(self) -> N.Program:
        prog = N.Program(filename=self.filename, line=1, col=1)
        seen: set[str] = set()
        while self.cur.kind != "eof":
            blinded = self.accept("kw", "blinded") is not None
            if self.cur.kind == "kw" and self.cur.text == "var":
                g = self._global(blinded)
                if g.name in seen:
                    raise self._err(f"duplicate global '{g.name}'")
                seen.add(g.name)
                prog.globals.append(g)
            elif self.cur.kind == "kw" and self.cur.text == "fn":
                f = self._function(blinded)
                if f.name in seen:
                    raise self._err(f"duplicate definition of '{f.name}'")
                seen.add(f.name)
                prog.functions.append(f)
            else:
                raise self._err("expected 'var' or 'fn' at top level")
        return prog

    def _global(self, blinded: bool) -> N.GlobalVar:
        kw = self.expect("kw", "var")
        name = self.expect("name").text
        size = None
        if self.accept("op", "["):
            size = self.expect("num").value
            self.expect("op", "]")
            if size <= 0:
                raise self._err("array size must be positive", kw)
        init = None
        if self.accept("op", "="):
            if self.accept("op", "{"):
                vals = [self._const()]
                while self.accept("op", ","):
                    vals.append(self._const())
                self.expect("op", "}")
                if size is None:
                    raise self._err("brace initializer on scalar", kw)
                if len(vals) > size:
                    raise self._err("too many initializer values", kw)
                init = vals
            else:
                init = self._const()
        self.expect("op", ";")
        return N.GlobalVar(name=name, blinded=blinded, size=size, init=init,
                           line=kw.line, col=kw.col)

    def _const(self) -> int:
        neg = self.accept("op", "-") is not None
        v = self.expect("num").value
        return -v if neg else v

    def _function(self, blinded: bool) -> N.Function:
        kw = self.expect("kw", "fn")
        name = self.expect("name").text
        self.expect("op", "(")
        params: list[N.Param] = []
        if not self.accept("op", ")"):
            while True:
                pb = self.accept("kw", "blinded") is not None
                pt = self.expect("name")
                is_arr = False
                if self.accept("op", "["):
                    self.expect("op", "]")
                    is_arr = True
                if any(p.name == pt.text for p in params):
                    raise self._err(f"duplicate parameter '{pt.text}'", pt)
                params.append(N.Param(name=pt.text, blinded=pb, is_array=is_arr,
                                      line=pt.line, col=pt.col))
                if not self.accept("op", ","):
                    break
            self.expect("op", ")")
        body = self._block()
        return N.Function(name=name, blinded=blinded, params=params, body=body,
                          line=kw.line, col=kw.col)

    # -- statements ----------------------------------------------------------

    def _block(self) -> list[N.Stmt]:
        self.expect("op", "{")
        stmts: list[N.Stmt] = []
        while not self.accept("op", "}"):
            if self.cur.kind == "eof":
                raise self._err("unterminated block")
            stmts.append(self._stmt())
        return stmts

    def _stmt(self) -> N.Stmt:
        t = self.cur
        if t.kind == "kw":
            if t.text in ("blinded", "var"):
                return self._vardecl()
            if t.text == "if":
                return self._if()
            if t.text == "while":
                self.pos += 1
                self.expect("op", "(")
                cond = self._expr()
                self.expect("op", ")")
                body = self._block()
                return N.While(cond=cond, body=body, line=t.line, col=t.col)
            if t.text == "return":
                self.pos += 1
                value = None
                if not (self.cur.kind == "op" and self.cur.text == ";"):
                    value = self._expr()
                self.expect("op", ";")
                return N.Return(value=value, line=t.line, col=t.col)
            if t.text == "out":
                self.pos += 1
                value = self._expr()
                self.expect("op", ";")
                return N.Out(value=value, line=t.line, col=t.col)
            if t.text == "free":
                self.pos += 1
                self.expect("op", "(")
                target = self._expr()
                self.expect("op", ")")
                self.expect("op", ";")
                return N.Free(target=target, line=t.line, col=t.col)
            raise self._err(f"unexpected keyword '{t.text}'")
        if t.kind == "name":
            nxt = self.toks[self.pos + 1]
            if nxt.kind == "op" and nxt.text == "=":
                self.pos += 2
                value = self._expr()
                self.expect("op", ";")
                return N.Assign(name=t.text, value=value, line=t.line, col=t.col)
            if nxt.kind == "op" and nxt.text == "[":
                # Could be a store or (illegal as a statement) a load.
                self.pos += 2
                index = self._expr()
                self.expect("op", "]")
                self.expect("op", "=")
                value = self._expr()
                self.expect("op", ";")
                return N.StoreIdx(name=t.text, index=index, value=value,
                                  line=t.line, col=t.col)
            if nxt.kind == "op" and nxt.text == "(":
                call = self._primary()
                if not isinstance(call, N.Call):
                    raise self._err("only calls may be used as statements", t)
                self.expect("op", ";")
                return N.ExprStmt(call=call, line=t.line, col=t.col)
            raise self._err(f"expected statement, found '{t.text}'")
        raise self._err(f"expected statement, found {t.text!r}")

    def _vardecl(self) -> N.VarDecl:
        blinded = self.accept("kw", "blinded") is not None
        kw = self.expect("kw", "var")
        name = self.expect("name").text
        size = None
        if self.accept("op", "["):
            size = self.expect("num").value
            self.expect("op", "]")
            if size <= 0:
                raise self._err("array size must be positive", kw)
        init = None
        if self.accept("op", "="):
            if size is not None:
                raise self._err("local arrays cannot take initializers", kw)
            init = self._expr()
        self.expect("op", ";")
        return N.VarDecl(name=name, blinded=blinded, size=size, init=init,
                         line=kw.line, col=kw.col)

    def _if(self) -> N.If:
        t = self.expect("kw", "if")
        self.expect("op", "(")
        cond = self._expr()
        self.expect("op", ")")
        then = self._block()
        els: list[N.Stmt] = []
        if self.accept("kw", "else"):
            if self.cur.kind == "kw" and self.cur.text == "if":
                els = [self._if()]
            else:
                els = self._block()
        return N.If(cond=cond, then=then, els=els, line=t.line, col=t.col)

    # -- expressions ---------------------------------------------------------

    def _expr(self, tier: int = 0) -> N.Expr:
        if tier >= len(_PRECEDENCE):
            return self._unary()
        left = self._expr(tier + 1)
        ops = _PRECEDENCE[tier]
        while self.cur.kind == "op" and self.cur.text in ops:
            op = self.cur
            self.pos += 1
            right = self._expr(tier + 1)
            left = N.Binary(op=op.text, left=left, right=right,
                            line=op.line, col=op.col)
        return left

    def _unary(self) -> N.Expr:
        t = self.cur
        if t.kind == "op" and t.text in ("-", "!", "~"):
            self.pos += 1
            operand = self._unary()
            if t.text == "-" and isinstance(operand, N.Num):
                return N.Num(value=-operand.value, line=t.line, col=t.col)
            return N.Unary(op=t.text, operand=operand, line=t.line, col=t.col)
        return self._primary()

    def _primary(self) -> N.Expr:
        t = self.cur
        if t.kind == "num":
            self.pos += 1
            return N.Num(value=t.value, line=t.line, col=t.col)
        if t.kind == "op" and t.text == "(":
            self.pos += 1
            e = self._expr()
            self.expect("op", ")")
            return e
        if t.kind == "kw" and t.text == "declassify":
            self.pos += 1
            self.expect("op", "(")
            e = self._expr()
            self.expect("op", ")")
            return N.Declassify(operand=e, line=t.line, col=t.col)
        if t.kind == "kw" and t.text in ("malloc", "bmalloc"):
            self.pos += 1
            self.expect("op", "(")
            e = self._expr()
            self.expect("op", ")")
            return N.AllocExpr(blinded=(t.text == "bmalloc"), size=e,
                               line=t.line, col=t.col)
        if t.kind == "name":
            self.pos += 1
            if self.accept("op", "["):
                idx = self._expr()
                self.expect("op", "]")
                return N.IndexRef(name=t.text, index=idx, line=t.line, col=t.col)
            if self.accept("op", "("):
                args: list[N.Expr] = []
                if not self.accept("op", ")"):
                    args.append(self._expr())
                    while self.accept("op", ","):
                        args.append(self._expr())
                    self.expect("op", ")")
                return N.Call(name=t.text, args=args, line=t.line, col=t.col)
            return N.VarRef(name=t.text, line=t.line, col=t.col)
        raise self._err(f"expected expression, found {t.text!r}")


def parse(src: str, filename: str = "<input>") -> N.Program:
    return Parser(src, filename).parse()
