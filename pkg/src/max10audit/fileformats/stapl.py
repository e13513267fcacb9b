"""Test-program scripts: parse, validate, execute, generate.

Covers the slice of the language that programming and verification flows
actually use: NOTE metadata, ACTIONs naming procedure sequences, DATA
blocks, INTEGER scalars and BOOLEAN bit arrays, assignments, FOR/NEXT,
IF...THEN with a single statement, labels and GOTO, IRSCAN/DRSCAN with
CAPTURE and COMPARE, WAIT, STATE, PRINT, EXPORT and EXIT.  Anything
outside that (CALL, floating point, INTEGER arrays, compressed array
initializers) is rejected up front with a clear diagnostic rather than
half-executed.

Execution drives a TapController; every scan appends a tab-separated
trace line (procedure, IR or DR, bit count, data hex).  A COMPARE without
a result variable that mismatches stops the program with exit code 11 at
that scan, which is how verification failures surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..bits import BitVector
from ..tap import TapState
from ..transport import TapController

EXIT_OK = 0
EXIT_VERIFY_FAILED = 11

_STABLE_STATES = {
    "RESET": TapState.TEST_LOGIC_RESET,
    "IDLE": TapState.RUN_TEST_IDLE,
    "DRPAUSE": TapState.PAUSE_DR,
    "IRPAUSE": TapState.PAUSE_IR,
}


class StaplError(Exception):
    """Malformed script or runtime failure."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class StaplUnsupported(StaplError):
    """The script uses a language feature outside the supported subset."""


# -- lexer ----------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # NAME NUMBER STRING PUNCT
    text: str
    value: int | None
    line: int


_PUNCT2 = ("..", "<<", ">>", "==", "!=", "<=", ">=", "&&", "||")
_PUNCT1 = ";,=()[]+-*/%&|^~!<>:"


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        i = 0
        n = len(raw)
        while i < n:
            ch = raw[i]
            if ch in " \t\r":
                i += 1
            elif ch == "'":
                break  # comment to end of line
            elif ch == '"':
                j = raw.find('"', i + 1)
                if j < 0:
                    raise StaplError("unterminated string", lineno)
                tokens.append(Token("STRING", raw[i + 1 : j], None, lineno))
                i = j + 1
            elif ch == "$":
                j = i + 1
                while j < n and raw[j] in "0123456789abcdefABCDEF":
                    j += 1
                if j == i + 1:
                    raise StaplError("empty hex literal", lineno)
                tokens.append(Token("NUMBER", raw[i:j], int(raw[i + 1 : j], 16), lineno))
                i = j
            elif ch == "#":
                j = i + 1
                while j < n and raw[j] in "01":
                    j += 1
                if j == i + 1:
                    raise StaplError("empty binary literal", lineno)
                tokens.append(Token("NUMBER", raw[i:j], int(raw[i + 1 : j], 2), lineno))
                i = j
            elif ch.isdigit():
                j = i
                while j < n and raw[j].isdigit():
                    j += 1
                if j < n and raw[j] == "." and not raw[j : j + 2] == "..":
                    raise StaplUnsupported("floating point is not supported", lineno)
                tokens.append(Token("NUMBER", raw[i:j], int(raw[i:j]), lineno))
                i = j
            elif ch.isalpha() or ch == "_":
                j = i
                while j < n and (raw[j].isalnum() or raw[j] == "_"):
                    j += 1
                tokens.append(Token("NAME", raw[i:j].upper(), None, lineno))
                i = j
            elif raw[i : i + 2] in _PUNCT2:
                tokens.append(Token("PUNCT", raw[i : i + 2], None, lineno))
                i += 2
            elif ch in _PUNCT1:
                tokens.append(Token("PUNCT", ch, None, lineno))
                i += 1
            else:
                raise StaplError(f"unexpected character {ch!r}", lineno)
    return tokens


# -- expressions -----------------------------------------------------------

# (operators, binds-tighter-than-next) from loosest to tightest
_BINARY_LEVELS = (
    ("||",),
    ("&&",),
    ("|",),
    ("^",),
    ("&",),
    ("==", "!="),
    ("<", "<=", ">", ">="),
    ("<<", ">>"),
    ("+", "-"),
    ("*", "/", "%"),
)


@dataclass(frozen=True)
class Expr:
    # op: "num", "var", "slice", "index", "unary:<op>", "bin:<op>"
    op: str
    args: tuple
    line: int


class _Parser:
    def __init__(self, tokens: list[Token], pos: int = 0):
        self.toks = tokens
        self.pos = pos

    def peek(self) -> Token | None:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            last = self.toks[-1].line if self.toks else 0
            raise StaplError("unexpected end of file", last)
        self.pos += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.next()
        if tok.text != text and not (tok.kind == "NAME" and tok.text == text):
            raise StaplError(f"expected {text!r}, found {tok.text!r}", tok.line)
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.pos += 1
            return True
        return False

    # expression parsing (precedence climbing)

    def expression(self, level: int = 0) -> Expr:
        if level == len(_BINARY_LEVELS):
            return self._unary()
        left = self.expression(level + 1)
        while True:
            tok = self.peek()
            if tok is None or tok.kind != "PUNCT" or tok.text not in _BINARY_LEVELS[level]:
                return left
            self.next()
            right = self.expression(level + 1)
            left = Expr(f"bin:{tok.text}", (left, right), tok.line)

    def _unary(self) -> Expr:
        tok = self.peek()
        if tok is not None and tok.kind == "PUNCT" and tok.text in ("-", "~", "!"):
            self.next()
            return Expr(f"unary:{tok.text}", (self._unary(),), tok.line)
        return self._primary()

    def _primary(self) -> Expr:
        tok = self.next()
        if tok.kind == "NUMBER":
            return Expr("num", (tok.value,), tok.line)
        if tok.kind == "PUNCT" and tok.text == "(":
            inner = self.expression()
            self.expect(")")
            return inner
        if tok.kind == "NAME":
            if self.accept("["):
                first = self.expression()
                if self.accept(".."):
                    second = self.expression()
                    self.expect("]")
                    return Expr("slice", (tok.text, first, second), tok.line)
                self.expect("]")
                return Expr("index", (tok.text, first), tok.line)
            return Expr("var", (tok.text,), tok.line)
        raise StaplError(f"expected an expression, found {tok.text!r}", tok.line)


# -- statements ------------------------------------------------------------


@dataclass
class Decl:
    kind: str  # "integer" | "boolean"
    name: str
    size: Expr | None  # boolean arrays only
    init: Expr | None
    line: int


@dataclass
class Assign:
    name: str
    part: tuple | None  # None | ("index", Expr) | ("slice", Expr, Expr)
    expr: Expr
    line: int


@dataclass
class ForStmt:
    var: str
    start: Expr
    stop: Expr
    step: Expr | None
    next_index: int = -1
    line: int = 0


@dataclass
class NextStmt:
    var: str
    for_index: int = -1
    line: int = 0


@dataclass
class IfStmt:
    cond: Expr
    then: object
    line: int


@dataclass
class Goto:
    label: str
    line: int


@dataclass
class Wait:
    amount: Expr
    unit: str  # "USEC" | "MSEC" | "CYCLES"
    line: int


@dataclass
class Scan:
    into_ir: bool
    length: Expr
    data: Expr
    capture: str | None
    compare: tuple | None  # (expected Expr, mask Expr, result name|None)
    line: int


@dataclass
class StateStmt:
    state: str
    line: int


@dataclass
class PrintStmt:
    parts: list  # str | Expr
    line: int


@dataclass
class ExportStmt:
    key: str
    expr: Expr
    line: int


@dataclass
class ExitStmt:
    code: Expr
    line: int


@dataclass
class Procedure:
    name: str
    uses: list[str]
    stmts: list
    labels: dict[str, int]
    line: int


@dataclass
class StaplProgram:
    notes: list[tuple[str, str]] = field(default_factory=list)
    actions: dict[str, list[str]] = field(default_factory=dict)
    data_blocks: dict[str, list[Decl]] = field(default_factory=dict)
    procedures: dict[str, Procedure] = field(default_factory=dict)

    def note(self, key: str) -> str | None:
        for k, v in self.notes:
            if k == key:
                return v
        return None


_UNSUPPORTED_STATEMENTS = {
    "CALL": "CALL is not supported; list multiple procedures in the ACTION instead",
    "REAL": "floating point variables are not supported",
    "PUSH": "the stack statements are not supported",
    "POP": "the stack statements are not supported",
    "DRSTOP": "custom scan end states are not supported",
    "IRSTOP": "custom scan end states are not supported",
    "POSTDR": "scan padding statements are not supported",
    "POSTIR": "scan padding statements are not supported",
    "PREDR": "scan padding statements are not supported",
    "PREIR": "scan padding statements are not supported",
    "TRST": "TRST control is not supported",
    "FREQUENCY": "FREQUENCY is accepted nowhere in this subset",
}


def parse_stapl(text: str) -> StaplProgram:
    toks = tokenize(text)
    p = _Parser(toks)
    prog = StaplProgram()
    while p.peek() is not None:
        tok = p.next()
        if tok.kind != "NAME":
            raise StaplError(f"expected a section keyword, found {tok.text!r}", tok.line)
        if tok.text == "NOTE":
            key = p.next()
            val = p.next()
            if key.kind != "STRING" or val.kind != "STRING":
                raise StaplError("NOTE takes two strings", tok.line)
            p.expect(";")
            prog.notes.append((key.text, val.text))
        elif tok.text == "ACTION":
            name = p.next()
            p.expect("=")
            procs = [p.next().text]
            while p.accept(","):
                procs.append(p.next().text)
                # per-procedure RECOMMENDED/OPTIONAL flags are not modeled
            p.expect(";")
            prog.actions[name.text] = procs
        elif tok.text == "DATA":
            name = p.next()
            p.expect(";")
            decls = []
            while not (p.peek() and p.peek().text == "ENDDATA"):
                decls.append(_parse_decl(p))
            p.expect("ENDDATA")
            p.expect(";")
            prog.data_blocks[name.text] = decls
        elif tok.text == "PROCEDURE":
            proc = _parse_procedure(p, tok.line)
            if proc.name in prog.procedures:
                raise StaplError(f"duplicate procedure {proc.name}", tok.line)
            prog.procedures[proc.name] = proc
        elif tok.text in _UNSUPPORTED_STATEMENTS:
            raise StaplUnsupported(_UNSUPPORTED_STATEMENTS[tok.text], tok.line)
        else:
            raise StaplError(f"unexpected {tok.text!r} at file scope", tok.line)
    _validate(prog)
    return prog


def _parse_decl(p: _Parser) -> Decl:
    tok = p.next()
    if tok.text == "INTEGER":
        name = p.next()
        if p.at("["):
            raise StaplUnsupported("INTEGER arrays are not supported", tok.line)
        init = p.expression() if p.accept("=") else None
        p.expect(";")
        return Decl("integer", name.text, None, init, tok.line)
    if tok.text == "BOOLEAN":
        name = p.next()
        if not p.accept("["):
            raise StaplUnsupported(
                "scalar BOOLEAN variables are not supported; declare a [1] array",
                tok.line,
            )
        size = p.expression()
        p.expect("]")
        init = None
        if p.accept("="):
            nxt = p.peek()
            if nxt is not None and nxt.kind == "NAME" and nxt.text == "ACA":
                raise StaplUnsupported("compressed array initializers are not supported", tok.line)
            init = p.expression()
        p.expect(";")
        return Decl("boolean", name.text, size, init, tok.line)
    raise StaplError(f"expected a declaration, found {tok.text!r}", tok.line)


def _parse_procedure(p: _Parser, line: int) -> Procedure:
    name = p.next()
    uses = []
    if p.accept("USES"):
        uses.append(p.next().text)
        while p.accept(","):
            uses.append(p.next().text)
    p.expect(";")
    stmts: list = []
    labels: dict[str, int] = {}
    while True:
        tok = p.peek()
        if tok is None:
            raise StaplError("missing ENDPROC", line)
        if tok.text == "ENDPROC":
            p.next()
            p.expect(";")
            break
        # NAME ':' is a label for the following statement
        if (
            tok.kind == "NAME"
            and p.pos + 1 < len(p.toks)
            and p.toks[p.pos + 1].text == ":"
        ):
            if tok.text in labels:
                raise StaplError(f"duplicate label {tok.text}", tok.line)
            labels[tok.text] = len(stmts)
            p.next()
            p.next()
            continue
        stmts.append(_parse_statement(p))
    return Procedure(name.text, uses, stmts, labels, line)


def _parse_statement(p: _Parser):
    tok = p.next()
    if tok.kind != "NAME":
        raise StaplError(f"expected a statement, found {tok.text!r}", tok.line)
    kw = tok.text
    if kw in _UNSUPPORTED_STATEMENTS:
        raise StaplUnsupported(_UNSUPPORTED_STATEMENTS[kw], tok.line)
    if kw in ("INTEGER", "BOOLEAN"):
        p.pos -= 1
        return _parse_decl(p)
    if kw == "LET":
        tok = p.next()
        kw = tok.text
        return _finish_assign(p, tok)
    if kw == "FOR":
        var = p.next()
        p.expect("=")
        start = p.expression()
        p.expect("TO")
        stop = p.expression()
        step = p.expression() if p.accept("STEP") else None
        p.expect(";")
        return ForStmt(var.text, start, stop, step, line=tok.line)
    if kw == "NEXT":
        var = p.next()
        p.expect(";")
        return NextStmt(var.text, line=tok.line)
    if kw == "IF":
        cond = p.expression()
        p.expect("THEN")
        then = _parse_statement(p)
        if isinstance(then, (ForStmt, NextStmt, Decl)):
            raise StaplError("IF cannot guard loop or declaration statements", tok.line)
        return IfStmt(cond, then, tok.line)
    if kw == "GOTO":
        label = p.next()
        p.expect(";")
        return Goto(label.text, tok.line)
    if kw == "WAIT":
        amount = p.expression()
        unit = p.next()
        if unit.text not in ("USEC", "MSEC", "CYCLES"):
            raise StaplError(f"unknown WAIT unit {unit.text!r}", unit.line)
        p.expect(";")
        return Wait(amount, unit.text, tok.line)
    if kw in ("IRSCAN", "DRSCAN"):
        length = p.expression()
        p.expect(",")
        data = p.expression()
        capture = None
        compare = None
        while p.accept(","):
            sub = p.next()
            if sub.text == "CAPTURE":
                capture = p.next().text
            elif sub.text == "COMPARE":
                expected = p.expression()
                p.expect(",")
                mask = p.expression()
                result = None
                if p.accept(","):
                    result = p.next().text
                compare = (expected, mask, result)
            else:
                raise StaplError(f"unknown scan clause {sub.text!r}", sub.line)
        p.expect(";")
        return Scan(kw == "IRSCAN", length, data, capture, compare, tok.line)
    if kw == "STATE":
        state = p.next()
        p.expect(";")
        if state.text not in _STABLE_STATES:
            raise StaplUnsupported(
                f"STATE only accepts stable states, not {state.text}", state.line
            )
        return StateStmt(state.text, tok.line)
    if kw == "PRINT":
        parts: list = []
        while True:
            nxt = p.peek()
            if nxt is not None and nxt.kind == "STRING":
                parts.append(p.next().text)
            else:
                parts.append(p.expression())
            if not p.accept(","):
                break
        p.expect(";")
        return PrintStmt(parts, tok.line)
    if kw == "EXPORT":
        key = p.next()
        if key.kind != "STRING":
            raise StaplError("EXPORT takes a string key", key.line)
        p.expect(",")
        expr = p.expression()
        p.expect(";")
        return ExportStmt(key.text, expr, tok.line)
    if kw == "EXIT":
        code = p.expression()
        p.expect(";")
        return ExitStmt(code, tok.line)
    # plain assignment:  NAME [= | [part] =] expr ;
    return _finish_assign(p, tok)


def _finish_assign(p: _Parser, name_tok: Token) -> Assign:
    part = None
    if p.accept("["):
        first = p.expression()
        if p.accept(".."):
            second = p.expression()
            part = ("slice", first, second)
        else:
            part = ("index", first)
        p.expect("]")
    p.expect("=")
    expr = p.expression()
    p.expect(";")
    return Assign(name_tok.text, part, expr, name_tok.line)


def _validate(prog: StaplProgram) -> None:
    for action, procs in prog.actions.items():
        for q in procs:
            if q not in prog.procedures:
                raise StaplError(f"ACTION {action} names unknown procedure {q}")
    for proc in prog.procedures.values():
        for block in proc.uses:
            if block not in prog.data_blocks:
                raise StaplError(
                    f"procedure {proc.name} uses unknown data block {block}", proc.line
                )
        stack: list[int] = []
        for idx, stmt in enumerate(proc.stmts):
            if isinstance(stmt, ForStmt):
                stack.append(idx)
            elif isinstance(stmt, NextStmt):
                if not stack:
                    raise StaplError(f"NEXT {stmt.var} without FOR", stmt.line)
                fidx = stack.pop()
                head = proc.stmts[fidx]
                if head.var != stmt.var:
                    raise StaplError(
                        f"NEXT {stmt.var} closes FOR {head.var}", stmt.line
                    )
                head.next_index = idx
                stmt.for_index = fidx
            else:
                _check_gotos(stmt, proc)
        if stack:
            head = proc.stmts[stack[-1]]
            raise StaplError(f"FOR {head.var} is never closed", head.line)


def _check_gotos(stmt, proc: Procedure) -> None:
    while isinstance(stmt, IfStmt):
        stmt = stmt.then
    if isinstance(stmt, Goto) and stmt.label not in proc.labels:
        raise StaplError(f"GOTO {stmt.label} has no label in {proc.name}", stmt.line)


# -- interpreter -----------------------------------------------------------


@dataclass
class _BoolArray:
    size: int
    value: int = 0


@dataclass
class StaplResult:
    exit_code: int
    exports: dict[str, int]
    prints: list[str]
    trace: list[str]
    scan_count: int
    elapsed_us: float
    failed_scan: int | None = None  # ordinal of the scan a bare COMPARE rejected


class StaplRuntime:
    """Executes a parsed program against a TAP controller."""

    def __init__(self, controller: TapController, max_steps: int = 2_000_000):
        self.ctl = controller
        self.max_steps = max_steps

    def run(self, prog: StaplProgram, action: str | None = None) -> StaplResult:
        if action is None:
            if len(prog.actions) != 1:
                raise StaplError(
                    f"script offers actions {sorted(prog.actions)}; pick one"
                )
            action = next(iter(prog.actions))
        if action not in prog.actions:
            raise StaplError(f"no action {action!r} (have {sorted(prog.actions)})")

        self._symbols: dict[str, int | _BoolArray] = {}
        self._exports: dict[str, int] = {}
        self._prints: list[str] = []
        self._trace: list[str] = []
        self._scan_count = 0
        self._elapsed_us = 0.0
        self._steps = 0
        self._initialized_blocks: set[str] = set()

        exit_code = EXIT_OK
        failed_scan = None
        try:
            for proc_name in prog.actions[action]:
                self._run_procedure(prog, prog.procedures[proc_name])
        except _ExitSignal as sig:
            exit_code = sig.code
            failed_scan = sig.failed_scan
        return StaplResult(
            exit_code,
            self._exports,
            self._prints,
            self._trace,
            self._scan_count,
            self._elapsed_us,
            failed_scan,
        )

    # execution

    def _run_procedure(self, prog: StaplProgram, proc: Procedure) -> None:
        for block in proc.uses:
            if block not in self._initialized_blocks:
                for decl in prog.data_blocks[block]:
                    self._declare(decl)
                self._initialized_blocks.add(block)
        pc = 0
        loops: dict[int, tuple[int, int]] = {}  # for-index -> (stop, step)
        while pc < len(proc.stmts):
            self._steps += 1
            if self._steps > self.max_steps:
                raise StaplError(f"step budget exhausted in {proc.name}")
            stmt = proc.stmts[pc]
            if isinstance(stmt, ForStmt):
                self._symbols[stmt.var] = self._eval(stmt.start)
                stop = self._eval(stmt.stop)
                step = self._eval(stmt.step) if stmt.step is not None else 1
                if step == 0:
                    raise StaplError("FOR step of zero", stmt.line)
                loops[pc] = (stop, step)
                if not self._loop_continues(self._symbols[stmt.var], stop, step):
                    pc = stmt.next_index + 1
                    continue
            elif isinstance(stmt, NextStmt):
                stop, step = loops[stmt.for_index]
                value = self._int_var(stmt.var, stmt.line) + step
                self._symbols[stmt.var] = value
                if self._loop_continues(value, stop, step):
                    pc = stmt.for_index + 1
                    continue
            elif isinstance(stmt, Goto):
                pc = proc.labels[stmt.label]
                continue
            else:
                jump = self._execute(stmt, proc)
                if jump is not None:
                    pc = proc.labels[jump]
                    continue
            pc += 1

    @staticmethod
    def _loop_continues(value: int, stop: int, step: int) -> bool:
        return value <= stop if step > 0 else value >= stop

    def _execute(self, stmt, proc: Procedure) -> str | None:
        """Run one non-control statement; returns a label on taken GOTO."""
        if isinstance(stmt, Decl):
            self._declare(stmt)
        elif isinstance(stmt, Assign):
            self._assign(stmt)
        elif isinstance(stmt, IfStmt):
            if self._eval(stmt.cond):
                if isinstance(stmt.then, Goto):
                    return stmt.then.label
                return self._execute(stmt.then, proc)
        elif isinstance(stmt, Wait):
            amount = self._eval(stmt.amount)
            if amount < 0:
                raise StaplError("negative WAIT", stmt.line)
            if stmt.unit == "USEC":
                self._elapsed_us += amount
            elif stmt.unit == "MSEC":
                self._elapsed_us += amount * 1000.0
            else:  # CYCLES: real clocks in Run-Test/Idle
                self.ctl.run_idle(amount)
        elif isinstance(stmt, Scan):
            self._scan(stmt, proc)
        elif isinstance(stmt, StateStmt):
            self.ctl.goto(_STABLE_STATES[stmt.state])
        elif isinstance(stmt, PrintStmt):
            text = "".join(
                part if isinstance(part, str) else str(self._eval(part))
                for part in stmt.parts
            )
            self._prints.append(text)
        elif isinstance(stmt, ExportStmt):
            self._exports[stmt.key] = self._eval(stmt.expr)
        elif isinstance(stmt, ExitStmt):
            raise _ExitSignal(self._eval(stmt.code), None)
        else:
            raise StaplError(f"statement {stmt!r} escaped the parser")
        return None

    def _scan(self, stmt: Scan, proc: Procedure) -> None:
        length = self._eval(stmt.length)
        if length <= 0:
            raise StaplError("scan length must be positive", stmt.line)
        data = self._eval(stmt.data) & ((1 << length) - 1)
        vec = BitVector(data, length)
        captured = (
            self.ctl.shift_ir(data, width=length) if stmt.into_ir else self.ctl.shift_dr(vec)
        )
        self._scan_count += 1
        self._trace.append(
            f"{proc.name}\t{'IR' if stmt.into_ir else 'DR'}\t{length}\t{vec.to_hex()}"
        )
        if stmt.capture is not None:
            self._store_bits(stmt.capture, captured.value, length, stmt.line)
        if stmt.compare is not None:
            expected_expr, mask_expr, result = stmt.compare
            expected = self._eval(expected_expr)
            mask = self._eval(mask_expr)
            ok = (captured.value & mask) == (expected & mask)
            if result is not None:
                self._store_bits(result, 0 if ok else 1, 1, stmt.line)
            elif not ok:
                raise _ExitSignal(EXIT_VERIFY_FAILED, self._scan_count)

    # symbols

    def _declare(self, decl: Decl) -> None:
        if decl.kind == "integer":
            self._symbols[decl.name] = self._eval(decl.init) if decl.init else 0
        else:
            size = self._eval(decl.size)
            if size <= 0:
                raise StaplError(f"array {decl.name} has no bits", decl.line)
            arr = _BoolArray(size)
            if decl.init is not None:
                value = self._eval(decl.init)
                if value >> size:
                    raise StaplError(
                        f"initializer does not fit in {decl.name}[{size}]", decl.line
                    )
                arr.value = value
            self._symbols[decl.name] = arr

    def _int_var(self, name: str, line: int) -> int:
        val = self._symbols.get(name)
        if not isinstance(val, int):
            raise StaplError(f"{name} is not an integer variable", line)
        return val

    def _store_bits(self, name: str, value: int, length: int, line: int) -> None:
        arr = self._symbols.get(name)
        if not isinstance(arr, _BoolArray):
            raise StaplError(f"{name} is not a BOOLEAN array", line)
        if length > arr.size:
            raise StaplError(f"{length} bits do not fit in {name}[{arr.size}]", line)
        keep = ((1 << (arr.size - length)) - 1) << length if arr.size > length else 0
        arr.value = (arr.value & keep) | (value & ((1 << length) - 1))

    def _assign(self, stmt: Assign) -> None:
        target = self._symbols.get(stmt.name)
        value = self._eval(stmt.expr)
        if stmt.part is None:
            if isinstance(target, _BoolArray):
                if value >> target.size:
                    raise StaplError(f"value does not fit in {stmt.name}", stmt.line)
                target.value = value
            elif isinstance(target, int) or target is None:
                self._symbols[stmt.name] = value
            return
        if not isinstance(target, _BoolArray):
            raise StaplError(f"{stmt.name} is not a BOOLEAN array", stmt.line)
        if stmt.part[0] == "index":
            i = self._eval(stmt.part[1])
            if not 0 <= i < target.size:
                raise StaplError(f"bit {i} outside {stmt.name}[{target.size}]", stmt.line)
            target.value = (target.value & ~(1 << i)) | ((value & 1) << i)
        else:
            hi = self._eval(stmt.part[1])
            lo = self._eval(stmt.part[2])
            if hi < lo:
                hi, lo = lo, hi
            if not (0 <= lo and hi < target.size):
                raise StaplError(
                    f"slice [{hi}..{lo}] outside {stmt.name}[{target.size}]", stmt.line
                )
            width = hi - lo + 1
            mask = ((1 << width) - 1) << lo
            target.value = (target.value & ~mask) | ((value & ((1 << width) - 1)) << lo)

    # expressions

    def _eval(self, expr: Expr) -> int:
        op = expr.op
        if op == "num":
            return expr.args[0]
        if op == "var":
            name = expr.args[0]
            val = self._symbols.get(name)
            if val is None:
                raise StaplError(f"undefined variable {name}", expr.line)
            return val.value if isinstance(val, _BoolArray) else val
        if op == "index":
            name, idx = expr.args
            arr = self._symbols.get(name)
            if not isinstance(arr, _BoolArray):
                raise StaplError(f"{name} is not a BOOLEAN array", expr.line)
            i = self._eval(idx)
            if not 0 <= i < arr.size:
                raise StaplError(f"bit {i} outside {name}[{arr.size}]", expr.line)
            return (arr.value >> i) & 1
        if op == "slice":
            name, first, second = expr.args
            arr = self._symbols.get(name)
            if not isinstance(arr, _BoolArray):
                raise StaplError(f"{name} is not a BOOLEAN array", expr.line)
            hi, lo = self._eval(first), self._eval(second)
            if hi < lo:
                hi, lo = lo, hi
            if not (0 <= lo and hi < arr.size):
                raise StaplError(f"slice [{hi}..{lo}] outside {name}[{arr.size}]", expr.line)
            return (arr.value >> lo) & ((1 << (hi - lo + 1)) - 1)
        if op.startswith("unary:"):
            val = self._eval(expr.args[0])
            sym = op[6:]
            if sym == "-":
                return -val
            if sym == "~":
                return ~val
            return 0 if val else 1
        if op.startswith("bin:"):
            sym = op[4:]
            left = self._eval(expr.args[0])
            if sym == "&&":
                return 1 if left and self._eval(expr.args[1]) else 0
            if sym == "||":
                return 1 if left or self._eval(expr.args[1]) else 0
            right = self._eval(expr.args[1])
            try:
                return _BINOPS[sym](left, right)
            except ZeroDivisionError:
                raise StaplError("division by zero", expr.line) from None
        raise StaplError(f"expression {op!r} escaped the parser", expr.line)


_BINOPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": lambda a, b: a // b,
    "%": lambda a, b: a % b,
    "&": lambda a, b: a & b,
    "|": lambda a, b: a | b,
    "^": lambda a, b: a ^ b,
    "<<": lambda a, b: a << b,
    ">>": lambda a, b: a >> b,
    "==": lambda a, b: 1 if a == b else 0,
    "!=": lambda a, b: 1 if a != b else 0,
    "<": lambda a, b: 1 if a < b else 0,
    "<=": lambda a, b: 1 if a <= b else 0,
    ">": lambda a, b: 1 if a > b else 0,
    ">=": lambda a, b: 1 if a >= b else 0,
}


class _ExitSignal(Exception):
    def __init__(self, code: int, failed_scan: int | None):
        self.code = code
        self.failed_scan = failed_scan
        super().__init__(code)


# -- generator -------------------------------------------------------------


def generate_flash_script(
    device_name: str,
    ir_width: int,
    address_opcode: int,
    program_opcode: int,
    read_opcode: int,
    base_word: int,
    address_width: int,
    words: list[int],
) -> str:
    """A self-contained program/verify script for a span of flash words.

    The data block stores one 33-bit record per word: the payload in bits
    0..31 and a set bit 32, which the programming path ignores and the
    verification path expects back as the read acknowledge.
    """
    if not words:
        raise ValueError("no words to program")
    record = 0
    for i, w in enumerate(words):
        if w >> 32:
            raise ValueError(f"word {i} does not fit in 32 bits")
        record |= (w | (1 << 32)) << (33 * i)
    nbits = 33 * len(words)
    hexdigits = (nbits + 3) // 4
    lines = [
        'NOTE "CREATOR" "max10audit flash script generator";',
        f'NOTE "DEVICE" "{device_name}";',
        f'NOTE "WORDS" "{len(words)}";',
        f'NOTE "BASE" "{base_word}";',
        "",
        "ACTION PROGRAM = DO_PROGRAM;",
        "ACTION VERIFY = DO_VERIFY;",
        "ACTION PROGRAM_AND_VERIFY = DO_PROGRAM, DO_VERIFY;",
        "",
        "DATA DEVDATA;",
        f"    INTEGER BASE = {base_word};",
        f"    INTEGER COUNT = {len(words)};",
        f"    BOOLEAN RECS[{nbits}] = ${record:0{hexdigits}X};",
        "ENDDATA;",
        "",
        "PROCEDURE DO_PROGRAM USES DEVDATA;",
        "    INTEGER I;",
        "    INTEGER LO;",
        "    STATE IDLE;",
        f"    IRSCAN {ir_width}, ${address_opcode:X};",
        f"    DRSCAN {address_width}, BASE;",
        f"    IRSCAN {ir_width}, ${program_opcode:X};",
        "    FOR I = 0 TO COUNT - 1;",
        "        LO = I * 33;",
        "        DRSCAN 33, RECS[LO + 32..LO];",
        "        WAIT 8 USEC;",
        "    NEXT I;",
        '    PRINT "programmed ", COUNT, " words";',
        "ENDPROC;",
        "",
        "PROCEDURE DO_VERIFY USES DEVDATA;",
        "    INTEGER I;",
        "    INTEGER LO;",
        "    STATE IDLE;",
        f"    IRSCAN {ir_width}, ${address_opcode:X};",
        f"    DRSCAN {address_width}, BASE;",
        f"    IRSCAN {ir_width}, ${read_opcode:X};",
        "    I = 0;",
        "VLOOP:",
        "    LO = I * 33;",
        "    DRSCAN 33, $0, COMPARE RECS[LO + 32..LO], $1FFFFFFFF;",
        "    I = I + 1;",
        "    IF I < COUNT THEN GOTO VLOOP;",
        '    EXPORT "VERIFIED", COUNT;',
        "ENDPROC;",
        "",
    ]
    return "\n".join(lines)
