"""Parser and grounder for the typed-STRIPS PDDL dialect (``:strips :typing``)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from planhrl.planning import GroundOperator, PlanningTask

SUPPORTED_REQUIREMENTS = frozenset({":strips", ":typing"})

Atom = tuple  # (predicate, arg0, arg1, ...)


class PddlError(ValueError):
    """Raised on malformed or inconsistent PDDL input."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line is not None else ""
        super().__init__(where + message)


class PddlWarning(UserWarning):
    """Non-fatal inconsistencies (domain-name mismatch, statically unreachable goal)."""


# ---------------------------------------------------------------------------
# s-expressions


@dataclass(frozen=True)
class _Token:
    text: str
    line: int
    col: int


class _Node(list):
    """A parenthesized list remembering where it opened."""

    def __init__(self, items: Iterable = (), line: int = 0, col: int = 0):
        super().__init__(items)
        self.line = line
        self.col = col


def _tokenize(text: str) -> Iterator[_Token]:
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line, col = line + 1, 1
            i += 1
        elif ch.isspace():
            col += 1
            i += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch in "()":
            yield _Token(ch, line, col)
            col += 1
            i += 1
        else:
            start, start_col = i, col
            while i < n and not text[i].isspace() and text[i] not in "();":
                i += 1
                col += 1
            word = text[start:i]
            if not all(c.isalnum() or c in "-_?:." for c in word):
                raise PddlError(f"unexpected characters in {word!r}", line, start_col)
            yield _Token(word.lower(), line, start_col)


def _read_sexpr(text: str) -> _Node:
    stack: list[_Node] = []
    root: _Node | None = None
    for tok in _tokenize(text):
        if tok.text == "(":
            node = _Node(line=tok.line, col=tok.col)
            if stack:
                stack[-1].append(node)
            elif root is not None:
                raise PddlError("trailing content after top-level expression", tok.line, tok.col)
            else:
                root = node
            stack.append(node)
        elif tok.text == ")":
            if not stack:
                raise PddlError("unbalanced ')'", tok.line, tok.col)
            stack.pop()
        else:
            if not stack:
                raise PddlError(f"symbol {tok.text!r} outside any expression", tok.line, tok.col)
            stack[-1].append(tok)
    if stack:
        raise PddlError("unexpected end of input: unclosed '('", stack[-1].line, stack[-1].col)
    if root is None:
        raise PddlError("empty input", 1, 1)
    return root


def _sym(item, what: str) -> str:
    if not isinstance(item, _Token):
        raise PddlError(f"expected {what}, found a list", item.line, item.col)
    return item.text


def _pos(item) -> tuple[int, int]:
    return item.line, item.col


# ---------------------------------------------------------------------------
# ASTs


@dataclass(frozen=True)
class Predicate:
    name: str
    params: tuple[tuple[str, str], ...]  # (variable, type)

    @property
    def arity(self) -> int:
        return len(self.params)


@dataclass(frozen=True)
class ActionSchema:
    name: str
    params: tuple[tuple[str, str], ...]
    precondition: tuple[Atom, ...]
    effect: tuple[tuple[Atom, bool], ...]  # (atom, is_positive)

    @property
    def add_effects(self) -> tuple[Atom, ...]:
        return tuple(a for a, pos in self.effect if pos)

    @property
    def del_effects(self) -> tuple[Atom, ...]:
        return tuple(a for a, pos in self.effect if not pos)


@dataclass(frozen=True)
class DomainAst:
    name: str
    requirements: tuple[str, ...]
    types: tuple[tuple[str, str], ...]  # (type, parent)
    predicates: tuple[Predicate, ...]
    actions: tuple[ActionSchema, ...]

    def predicate(self, name: str) -> Predicate | None:
        for p in self.predicates:
            if p.name == name:
                return p
        return None

    def supertypes(self, typ: str) -> list[str]:
        """``typ`` followed by its ancestors up to ``object``."""
        parents = dict(self.types)
        chain = [typ]
        while chain[-1] in parents and parents[chain[-1]] != chain[-1]:
            chain.append(parents[chain[-1]])
            if len(chain) > len(parents) + 1:
                raise PddlError(f"cyclic type hierarchy at {typ!r}")
        if chain[-1] != "object":
            chain.append("object")
        return chain


@dataclass(frozen=True)
class ProblemAst:
    name: str
    domain_name: str
    objects: tuple[tuple[str, str], ...]  # (object, type)
    init: frozenset[Atom]
    goal: tuple[Atom, ...]


def _parse_typed_list(items: Sequence, what: str) -> list[tuple[str, str]]:
    """``a b - t c`` -> [(a, t), (b, t), (c, object)]."""
    out: list[tuple[str, str]] = []
    pending: list[str] = []
    i = 0
    while i < len(items):
        name = _sym(items[i], what)
        if name == "-":
            if i + 1 >= len(items):
                raise PddlError("type expected after '-'", *_pos(items[i]))
            if not pending:
                raise PddlError("'-' without preceding names", *_pos(items[i]))
            typ = _sym(items[i + 1], "type name")
            out.extend((p, typ) for p in pending)
            pending = []
            i += 2
        else:
            pending.append(name)
            i += 1
    out.extend((p, "object") for p in pending)
    return out


def _parse_atom(node, what: str) -> Atom:
    if isinstance(node, _Token):
        raise PddlError(f"expected atom in {what}, found {node.text!r}", *_pos(node))
    if not node:
        raise PddlError(f"empty atom in {what}", *_pos(node))
    head = _sym(node[0], "predicate name")
    if head in ("not", "or", "imply", "forall", "exists", "when", "="):
        raise PddlError(f"{head!r} is not supported in {what} (STRIPS only)", *_pos(node))
    return (head,) + tuple(_sym(a, "argument") for a in node[1:])


def _conjunction(node, what: str) -> list:
    """Flatten ``(and ...)`` or a single literal into a list of literal nodes."""
    if isinstance(node, _Token):
        raise PddlError(f"expected a formula in {what}", *_pos(node))
    if node and isinstance(node[0], _Token) and node[0].text == "and":
        out = []
        for sub in node[1:]:
            out.extend(_conjunction(sub, what))
        return out
    return [node]


def _sections(node: _Node, start: int) -> Iterator[tuple[str, _Node]]:
    for item in node[start:]:
        if isinstance(item, _Token) or not item or not isinstance(item[0], _Token):
            raise PddlError("expected a (:section ...) block", *_pos(item))
        key = item[0].text
        if not key.startswith(":"):
            raise PddlError(f"expected a section keyword, found {key!r}", *_pos(item))
        yield key, item


def _check_header(root: _Node, kind: str) -> str:
    if len(root) < 2 or _sym(root[0], "'define'") != "define":
        raise PddlError("expected (define ...)", root.line, root.col)
    head = root[1]
    if isinstance(head, _Token) or len(head) != 2 or _sym(head[0], kind) != kind:
        raise PddlError(f"expected ({kind} <name>)", *_pos(head))
    return _sym(head[1], f"{kind} name")


def parse_domain(text: str) -> DomainAst:
    """Parse a domain file and validate it against its own declarations."""
    root = _read_sexpr(text)
    name = _check_header(root, "domain")
    requirements: list[str] = []
    types: list[tuple[str, str]] = []
    predicates: list[Predicate] = []
    actions: list[ActionSchema] = []
    action_nodes = []
    for key, sec in _sections(root, 2):
        if key == ":requirements":
            for r in sec[1:]:
                flag = _sym(r, "requirement flag")
                if flag not in SUPPORTED_REQUIREMENTS:
                    raise PddlError(f"unsupported requirement {flag}", *_pos(r))
                requirements.append(flag)
        elif key == ":types":
            types.extend(_parse_typed_list(sec[1:], "type"))
        elif key == ":predicates":
            for p in sec[1:]:
                if isinstance(p, _Token) or not p:
                    raise PddlError("malformed predicate declaration", *_pos(p))
                pname = _sym(p[0], "predicate name")
                predicates.append(Predicate(pname, tuple(_parse_typed_list(p[1:], "parameter"))))
        elif key == ":action":
            action_nodes.append(sec)
        else:
            raise PddlError(f"unsupported domain section {key}", *_pos(sec))

    declared_types = {"object"} | {t for t, _ in types} | {p for _, p in types}
    preds = {p.name: p for p in predicates}
    if len(preds) != len(predicates):
        raise PddlError("duplicate predicate declaration", root.line, root.col)
    for p in predicates:
        for var, typ in p.params:
            if typ not in declared_types:
                raise PddlError(f"undeclared type {typ!r} in predicate {p.name}")

    for sec in action_nodes:
        actions.append(_parse_action(sec, preds, declared_types))
    return DomainAst(name, tuple(requirements), tuple(types), tuple(predicates), tuple(actions))


def _check_atom(atom: Atom, node, preds: dict[str, Predicate], variables: dict[str, str] | None):
    pred = preds.get(atom[0])
    if pred is None:
        raise PddlError(f"undeclared predicate {atom[0]!r}", *_pos(node))
    if len(atom) - 1 != pred.arity:
        raise PddlError(
            f"arity mismatch for {atom[0]!r}: expected {pred.arity}, got {len(atom) - 1}", *_pos(node)
        )
    if variables is not None:
        for arg in atom[1:]:
            if arg.startswith("?") and arg not in variables:
                raise PddlError(f"unbound variable {arg}", *_pos(node))


def _parse_action(sec: _Node, preds: dict[str, Predicate], declared_types: set[str]) -> ActionSchema:
    if len(sec) < 2:
        raise PddlError("action without a name", sec.line, sec.col)
    name = _sym(sec[1], "action name")
    fields = {}
    rest = sec[2:]
    if len(rest) % 2:
        raise PddlError(f"malformed action {name!r}", sec.line, sec.col)
    for k, v in zip(rest[::2], rest[1::2]):
        fields[_sym(k, "action keyword")] = v
    unknown = set(fields) - {":parameters", ":precondition", ":effect"}
    if unknown:
        raise PddlError(f"unsupported action field(s) {sorted(unknown)} in {name!r}", sec.line, sec.col)

    params_node = fields.get(":parameters", _Node())
    if isinstance(params_node, _Token):
        raise PddlError("parameters must be a list", *_pos(params_node))
    params = _parse_typed_list(params_node, "parameter")
    for _, typ in params:
        if typ not in declared_types:
            raise PddlError(f"undeclared type {typ!r} in action {name!r}", sec.line, sec.col)
    variables = dict(params)

    precondition = []
    if ":precondition" in fields:
        for lit in _conjunction(fields[":precondition"], f"precondition of {name}"):
            atom = _parse_atom(lit, f"precondition of {name}")
            _check_atom(atom, lit, preds, variables)
            precondition.append(atom)

    effect: list[tuple[Atom, bool]] = []
    if ":effect" in fields:
        for lit in _conjunction(fields[":effect"], f"effect of {name}"):
            positive = True
            if lit and isinstance(lit[0], _Token) and lit[0].text == "not":
                if len(lit) != 2:
                    raise PddlError("malformed negation", *_pos(lit))
                positive, lit = False, lit[1]
            atom = _parse_atom(lit, f"effect of {name}")
            _check_atom(atom, lit, preds, variables)
            if (atom, positive) in effect:
                raise PddlError(f"duplicated effect {atom} in {name!r}", *_pos(lit))
            effect.append((atom, positive))
    return ActionSchema(name, tuple(params), tuple(precondition), tuple(effect))


def parse_problem(text: str) -> ProblemAst:
    root = _read_sexpr(text)
    name = _check_header(root, "problem")
    domain_name = None
    objects: list[tuple[str, str]] = []
    init: list[Atom] = []
    goal: list[Atom] = []
    for key, sec in _sections(root, 2):
        if key == ":domain":
            if len(sec) != 2:
                raise PddlError("malformed (:domain ...)", *_pos(sec))
            domain_name = _sym(sec[1], "domain name")
        elif key == ":objects":
            objects.extend(_parse_typed_list(sec[1:], "object"))
        elif key == ":init":
            for lit in sec[1:]:
                init.append(_parse_atom(lit, "init"))
        elif key == ":goal":
            if len(sec) != 2:
                raise PddlError("malformed (:goal ...)", *_pos(sec))
            for lit in _conjunction(sec[1], "goal"):
                if lit and isinstance(lit[0], _Token) and lit[0].text == "and":
                    continue
                goal.append(_parse_atom(lit, "goal"))
        elif key == ":requirements":
            continue
        else:
            raise PddlError(f"unsupported problem section {key}", *_pos(sec))
    if domain_name is None:
        raise PddlError("problem does not name its domain", root.line, root.col)
    names = [o for o, _ in objects]
    if len(set(names)) != len(names):
        raise PddlError("duplicate object declaration", root.line, root.col)
    return ProblemAst(name, domain_name, tuple(objects), frozenset(init), tuple(dict.fromkeys(goal)))


# ---------------------------------------------------------------------------
# pretty printing (round-trip)


def _fmt_typed(items: Iterable[tuple[str, str]]) -> str:
    return " ".join(f"{n} - {t}" for n, t in items)


def _fmt_atom(atom: Atom) -> str:
    return "(" + " ".join(atom) + ")"


def format_domain(domain: DomainAst) -> str:
    lines = [f"(define (domain {domain.name})"]
    if domain.requirements:
        lines.append(f"  (:requirements {' '.join(domain.requirements)})")
    if domain.types:
        lines.append(f"  (:types {_fmt_typed(domain.types)})")
    lines.append("  (:predicates")
    for p in domain.predicates:
        inner = " ".join([p.name, _fmt_typed(p.params)]).strip()
        lines.append(f"    ({inner})")
    lines.append("  )")
    for a in domain.actions:
        lines.append(f"  (:action {a.name}")
        lines.append(f"    :parameters ({_fmt_typed(a.params)})")
        lines.append(f"    :precondition (and {' '.join(map(_fmt_atom, a.precondition))})")
        effs = [_fmt_atom(at) if pos else f"(not {_fmt_atom(at)})" for at, pos in a.effect]
        lines.append(f"    :effect (and {' '.join(effs)}))")
    lines.append(")")
    return "\n".join(lines) + "\n"


def format_problem(problem: ProblemAst) -> str:
    lines = [f"(define (problem {problem.name})", f"  (:domain {problem.domain_name})"]
    lines.append(f"  (:objects {_fmt_typed(problem.objects)})")
    lines.append("  (:init")
    lines.extend(f"    {_fmt_atom(a)}" for a in sorted(problem.init))
    lines.append("  )")
    lines.append(f"  (:goal (and {' '.join(map(_fmt_atom, problem.goal))}))")
    lines.append(")")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# grounding


def static_predicates(domain: DomainAst) -> frozenset[str]:
    """Predicates that no action effect mentions."""
    touched = {atom[0] for a in domain.actions for atom, _ in a.effect}
    return frozenset(p.name for p in domain.predicates) - touched


def _validate_problem(domain: DomainAst, problem: ProblemAst) -> dict[str, str]:
    if problem.domain_name != domain.name:
        warnings.warn(
            f"problem {problem.name!r} names domain {problem.domain_name!r}, "
            f"grounding against {domain.name!r}",
            PddlWarning,
            stacklevel=3,
        )
    declared = {"object"} | {t for t, _ in domain.types} | {p for _, p in domain.types}
    objects = dict(problem.objects)
    for obj, typ in problem.objects:
        if typ not in declared:
            raise PddlError(f"object {obj!r} has undeclared type {typ!r}")
    for where, atoms in (("init", sorted(problem.init)), ("goal", problem.goal)):
        for atom in atoms:
            pred = domain.predicate(atom[0])
            if pred is None:
                raise PddlError(f"undeclared predicate {atom[0]!r} in {where}")
            if len(atom) - 1 != pred.arity:
                raise PddlError(f"arity mismatch in {where} atom {_fmt_atom(atom)}")
            for arg, (_, typ) in zip(atom[1:], pred.params):
                if arg not in objects:
                    raise PddlError(f"unknown object {arg!r} in {where} atom {_fmt_atom(atom)}")
                if typ not in domain.supertypes(objects[arg]):
                    raise PddlError(f"type mismatch: {arg!r} is not a {typ} in {_fmt_atom(atom)}")
    return objects


def _substitute(atom: Atom, binding: dict[str, str]) -> Atom:
    return (atom[0],) + tuple(binding.get(a, a) for a in atom[1:])


def _instantiations(
    action: ActionSchema,
    domain: DomainAst,
    objects: dict[str, str],
    statics: frozenset[str],
    init: frozenset[Atom],
) -> Iterator[dict[str, str]]:
    """Typed bindings whose static preconditions hold in ``init``.

    Static atoms are checked as soon as all their variables are bound.
    """
    candidates = []
    for var, typ in action.params:
        pool = sorted(o for o, t in objects.items() if typ in domain.supertypes(t))
        candidates.append(pool)
    static_pre = [a for a in action.precondition if a[0] in statics]
    order = [v for v, _ in action.params]
    # static atom i becomes checkable after binding variable index ready[i]
    checks: dict[int, list[Atom]] = {}
    for atom in static_pre:
        idx = max((order.index(a) for a in atom[1:] if a in order), default=-1)
        checks.setdefault(idx, []).append(atom)
    if any(_substitute(a, {}) not in init for a in checks.get(-1, [])):
        return

    def extend(i: int, binding: dict[str, str]) -> Iterator[dict[str, str]]:
        if i == len(order):
            yield dict(binding)
            return
        for obj in candidates[i]:
            binding[order[i]] = obj
            if all(_substitute(a, binding) in init for a in checks.get(i, [])):
                yield from extend(i + 1, binding)
        binding.pop(order[i], None)

    yield from extend(0, {})


def ground(domain: DomainAst, problem: ProblemAst) -> PlanningTask:
    """Instantiate all actions over the problem's objects.

    Operators whose static preconditions fail in the initial state are dropped;
    static facts are then removed from preconditions and states.
    """
    objects = _validate_problem(domain, problem)
    statics = static_predicates(domain)
    init = problem.init
    static_init = frozenset(a for a in init if a[0] in statics)

    raw_ops = []
    for action in domain.actions:
        for binding in _instantiations(action, domain, objects, statics, static_init):
            args = tuple(binding[v] for v, _ in action.params)
            name = "(" + " ".join((action.name,) + args) + ")"
            pre = {_substitute(a, binding) for a in action.precondition if a[0] not in statics}
            add = {_substitute(a, binding) for a in action.add_effects}
            dele = {_substitute(a, binding) for a in action.del_effects}
            # an atom both added and deleted ends up true (add wins)
            dele -= add
            raw_ops.append((name, pre, add, dele))

    for atom in problem.goal:
        if atom[0] in statics and atom not in static_init:
            warnings.warn(f"goal atom {_fmt_atom(atom)} is static and false in init", PddlWarning, stacklevel=2)

    atoms = {a for a in init if a[0] not in statics}
    atoms.update(a for a in problem.goal if a[0] not in statics)
    for _, pre, add, dele in raw_ops:
        atoms |= pre | add | dele
    facts = tuple(sorted(atoms))
    index = {a: i for i, a in enumerate(facts)}

    def ids(atoms_: Iterable[Atom]) -> frozenset[int]:
        return frozenset(index[a] for a in atoms_)

    operators = [
        GroundOperator(name, ids(pre), ids(add), ids(dele)) for name, pre, add, dele in raw_ops
    ]
    operators.sort(key=lambda o: o.name)
    return PlanningTask(
        facts=facts,
        operators=tuple(operators),
        init=ids(a for a in init if a[0] not in statics),
        goal=ids(a for a in problem.goal if a[0] not in statics),
        static_facts=static_init,
        name=problem.name,
    )


def load_task(domain_path, problem_path) -> PlanningTask:
    with open(domain_path, encoding="utf8") as f:
        domain = parse_domain(f.read())
    with open(problem_path, encoding="utf8") as f:
        problem = parse_problem(f.read())
    return ground(domain, problem)
