"""MATPOWER case file parsing and structural validation.

Accepts the numeric-matrix subset of the MATPOWER case format v2: the
``baseMVA`` scalar and the ``bus``, ``gen``, ``branch`` matrix assignments,
with ``%`` comments and rows separated by newlines or ``;``.  MATLAB
expressions are not supported.  Column order is positional per the MATPOWER
manual; columns beyond the ones this package consumes are parsed and
discarded.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class CaseFormatError(ValueError):
    """Raised for malformed case text.  ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class BusRow:
    bus_id: int
    bus_type: int   # 1=PQ, 2=PV, 3=slack
    pd: float       # MW
    qd: float       # MVAr
    gs: float       # MW at V=1 pu
    bs: float       # MVAr at V=1 pu
    vm: float       # pu
    va: float       # degrees
    base_kv: float


@dataclass(frozen=True)
class GenRow:
    bus_id: int
    pg: float       # MW
    qg: float       # MVAr
    qmax: float     # MVAr
    qmin: float     # MVAr
    vg: float       # pu setpoint
    status: int


@dataclass(frozen=True)
class BranchRow:
    from_bus: int
    to_bus: int
    r: float        # pu
    x: float        # pu
    b: float        # pu, total line charging
    ratio: float    # tap, file value 0 normalized to 1.0
    angle: float    # degrees, phase shift
    status: int


@dataclass(frozen=True)
class RawCase:
    """Verbatim image of a parsed case file (no unit conversion)."""

    base_mva: float
    bus_rows: list[BusRow]
    gen_rows: list[GenRow]
    branch_rows: list[BranchRow]
    name: str = ""


@dataclass(frozen=True)
class Violation:
    """One structural-invariant violation found by :func:`validate_case`."""

    code: str
    row: int        # index into the offending table, -1 if case-level
    message: str


# Minimum column counts: highest consumed column per MATPOWER v2 layout.
_MIN_COLS = {"bus": 10, "gen": 8, "branch": 11}
_REQUIRED = ("bus", "gen", "branch")


def parse_case(text: str, name: str = "") -> RawCase:
    """Parse MATPOWER case text into a :class:`RawCase`.

    Raises :class:`CaseFormatError` with a line number for malformed
    matrices or non-numeric tokens, for a missing required matrix, and for
    duplicate bus ids.  All rows are kept in file order; out-of-service
    devices are retained (they are dropped later, at system build).
    """
    base_mva: float | None = None
    matrices: dict[str, list[tuple[int, list[float]]]] = {}

    current: str | None = None       # matrix being collected
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("%", 1)[0].strip()
        if not line:
            continue

        if current is None:
            head, sep, rest = line.partition("=")
            if not sep:
                continue  # function declaration or unrelated statement
            target = head.strip().rsplit(".", 1)[-1]  # accept mpc.bus and bus
            rest = rest.strip()
            if target == "baseMVA":
                value = rest.rstrip(";").strip()
                try:
                    base_mva = float(value)
                except ValueError:
                    raise CaseFormatError(f"baseMVA is not numeric: {value!r}", lineno)
                continue
            if target not in _MIN_COLS:
                continue  # e.g. mpc.version, gencost: parsed and discarded
            if not rest.startswith("["):
                raise CaseFormatError(f"expected '[' to open matrix {target!r}", lineno)
            if target in matrices:
                raise CaseFormatError(f"matrix {target!r} assigned twice", lineno)
            matrices[target] = []
            current = target
            line = rest[1:]

        # inside matrix `current`; a row ends at ';', at end of line, or at ']'
        closed = "]" in line
        body = line.split("]", 1)[0]
        for segment in body.split(";"):
            tokens = segment.split()
            if tokens:
                matrices[current].append((lineno, _numeric_row(tokens, current, lineno)))
        if closed:
            current = None

    if current is not None:
        raise CaseFormatError(f"matrix {current!r} is never closed with '];'", len(text.splitlines()))
    if base_mva is None:
        raise CaseFormatError("missing required scalar 'baseMVA'")
    for required in _REQUIRED:
        if required not in matrices:
            raise CaseFormatError(f"missing required matrix '{required}'")

    bus_rows = []
    seen_ids: set[int] = set()
    for lineno, row in matrices["bus"]:
        bus_id = int(row[0])
        if bus_id in seen_ids:
            raise CaseFormatError(f"duplicate bus id {bus_id}", lineno)
        seen_ids.add(bus_id)
        bus_rows.append(BusRow(bus_id, int(row[1]), row[2], row[3], row[4], row[5],
                               row[7], row[8], row[9]))

    gen_rows = [GenRow(int(r[0]), r[1], r[2], r[3], r[4], r[5], int(r[7]))
                for _, r in matrices["gen"]]
    branch_rows = [BranchRow(int(r[0]), int(r[1]), r[2], r[3], r[4],
                             r[8] if r[8] != 0.0 else 1.0, r[9], int(r[10]))
                   for _, r in matrices["branch"]]
    return RawCase(base_mva, bus_rows, gen_rows, branch_rows, name=name)


def _numeric_row(tokens: list[str], matrix: str, lineno: int) -> list[float]:
    if len(tokens) < _MIN_COLS[matrix]:
        raise CaseFormatError(
            f"matrix {matrix!r} row has {len(tokens)} columns, "
            f"needs at least {_MIN_COLS[matrix]}", lineno)
    try:
        return [float(t) for t in tokens]
    except ValueError:
        bad = next(t for t in tokens if not _is_number(t))
        raise CaseFormatError(f"non-numeric token {bad!r} in matrix {matrix!r}", lineno)


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def parse_case_file(path) -> RawCase:
    """Read and parse a case file from disk (UTF-8)."""
    from pathlib import Path

    p = Path(path)
    return parse_case(p.read_text(encoding="utf-8"), name=p.stem)


def validate_case(raw: RawCase) -> list[Violation]:
    """Check structural invariants; returns all violations (empty = clean).

    Violations are data, not exceptions: callers decide whether to abort.
    An empty result guarantees ``build_system`` will not reject the case on
    structural grounds.
    """
    out: list[Violation] = []
    if raw.base_mva <= 0:
        out.append(Violation("NONPOSITIVE_BASE_MVA", -1,
                             f"baseMVA must be positive, got {raw.base_mva}"))

    ids = {row.bus_id for row in raw.bus_rows}
    slack_rows = [i for i, row in enumerate(raw.bus_rows) if row.bus_type == 3]
    for i, row in enumerate(raw.bus_rows):
        if row.bus_type not in (1, 2, 3):
            out.append(Violation("INVALID_BUS_TYPE", i,
                                 f"bus {row.bus_id} has unsupported type {row.bus_type}"))
    if not slack_rows:
        out.append(Violation("MISSING_SLACK", -1, "no type-3 (slack) bus"))
    for i in slack_rows[1:]:
        out.append(Violation("MULTIPLE_SLACK", i,
                             f"bus {raw.bus_rows[i].bus_id} is a second type-3 bus"))

    slack_ids = {raw.bus_rows[i].bus_id for i in slack_rows}
    slack_has_gen = False
    for i, gen in enumerate(raw.gen_rows):
        if gen.bus_id not in ids:
            out.append(Violation("UNKNOWN_BUS", i,
                                 f"gen {i} references unknown bus {gen.bus_id}"))
        elif gen.bus_id in slack_ids and gen.status != 0:
            slack_has_gen = True
    if slack_rows and not slack_has_gen:
        out.append(Violation("SLACK_WITHOUT_GEN", slack_rows[0],
                             "slack bus has no in-service generator"))

    for i, br in enumerate(raw.branch_rows):
        if br.from_bus not in ids or br.to_bus not in ids:
            out.append(Violation("UNKNOWN_BUS", i,
                                 f"branch {i} references unknown bus"))
        if br.status != 0 and br.r * br.r + br.x * br.x == 0.0:
            out.append(Violation("ZERO_IMPEDANCE", i,
                                 f"in-service branch {i} has r = x = 0"))
    return out


def write_case(raw: RawCase) -> str:
    """Serialize a RawCase back to case text (debug writer).

    Numeric content round-trips at full double precision through
    :func:`parse_case`; discarded file columns are emitted as zeros.
    """
    def g(x: float) -> str:
        return format(x, ".17g")

    lines = [f"function mpc = {raw.name or 'case'}", "mpc.version = '2';",
             f"mpc.baseMVA = {g(raw.base_mva)};", "mpc.bus = ["]
    for b in raw.bus_rows:
        lines.append(f"\t{b.bus_id}\t{b.bus_type}\t{g(b.pd)}\t{g(b.qd)}\t{g(b.gs)}"
                     f"\t{g(b.bs)}\t1\t{g(b.vm)}\t{g(b.va)}\t{g(b.base_kv)}\t1\t1.1\t0.9")
    lines.append("];")
    lines.append("mpc.gen = [")
    for gen in raw.gen_rows:
        lines.append(f"\t{gen.bus_id}\t{g(gen.pg)}\t{g(gen.qg)}\t{g(gen.qmax)}"
                     f"\t{g(gen.qmin)}\t{g(gen.vg)}\t100\t{gen.status}\t0\t0")
    lines.append("];")
    lines.append("mpc.branch = [")
    for br in raw.branch_rows:
        lines.append(f"\t{br.from_bus}\t{br.to_bus}\t{g(br.r)}\t{g(br.x)}\t{g(br.b)}"
                     f"\t0\t0\t0\t{g(br.ratio)}\t{g(br.angle)}\t{br.status}")
    lines.append("];")
    return "\n".join(lines) + "\n"
