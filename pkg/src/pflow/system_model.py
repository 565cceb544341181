"""Per-unit structure-of-arrays network model with global addressing.

The variable vector ``y`` is laid out as contiguous blocks, in order:

    theta (n_bus) | V (n_bus) | Q_g (one per PV gen, then per slack gen) | P_s

and the equation vector ``g`` mirrors it as

    g_p (n_bus) | g_q (n_bus) | g_V (one per PV/slack gen) | g_theta

so the system is square with n_var = n_eq = 2*n_bus + n_pv + 2*n_slack.

Within each block addresses are the identity (bus i's angle sits at
position i), but tests and kernels go through :class:`AddressMap` so the
layout is stated in exactly one place.

Device groups hold one contiguous float64/int32 array per field, one slot
per in-service device, in file order.  ``PowerSystem`` is immutable after
build and safe to share across threads; the line group's ``ph/pk/qh/qk``
scratch arrays are the one exception (they belong to whoever is currently
evaluating, see the residual module).

Sign convention, used everywhere: a residual row is
(generation injections) - (load) - (line and shunt flows leaving the bus),
with target 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .case_io import RawCase, validate_case

# StateVector / ResidualVector are plain contiguous float64 arrays laid out
# per AddressMap; aliases keep signatures readable.
StateVector = np.ndarray
ResidualVector = np.ndarray

_IDX = np.int32


@dataclass(frozen=True)
class BusGroup:
    ids: np.ndarray        # original file bus ids, int64
    bus_type: np.ndarray   # 1=PQ, 2=PV, 3=slack, int8

    def __len__(self) -> int:
        return self.ids.shape[0]


@dataclass(frozen=True)
class PqGroup:
    """Fixed-power injections: bus loads plus gens at PQ-type buses."""

    bus: np.ndarray   # int32 bus positions
    p0: np.ndarray    # pu demand (negative = net injection)
    q0: np.ndarray

    def __len__(self) -> int:
        return self.bus.shape[0]


@dataclass(frozen=True)
class PvGroup:
    """PV generators: scheduled P, controlled voltage, free Q output."""

    bus: np.ndarray
    p0: np.ndarray    # pu scheduled active injection
    v0: np.ndarray    # pu voltage setpoint
    qg: np.ndarray    # position within the Q_g block, int32

    def __len__(self) -> int:
        return self.bus.shape[0]


@dataclass(frozen=True)
class SlackGroup:
    bus: np.ndarray
    v0: np.ndarray
    theta0: np.ndarray  # radians
    qg: np.ndarray      # position within the Q_g block
    ps: np.ndarray      # position within the P_s block

    def __len__(self) -> int:
        return self.bus.shape[0]


@dataclass(frozen=True)
class ShuntGroup:
    bus: np.ndarray
    g: np.ndarray     # pu conductance at V = 1
    b: np.ndarray     # pu susceptance at V = 1

    def __len__(self) -> int:
        return self.bus.shape[0]


@dataclass(frozen=True)
class LineGroup:
    """Pi-model lines and two-winding transformers, one slot per device.

    With series admittance y = g + jb, tap magnitude m, phase shift phi and
    total charging susceptance b_c, the stored coefficients are

        gl,  bl   = (g cos(phi) - b sin(phi))/m, (b cos(phi) + g sin(phi))/m
        gl2, bl2  = (g cos(phi) + b sin(phi))/m, (b cos(phi) - g sin(phi))/m
        g_self_h, b_self_h = g/m^2, (b + b_c/2)/m^2
        g_self_k, b_self_k = g,     (b + b_c/2)

    so the injection at terminal h is

        p_h = v_h^2 g_self_h - v_h v_k (gl  cos(t_hk) + bl  sin(t_hk))
        q_h = -v_h^2 b_self_h - v_h v_k (gl  sin(t_hk) - bl  cos(t_hk))
        p_k = v_k^2 g_self_k - v_h v_k (gl2 cos(t_hk) - bl2 sin(t_hk))
        q_k = -v_k^2 b_self_k + v_h v_k (gl2 sin(t_hk) + bl2 cos(t_hk))

    with t_hk = theta_h - theta_k.  The self terms fold the series
    self-admittance together with shunt and charging effects so kernels
    never branch on taps or shifts; for m = 1, phi = 0 this reduces to the
    plain symmetric pi model.  When no line has a phase shift, ``gl2``/
    ``bl2`` are the same array objects as ``gl``/``bl``.
    """

    bus_h: np.ndarray
    bus_k: np.ndarray
    gl: np.ndarray
    bl: np.ndarray
    gl2: np.ndarray
    bl2: np.ndarray
    g_self_h: np.ndarray
    b_self_h: np.ndarray
    g_self_k: np.ndarray
    b_self_k: np.ndarray
    # scratch outputs of line_injections, one slot per line
    ph: np.ndarray = field(repr=False, default=None)
    pk: np.ndarray = field(repr=False, default=None)
    qh: np.ndarray = field(repr=False, default=None)
    qk: np.ndarray = field(repr=False, default=None)

    def __len__(self) -> int:
        return self.bus_h.shape[0]


@dataclass(frozen=True)
class AddressMap:
    """Global variable/equation positions for every model quantity."""

    theta_of_bus: np.ndarray
    v_of_bus: np.ndarray
    qg_of_gen: np.ndarray       # one per PV gen then per slack gen
    ps_of_slack: np.ndarray
    gp_of_bus: np.ndarray
    gq_of_bus: np.ndarray
    gv_of_gen: np.ndarray
    gtheta_of_slack: np.ndarray


@dataclass(frozen=True)
class PowerSystem:
    name: str
    base_mva: float
    n_bus: int
    buses: BusGroup
    pq: PqGroup
    pv: PvGroup
    slack: SlackGroup
    lines: LineGroup
    shunts: ShuntGroup
    addr: AddressMap

    @property
    def n_var(self) -> int:
        return count_variables(self)

    @property
    def n_eq(self) -> int:
        return count_variables(self)


def count_variables(sys: PowerSystem) -> int:
    """Size of the square system: 2*n_bus + n_pv + 2*n_slack."""
    return 2 * sys.n_bus + len(sys.pv) + 2 * len(sys.slack)


def build_system(raw: RawCase) -> PowerSystem:
    """Convert a validated RawCase into a per-unit PowerSystem.

    Requires ``validate_case(raw)`` to be empty.  Out-of-service devices
    are dropped here; device ordering is file order, so the result is
    deterministic (bit-identical for identical input).
    """
    violations = validate_case(raw)
    if violations:
        detail = "; ".join(f"{v.code}[{v.row}]" for v in violations)
        raise ValueError(f"case fails validation: {detail}")

    base = raw.base_mva
    n_bus = len(raw.bus_rows)
    pos_of_id = {row.bus_id: i for i, row in enumerate(raw.bus_rows)}
    bus_type = np.array([row.bus_type for row in raw.bus_rows], dtype=np.int8)
    buses = BusGroup(
        ids=np.array([row.bus_id for row in raw.bus_rows], dtype=np.int64),
        bus_type=bus_type,
    )

    # fixed injections: nonzero bus loads, then in-service gens at PQ buses
    # folded in as negative demand
    pq_entries: list[tuple[int, float, float]] = []
    for row in raw.bus_rows:
        if row.pd != 0.0 or row.qd != 0.0:
            pq_entries.append((pos_of_id[row.bus_id], row.pd / base, row.qd / base))
    slack_bus_pos = next(pos_of_id[r.bus_id] for r in raw.bus_rows if r.bus_type == 3)
    slack_taken = False
    pv_entries: list[tuple[int, float, float]] = []
    slack_entries: list[tuple[int, float, float]] = []
    for gen in raw.gen_rows:
        if gen.status == 0:
            continue
        b = pos_of_id[gen.bus_id]
        kind = bus_type[b]
        if kind == 3 and not slack_taken:
            theta0 = math.radians(next(r.va for r in raw.bus_rows if r.bus_id == gen.bus_id))
            slack_entries.append((b, gen.vg, theta0))
            slack_taken = True
        elif kind == 2 or kind == 3:
            # additional gens at the slack bus behave as PV machines
            pv_entries.append((b, gen.pg / base, gen.vg))
        else:
            pq_entries.append((b, -gen.pg / base, -gen.qg / base))

    n_pv = len(pv_entries)
    n_slack = len(slack_entries)
    pq = PqGroup(
        bus=np.array([e[0] for e in pq_entries], dtype=_IDX),
        p0=np.array([e[1] for e in pq_entries]),
        q0=np.array([e[2] for e in pq_entries]),
    )
    pv = PvGroup(
        bus=np.array([e[0] for e in pv_entries], dtype=_IDX),
        p0=np.array([e[1] for e in pv_entries]),
        v0=np.array([e[2] for e in pv_entries]),
        qg=np.arange(n_pv, dtype=_IDX),
    )
    slack = SlackGroup(
        bus=np.array([e[0] for e in slack_entries], dtype=_IDX),
        v0=np.array([e[1] for e in slack_entries]),
        theta0=np.array([e[2] for e in slack_entries]),
        qg=np.arange(n_pv, n_pv + n_slack, dtype=_IDX),
        ps=np.arange(n_slack, dtype=_IDX),
    )

    shunt_entries = [(pos_of_id[r.bus_id], r.gs / base, r.bs / base)
                     for r in raw.bus_rows if r.gs != 0.0 or r.bs != 0.0]
    shunts = ShuntGroup(
        bus=np.array([e[0] for e in shunt_entries], dtype=_IDX),
        g=np.array([e[1] for e in shunt_entries]),
        b=np.array([e[2] for e in shunt_entries]),
    )

    lines = _build_lines(raw, pos_of_id)
    addr = _build_addresses(n_bus, n_pv, n_slack)
    return PowerSystem(
        name=raw.name or "case",
        base_mva=base,
        n_bus=n_bus,
        buses=buses,
        pq=pq,
        pv=pv,
        slack=slack,
        lines=lines,
        shunts=shunts,
        addr=addr,
    )


def _build_lines(raw: RawCase, pos_of_id: dict[int, int]) -> LineGroup:
    rows = [br for br in raw.branch_rows if br.status != 0]
    n = len(rows)
    bus_h = np.array([pos_of_id[br.from_bus] for br in rows], dtype=_IDX)
    bus_k = np.array([pos_of_id[br.to_bus] for br in rows], dtype=_IDX)
    gl = np.empty(n)
    bl = np.empty(n)
    gl2 = np.empty(n)
    bl2 = np.empty(n)
    g_self_h = np.empty(n)
    b_self_h = np.empty(n)
    g_self_k = np.empty(n)
    b_self_k = np.empty(n)
    has_shift = False
    for i, br in enumerate(rows):
        ys = 1.0 / complex(br.r, br.x)
        g, b = ys.real, ys.imag
        m = br.ratio
        phi = math.radians(br.angle)
        if phi != 0.0:
            has_shift = True
        cphi, sphi = math.cos(phi), math.sin(phi)
        gl[i] = (g * cphi - b * sphi) / m
        bl[i] = (b * cphi + g * sphi) / m
        gl2[i] = (g * cphi + b * sphi) / m
        bl2[i] = (b * cphi - g * sphi) / m
        bc2 = 0.5 * br.b
        g_self_h[i] = g / (m * m)
        b_self_h[i] = (b + bc2) / (m * m)
        g_self_k[i] = g
        b_self_k[i] = b + bc2
    if not has_shift:
        gl2, bl2 = gl, bl  # alias: one series pair when no phase shifts
    return LineGroup(
        bus_h=bus_h, bus_k=bus_k,
        gl=gl, bl=bl, gl2=gl2, bl2=bl2,
        g_self_h=g_self_h, b_self_h=b_self_h,
        g_self_k=g_self_k, b_self_k=b_self_k,
        ph=np.zeros(n), pk=np.zeros(n), qh=np.zeros(n), qk=np.zeros(n),
    )


def _build_addresses(n_bus: int, n_pv: int, n_slack: int) -> AddressMap:
    n_gen = n_pv + n_slack
    return AddressMap(
        theta_of_bus=np.arange(n_bus, dtype=_IDX),
        v_of_bus=np.arange(n_bus, 2 * n_bus, dtype=_IDX),
        qg_of_gen=np.arange(2 * n_bus, 2 * n_bus + n_gen, dtype=_IDX),
        ps_of_slack=np.arange(2 * n_bus + n_gen, 2 * n_bus + n_gen + n_slack, dtype=_IDX),
        gp_of_bus=np.arange(n_bus, dtype=_IDX),
        gq_of_bus=np.arange(n_bus, 2 * n_bus, dtype=_IDX),
        gv_of_gen=np.arange(2 * n_bus, 2 * n_bus + n_gen, dtype=_IDX),
        gtheta_of_slack=np.arange(2 * n_bus + n_gen, 2 * n_bus + n_gen + n_slack, dtype=_IDX),
    )


def flat_start(sys: PowerSystem) -> StateVector:
    """Initial state: reference angle everywhere, setpoint or unit voltages.

    theta = slack angle setpoint, V = 1.0 at PQ buses and the generator
    setpoint at PV/slack buses (first in-service gen wins), Q_g = P_s = 0.
    """
    y = np.zeros(sys.n_var)
    addr = sys.addr
    theta0 = sys.slack.theta0[0] if len(sys.slack) else 0.0
    y[addr.theta_of_bus] = theta0
    y[addr.v_of_bus] = 1.0
    # reversed so the first generator's setpoint lands last
    for i in range(len(sys.pv) - 1, -1, -1):
        y[addr.v_of_bus[sys.pv.bus[i]]] = sys.pv.v0[i]
    for s in range(len(sys.slack) - 1, -1, -1):
        y[addr.v_of_bus[sys.slack.bus[s]]] = sys.slack.v0[s]
    return y
