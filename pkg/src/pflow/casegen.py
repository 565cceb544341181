"""Synthetic large-case generation by tiling a base case.

Copies the base network T times with offset bus ids and stitches the
copies into a near-square 2D grid with stiff tie lines between each
tile's two best-connected buses.  Every tile after the first has its
slack bus converted to a PV bus; the converted machine's scheduled
output is set to the base case's solved slack injection, so each tile is
balanced to solver tolerance and tie flows stay near zero.  The grid
layout keeps the graph diameter at ~2*sqrt(T): a long chain of tiles
develops a soft global angle mode whose Newton steps swing by hundreds
of radians once cumulative tie flows build up, while the mesh stays
well-conditioned at any tile count.

Usage::

    python -m pflow.casegen case14.m --tiles 500 -o big.m
"""

from __future__ import annotations

import math
from collections import Counter

from .case_io import BranchRow, BusRow, GenRow, RawCase, parse_case_file, write_case

_TIE_R = 0.001
_TIE_X = 0.01
_TIE_B = 0.004


def _solved_slack_injection(raw: RawCase) -> float:
    """Solved slack active output of the base case, in MW."""
    from .newton import NewtonOptions, newton_solve
    from .system_model import build_system, flat_start

    sys = build_system(raw)
    result = newton_solve(sys, flat_start(sys), NewtonOptions())
    if not result.converged:
        raise ValueError("base case does not converge; cannot calibrate tiles")
    ps = result.y[sys.addr.ps_of_slack[0]]
    return float(ps) * raw.base_mva


def _tie_anchors(raw: RawCase) -> list[int]:
    """The two best-connected bus ids: ties land on strong buses."""
    degree: Counter[int] = Counter()
    for br in raw.branch_rows:
        if br.status != 0:
            degree[br.from_bus] += 1
            degree[br.to_bus] += 1
    ranked = sorted(degree, key=lambda b: (-degree[b], b))
    return ranked[:2] if len(ranked) >= 2 else ranked[:1] * 2


def tile_case(raw: RawCase, tiles: int) -> RawCase:
    """Replicate ``raw`` into a 2D grid of ``tiles`` coupled copies."""
    if tiles < 1:
        raise ValueError("tiles must be >= 1")
    if tiles == 1:
        return raw
    slack_pg = _solved_slack_injection(raw)
    max_id = max(row.bus_id for row in raw.bus_rows)
    stride = max_id + 1
    slack_ids = {r.bus_id for r in raw.bus_rows if r.bus_type == 3}
    anchor_right, anchor_down = (_tie_anchors(raw) + [max_id])[:2]
    width = max(1, math.isqrt(tiles))
    # the tile keeping the slack sits at the grid center, minimizing the
    # worst-case electrical distance the flat-start transient must cover
    n_rows = (tiles + width - 1) // width
    slack_tile = min(tiles - 1, (n_rows // 2) * width + width // 2)

    bus_rows: list[BusRow] = []
    gen_rows: list[GenRow] = []
    branch_rows: list[BranchRow] = []
    for t in range(tiles):
        off = t * stride
        for r in raw.bus_rows:
            bus_type = r.bus_type
            if t != slack_tile and bus_type == 3:
                bus_type = 2
            bus_rows.append(BusRow(r.bus_id + off, bus_type, r.pd, r.qd,
                                   r.gs, r.bs, r.vm, r.va, r.base_kv))
        slack_seen = False
        for g in raw.gen_rows:
            pg = g.pg
            if t != slack_tile and g.bus_id in slack_ids and g.status != 0 and not slack_seen:
                pg = slack_pg  # converted slack machine carries its solved output
                slack_seen = True
            gen_rows.append(GenRow(g.bus_id + off, pg, g.qg, g.qmax, g.qmin,
                                   g.vg, g.status))
        for b in raw.branch_rows:
            branch_rows.append(BranchRow(b.from_bus + off, b.to_bus + off,
                                         b.r, b.x, b.b, b.ratio, b.angle, b.status))
        row, col = divmod(t, width)
        if col > 0:  # tie to the left neighbor
            branch_rows.append(BranchRow(anchor_right + (t - 1) * stride,
                                         anchor_right + off,
                                         _TIE_R, _TIE_X, _TIE_B, 1.0, 0.0, 1))
        if row > 0:  # tie to the tile above
            branch_rows.append(BranchRow(anchor_down + (t - width) * stride,
                                         anchor_down + off,
                                         _TIE_R, _TIE_X, _TIE_B, 1.0, 0.0, 1))
    return RawCase(raw.base_mva, bus_rows, gen_rows, branch_rows,
                   name=f"{raw.name or 'case'}_x{tiles}")


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        description="Tile a MATPOWER case into a large synthetic case.")
    parser.add_argument("base", help="base case file (.m)")
    parser.add_argument("--tiles", "-t", type=int, required=True)
    parser.add_argument("--output", "-o", required=True)
    args = parser.parse_args(argv)
    raw = parse_case_file(args.base)
    tiled = tile_case(raw, args.tiles)
    with open(args.output, "w", encoding="utf-8") as f:
        f.write(write_case(tiled))
    n_branch = sum(1 for b in tiled.branch_rows if b.status != 0)
    print(f"wrote {args.output}: {len(tiled.bus_rows)} buses, "
          f"{n_branch} in-service branches")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
