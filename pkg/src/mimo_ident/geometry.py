"""Spreading supports: rectangle unions, grid covers and MIMO packing.

The cover grid for ``(K, L)`` tiles the time-frequency plane with cells
``[m/K, (m+1)/K] x [n K/L, (n+1) K/L]`` of area ``1/L``. Grid supports live
on the torus ``Z_K x Z_L`` (time modulo 1, frequency modulo K).
"""
from dataclasses import dataclass, field
from itertools import product
import math

import numpy as np

from .errors import (NoCoverFound, PackingFailed, SupportTooLarge,
                     UnboundedInput, GridMismatch)
from .util import primes_up_to

_SNAP = 1e-9


@dataclass(frozen=True)
class RectUnion:
    """Finite union of closed axis-aligned rectangles ``(t0, t1, nu0, nu1)``."""

    rects: tuple = ()

    def __post_init__(self):
        rects = tuple(tuple(float(v) for v in r) for r in self.rects)
        for r in rects:
            if len(r) != 4:
                raise ValueError(f"rectangle needs four endpoints, got {r}")
            if not all(math.isfinite(v) for v in r):
                raise UnboundedInput(f"non-finite rectangle endpoint in {r}")
            t0, t1, nu0, nu1 = r
            if not (t1 > t0 and nu1 > nu0):
                raise ValueError(f"empty rectangle {r}")
        object.__setattr__(self, "rects", rects)

    def area(self):
        """Lebesgue measure of the union (overlaps counted once)."""
        if not self.rects:
            return 0.0
        ts = sorted({v for r in self.rects for v in r[:2]})
        total = 0.0
        for a, b in zip(ts[:-1], ts[1:]):
            spans = sorted((r[2], r[3]) for r in self.rects if r[0] <= a and r[1] >= b)
            covered, lo, hi = 0.0, None, None
            for s0, s1 in spans:
                if hi is None or s0 > hi:
                    if hi is not None:
                        covered += hi - lo
                    lo, hi = s0, s1
                else:
                    hi = max(hi, s1)
            if hi is not None:
                covered += hi - lo
            total += (b - a) * covered
        return total

    def contains(self, t, nu):
        t, nu = np.asarray(t), np.asarray(nu)
        inside = np.zeros(np.broadcast(t, nu).shape, dtype=bool)
        for t0, t1, nu0, nu1 in self.rects:
            inside |= (t >= t0) & (t <= t1) & (nu >= nu0) & (nu <= nu1)
        return inside


@dataclass(frozen=True)
class GridSupport:
    K: int
    L: int
    cells: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.K < 1 or self.L < 1:
            raise ValueError("K and L must be positive")
        cells = frozenset((int(m) % self.K, int(n) % self.L) for m, n in self.cells)
        object.__setattr__(self, "cells", cells)

    def __len__(self):
        return len(self.cells)

    def sorted_cells(self):
        return sorted(self.cells)

    def shifted(self, dn, dm=0):
        return GridSupport(self.K, self.L, {(m + dm, n + dn) for m, n in self.cells})

    def union(self, other):
        if (self.K, self.L) != (other.K, other.L):
            raise GridMismatch("supports live on different grids")
        return GridSupport(self.K, self.L, self.cells | other.cells)


def measure(S):
    """Area of a grid support: each cell has measure ``1/L``."""
    return len(S.cells) / S.L


def _snap(x):
    r = round(x)
    return r if abs(x - r) < _SNAP else x


def _cell_range(lo, hi, step):
    # cells whose open interior meets [lo, hi]
    a, b = _snap(lo / step), _snap(hi / step)
    return range(math.floor(a), math.ceil(b))


def outer_cover(S, K, L):
    """Smallest union of (K, L) grid cells containing ``S``.

    A cell is included iff its open interior meets ``S``. Raises
    :class:`SupportTooLarge` if ``S`` wraps onto itself on the torus.
    """
    if K < 1 or L < 1:
        raise ValueError("K and L must be >= 1")
    if not isinstance(S, RectUnion):
        S = RectUnion(S)
    dt, dnu = 1.0 / K, K / L
    raw = set()
    for t0, t1, nu0, nu1 in S.rects:
        raw.update(product(_cell_range(t0, t1, dt), _cell_range(nu0, nu1, dnu)))
    cells = {(m % K, n % L) for m, n in raw}
    if len(cells) != len(raw):
        raise SupportTooLarge(f"support does not fit on the ({K}, {L}) torus")
    return GridSupport(K, L, cells)


def _rows(S_rows):
    return [[s if isinstance(s, RectUnion) else RectUnion(s) for s in row]
            for row in S_rows]


def best_cover(S_rows, K_max, L_max=101, margin=0.0):
    """Search prime ``L <= L_max`` and ``K <= K_max`` for admissible covers.

    ``S_rows`` is an M x N nested list of rectangle unions. A pair (K, L)
    is admissible when every row's cover measures sum to less than
    ``1 - margin``. Candidates are visited in lexicographic (L, K) order;
    returns ``(K, L, covers)`` for the first admissible one.
    """
    S_rows = _rows(S_rows)
    bound = 1.0 - margin
    for m, row in enumerate(S_rows):
        total = sum(s.area() for s in row)
        if total >= bound:
            raise NoCoverFound(
                f"row {m} has total spreading area {total:.6g} >= {bound:.6g}")
    for L in primes_up_to(L_max):
        for K in range(1, K_max + 1):
            try:
                covers = [[outer_cover(s, K, L) for s in row] for row in S_rows]
            except SupportTooLarge:
                continue
            if all(sum(measure(c) for c in row) < bound for row in covers):
                return K, L, covers
    raise NoCoverFound(f"no admissible cover with K <= {K_max}, prime L <= {L_max}")


@dataclass(frozen=True)
class MimoSupportPlan:
    """Per-subchannel supports with per-input frequency offsets.

    ``supports[m][n]`` is the support of subchannel (m, n). Input ``n`` is
    shifted by ``offsets[n]`` frequency cells; ``merged[m]`` is the union
    of row ``m``'s shifted supports.
    """

    K: int
    L: int
    supports: tuple
    offsets: tuple
    merged: tuple

    @property
    def M(self):
        return len(self.supports)

    @property
    def N(self):
        return len(self.supports[0])

    def row_entries(self, m):
        """``(n, cell, shifted_cell)`` for row ``m``, in coefficient order."""
        out = []
        for n, S in enumerate(self.supports[m]):
            s = self.offsets[n]
            out.extend((n, (mu, nu), (mu, (nu + s) % self.L))
                       for mu, nu in S.sorted_cells())
        return out

    def row_count(self, m):
        return sum(len(S) for S in self.supports[m])

    def cell_counts(self):
        return [[len(S) for S in row] for row in self.supports]


def _check_grid(supports):
    if not supports or not supports[0]:
        raise ValueError("need at least one subchannel")
    N = len(supports[0])
    if any(len(row) != N for row in supports):
        raise ValueError("ragged support array")
    K, L = supports[0][0].K, supports[0][0].L
    for row in supports:
        for S in row:
            if (S.K, S.L) != (K, L):
                raise GridMismatch("all supports must share (K, L)")
    return K, L, N


def _disjoint(supports, offsets):
    for row in supports:
        seen = set()
        for S, s in zip(row, offsets):
            shifted = S.shifted(s).cells
            if seen & shifted:
                return False
            seen |= shifted
    return True


def _footprint(supports, n, L):
    """Minimal cyclic arc ``(start, width)`` covering input n's frequencies."""
    used = sorted({nu for row in supports for _, nu in row[n].cells})
    if not used:
        return None
    gaps = [((used[(i + 1) % len(used)] - used[i]) % L or L, i)
            for i in range(len(used))]
    _, i = max(gaps)
    start = used[(i + 1) % len(used)]
    return start, (used[i] - start) % L + 1


def _cumulative_offsets(supports, L, N):
    # place each input's frequency footprint right after the previous one
    offsets, cursor = [], None
    for n in range(N):
        fp = _footprint(supports, n, L)
        if fp is None:
            offsets.append(0)
            continue
        start, width = fp
        if cursor is None:
            offsets.append(0)
            cursor = start + width
        else:
            offsets.append((cursor - start) % L)
            cursor += width
    return tuple(offsets)


def pack_offsets(supports):
    """Find per-input frequency offsets making every row's supports disjoint.

    Tries cumulative footprint offsets first (the grid analog of stacking
    inputs at multiples of the occupied bandwidth), then, for N <= 3, an
    exhaustive search over ``Z_L^(N-1)``. Raises :class:`PackingFailed`.
    """
    supports = tuple(tuple(row) for row in supports)
    K, L, N = _check_grid(supports)
    offsets = _cumulative_offsets(supports, L, N)
    if not _disjoint(supports, offsets):
        offsets = None
        if N <= 3:
            for rest in product(range(L), repeat=N - 1):
                if _disjoint(supports, (0,) + rest):
                    offsets = (0,) + rest
                    break
        if offsets is None:
            raise PackingFailed("no frequency offsets make the row supports disjoint")
    merged = []
    for row in supports:
        cells = set()
        for S, s in zip(row, offsets):
            cells |= S.shifted(s).cells
        merged.append(GridSupport(K, L, cells))
    return MimoSupportPlan(K, L, supports, tuple(offsets), tuple(merged))


# -- text formats -----------------------------------------------------------

def _content_lines(text):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def _blocks(text):
    """Split on ``subchannel m n`` markers; unmarked content is (0, 0)."""
    blocks, key = {}, (0, 0)
    for line in _content_lines(text):
        parts = line.split()
        if parts[0].lower() == "subchannel":
            key = (int(parts[1]), int(parts[2]))
            blocks.setdefault(key, [])
            continue
        blocks.setdefault(key, []).append(parts)
    return blocks


def _to_array(blocks, factory):
    if not blocks:
        raise ValueError("no subchannels found")
    M = max(m for m, _ in blocks) + 1
    N = max(n for _, n in blocks) + 1
    return [[factory(blocks.get((m, n), [])) for n in range(N)] for m in range(M)]


def parse_rect_unions(text):
    """Parse an M x N array of rectangle unions (four reals per line)."""
    blocks = _blocks(text)

    def make(lines):
        for parts in lines:
            if len(parts) != 4:
                raise ValueError(f"expected four reals per line, got {' '.join(parts)!r}")
        return RectUnion([tuple(float(v) for v in parts) for parts in lines])

    return _to_array(blocks, make)


def parse_supports(text):
    """Parse an M x N array of grid supports.

    The first content line is the ``K L`` header; each following line is a
    ``m n`` cell, optionally grouped under ``subchannel m n`` markers.
    """
    lines = list(_content_lines(text))
    if not lines:
        raise ValueError("empty support file")
    head = lines[0].split()
    if len(head) != 2:
        raise ValueError(f"expected 'K L' header, got {lines[0]!r}")
    K, L = int(head[0]), int(head[1])
    blocks = _blocks("\n".join(lines[1:]))

    def make(rows):
        cells = []
        for parts in rows:
            if len(parts) != 2:
                raise ValueError(f"expected 'm n' cell, got {' '.join(parts)!r}")
            m, n = int(parts[0]), int(parts[1])
            if not (0 <= m < K and 0 <= n < L):
                raise ValueError(f"cell ({m}, {n}) outside Z_{K} x Z_{L}")
            cells.append((m, n))
        return GridSupport(K, L, cells)

    return _to_array(blocks, make)


def format_support(S):
    lines = [f"{S.K} {S.L}"]
    lines += [f"{m} {n}" for m, n in S.sorted_cells()]
    return "\n".join(lines) + "\n"


def format_supports(supports):
    K, L, _ = _check_grid(supports)
    lines = [f"{K} {L}"]
    for m, row in enumerate(supports):
        for n, S in enumerate(row):
            lines.append(f"subchannel {m} {n}")
            lines += [f"{a} {b}" for a, b in S.sorted_cells()]
    return "\n".join(lines) + "\n"


def format_rect_unions(S_rows):
    lines = []
    for m, row in enumerate(_rows(S_rows)):
        for n, S in enumerate(row):
            lines.append(f"subchannel {m} {n}")
            lines += [" ".join(repr(v) for v in r) for r in S.rects]
    return "\n".join(lines) + "\n"
