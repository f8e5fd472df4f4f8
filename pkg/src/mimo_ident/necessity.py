"""Finite-section experiments showing instability of overspread classes.

Three ingredients are reproduced on finite grids:

* slanted matrices ``|m_{j',j}| = w(||lam j' - j||_inf) p(||j||_inf)`` on
  Z^2 and their kernel vectors (with the tail bound they must obey);
* the prototype operator with tensor bump spreading function, its
  shift/modulation family, and the Gaussian Gabor analysis frame;
* the composition ``C o Phi_f o E`` for a concrete MISO row, whose nested
  sections lose stability once the row carries more than L cells.

Fine-grid model
---------------
The prototype lives on Z_P with ``P = L * n_t * n_f``. One cover cell
``R_KL`` spans ``n_t`` time samples and ``n_f`` frequency samples, so a
cell holds ``P / L`` spreading coefficients and a row with J cells carries
``J P / L`` coefficients against P output samples.
"""
from dataclasses import dataclass, field
from itertools import product
import math

import numpy as np

from .errors import (DivergentTail, GridMismatch, GridTooCoarse,
                     NumericalRankFull, PlanNotOverspread)
from .identification import PilotSet
from .spark import IdentifierSequence
from .tfcore import conjugate_spreading, modulate, operator_from_spreading, translate

INSTABILITY_RATIO = 1e-3


# -- slanted matrices ---------------------------------------------------------

@dataclass(frozen=True)
class SlantedMatrixSpec:
    lam: float
    poly_degree: int = 1
    decay_power: int = None
    K1: int = 1
    K0: float = 0.0

    def __post_init__(self):
        if self.decay_power is None:
            object.__setattr__(self, "decay_power", self.poly_degree + 3)
        if not self.lam > 1:
            raise ValueError("slant lam must exceed 1")
        if self.decay_power < self.poly_degree + 3:
            raise ValueError("decay_power must be >= poly_degree + 3")
        if self.K1 < 1 or self.K1 <= self.K0:
            raise ValueError("K1 must be a positive integer above K0")

    @property
    def N(self):
        return math.ceil(self.lam * (self.K1 + 1) / (self.lam - 1))

    @property
    def N_tilde(self):
        return math.ceil(self.N / self.lam) + self.K1

    def w(self, x):
        return (1.0 + np.asarray(x, dtype=float)) ** (-self.decay_power)

    def p(self, x):
        return (1.0 + np.asarray(x, dtype=float)) ** self.poly_degree


@dataclass
class SlantedSection:
    N: int
    N_tilde: int
    rows: np.ndarray
    cols: np.ndarray
    matrix: np.ndarray


def lattice_box(r):
    """Points of Z^2 with sup-norm <= r, row-major over (j1, j2)."""
    a = np.arange(-r, r + 1)
    return np.stack(np.meshgrid(a, a, indexing="ij"), axis=-1).reshape(-1, 2)


def slanted_entries(spec, rows, cols):
    """Entries ``w(||lam j' - j||) p(||j||)`` saturating the decay bound."""
    dist = np.max(np.abs(spec.lam * rows[:, None, :] - cols[None, :, :]), axis=2)
    return spec.w(dist) * spec.p(np.max(np.abs(cols), axis=1))[None, :]


def build_slanted(spec):
    """The wide (2N~+1)^2 x (2N+1)^2 section used for the kernel argument."""
    rows, cols = lattice_box(spec.N_tilde), lattice_box(spec.N)
    return SlantedSection(spec.N, spec.N_tilde, rows, cols,
                          slanted_entries(spec, rows, cols))


def kernel_vector(spec, radius=None):
    """Unit null vector of the wide section and ``||M x||`` on a big section.

    Returns ``(x, norm_Mx)`` with ``x`` of shape (2N+1, 2N+1), indexed by
    ``j + N``. ``norm_Mx`` is evaluated on rows ``||j'||_inf <= radius``
    (default ``3N``), which captures the tail to well below its bound.
    """
    section = build_slanted(spec)
    n_rows, n_cols = section.matrix.shape
    if n_rows >= n_cols:
        raise NumericalRankFull(
            f"section is {n_rows} x {n_cols}; need N~ < N for a kernel")
    _, s, vh = np.linalg.svd(section.matrix)
    x = vh[-1].conj()
    if s.size == n_cols and s[-1] > 1e-10 * s[0]:
        raise NumericalRankFull("section has full column rank")
    big_rows = lattice_box(radius or 3 * spec.N)
    norm_Mx = float(np.linalg.norm(slanted_entries(spec, big_rows, section.cols) @ x))
    side = 2 * spec.N + 1
    return x.reshape(side, side), norm_Mx


def _double_tail(w, start, tol=1e-30, k_cap=10**7):
    """``sum_{K>=start} K sum_{k>=K} k w(k)^2`` for each entry of ``start``."""
    start = np.atleast_1d(np.asarray(start, dtype=int))
    if start.min() < 1:
        raise ValueError("tail sums start at K >= 1")
    k_max = max(64, int(start.max()) * 2)
    while float(w(k_max)) ** 2 >= tol:
        k_max *= 2
        if k_max > k_cap:
            raise DivergentTail(f"w(k)^2 stays above {tol:g} up to k = {k_cap}")
    k = np.arange(1, k_max + 1, dtype=float)
    terms = k * np.asarray(w(k), dtype=float) ** 2
    inner = np.cumsum(terms[::-1])[::-1]
    outer = np.cumsum((k * inner)[::-1])[::-1]
    return outer[start - 1]


def tail_sum(w, poly_degree, K1_list, tol=1e-30):
    """``K1^(2 Lp) sum_{K>=K1} K sum_{k>=K} k w(k)^2`` for each K1.

    ``w`` is a vectorised decay function; the sums are truncated once
    ``w(k)^2 < tol``. Tends to 0 exactly when w decays faster than
    ``k^-(Lp+2)``.
    """
    K1 = np.asarray(K1_list, dtype=int)
    return K1.astype(float) ** (2 * poly_degree) * _double_tail(w, K1, tol)


def kernel_tail_bound(spec):
    """Upper bound on ``||M x||^2`` for the kernel vector of ``spec``."""
    lam, Lp, K1 = spec.lam, spec.poly_degree, spec.K1
    start = math.ceil(spec.N / lam) + K1
    tail = _double_tail(spec.w, start)[0]
    return float(2**6 * (lam / (lam - 1)) ** (2 * Lp) * (K1 + 3) ** (2 * Lp) * tail)


# -- prototype operator and its family ------------------------------------------

def _split_cell(P, L):
    if P % L:
        raise GridTooCoarse(f"P={P} is not a multiple of L={L}")
    area = P // L
    n_t = max(d for d in range(1, math.isqrt(area) + 1) if area % d == 0)
    return area // n_t, n_t


def plateau_bump(P, radius, lam):
    """Even bump on Z_P: 1 for |i| <= radius/lam, 0 for |i| >= radius.

    The transition is a raised-cosine taper.
    """
    i = np.arange(P)
    d = np.minimum(i, P - i).astype(float)
    inner = radius / lam
    taper = 0.5 * (1.0 + np.cos(np.pi * (d - inner) / (radius - inner)))
    return np.where(d <= inner, 1.0, np.where(d >= radius, 0.0, taper))


@dataclass
class PrototypeOp:
    """Operator with spreading function ``eta1 (x) eta2`` on Z_P.

    ``n_t`` and ``n_f`` are the cell widths in samples along time and
    frequency; the bumps reach 1 within ``n/(2 lam)`` and vanish from
    ``n/2`` on.
    """

    P: int
    K: int
    L: int
    lam: float
    n_t: int
    n_f: int
    eta1: np.ndarray = field(repr=False)
    eta2: np.ndarray = field(repr=False)

    @property
    def eta(self):
        return np.outer(self.eta1, self.eta2)

    def kernel(self):
        return operator_from_spreading(self.eta)

    def apply(self, f):
        """``P f = eta1 * (h f)`` with ``h`` the inverse DFT of eta2."""
        h = np.fft.ifft(self.eta2) * self.P
        return np.fft.ifft(np.fft.fft(self.eta1) * np.fft.fft(h * f))

    def modulations_per_axis(self):
        """Family modulations fitting one period: ``floor(n / lam)`` per axis."""
        return (int(math.floor(self.n_t / self.lam + 1e-9)),
                int(math.floor(self.n_f / self.lam + 1e-9)))

    def member_params(self, cell, k, l):
        """Integer ``(omega, p, r, xi)`` of the member for grid cell and (k, l).

        Continuous steps ``lam K k`` (frequency) and ``lam L l / K`` (time)
        are rounded to the nearest sample.
        """
        m, n = cell
        omega = int(round(k * self.lam * self.P / self.n_t))
        r = int(round(l * self.lam * self.P / self.n_f))
        return omega, m * self.n_t, r, n * self.n_f

    def member_spreading(self, cell, k, l):
        return conjugate_spreading(self.eta, *self.member_params(cell, k, l))

    def member_apply(self, cell, k, l, f):
        """``M_omega T_{p-r} P T_r M_{xi-omega} f``."""
        omega, p, r, xi = self.member_params(cell, k, l)
        g = translate(modulate(f, xi - omega), r)
        return modulate(translate(self.apply(g), p - r), omega)


def build_prototype(P, K, L, lam=1.2):
    """Prototype operator for the (K, L) grid on Z_P.

    Returns ``(proto, kernel)``. Raises :class:`GridTooCoarse` when a
    plateau would be narrower than one sample.
    """
    if not lam > 1:
        raise ValueError("lam must exceed 1")
    n_t, n_f = _split_cell(P, L)
    if min(n_t, n_f) / (2 * lam) < 1:
        raise GridTooCoarse(
            f"cell of {n_t} x {n_f} samples gives a plateau under one sample")
    proto = PrototypeOp(P, K, L, lam, n_t, n_f,
                        plateau_bump(P, n_t / 2, lam), plateau_bump(P, n_f / 2, lam))
    return proto, proto.kernel()


def _box_indices(count):
    return np.arange(-(count // 2), count - count // 2)


def family_indices(size):
    """``size`` modulation indices (k, l), nearest to the origin first."""
    side = math.isqrt(size - 1) + 1
    box = product(_box_indices(side), repeat=2)
    return sorted(box, key=lambda kl: (max(abs(kl[0]), abs(kl[1])), kl))[:size]


@dataclass
class RieszReport:
    size: int
    lam_min: float
    lam_max: float

    @property
    def condition(self):
        return self.lam_max / self.lam_min if self.lam_min > 0 else math.inf


def riesz_gram_check(proto, shift_family_size, cells=((0, 0),)):
    """Extreme eigenvalues of the HS Gram matrix of a finite family.

    Members are ``shift_family_size`` modulation pairs (k, l) per grid cell.
    """
    etas = [proto.member_spreading(cell, k, l)
            for cell in cells for k, l in family_indices(shift_family_size)]
    E = np.array([e.ravel() for e in etas])
    # <A, B>_HS = P <eta_A, eta_B>
    gram = proto.P * (E.conj() @ E.T)
    ev = np.linalg.eigvalsh(gram)
    return RieszReport(len(etas), float(ev[0]), float(ev[-1]))


def empirical_decay(proto, f, shifts):
    """Envelope of ``|P T_y M_omega f|`` away from x = 0 and its log-log slope.

    Returns ``(distances, envelope, slope)`` where ``envelope[d]`` is the
    largest normalised magnitude at circular distance >= d, maximised over
    the shifts ``(y, omega)``.
    """
    P = proto.P
    d = np.minimum(np.arange(P), P - np.arange(P))
    env = np.zeros(P // 2 + 1)
    for y, omega in shifts:
        g = np.abs(proto.apply(translate(modulate(f, omega), y)))
        g = g / g.max()
        per_dist = np.zeros_like(env)
        np.maximum.at(per_dist, d, g)
        env = np.maximum(env, np.maximum.accumulate(per_dist[::-1])[::-1])
    dist = np.arange(env.size)
    fit = (dist >= proto.n_t) & (env > 0)
    slope = float(np.polyfit(np.log(dist[fit]), np.log(env[fit]), 1)[0]) if fit.sum() > 1 else 0.0
    return dist, env, slope


# -- Gaussian Gabor frames ------------------------------------------------------

@dataclass(frozen=True)
class GaborFrameSpec:
    """Gaussian Gabor system on Z_P with integer lattice steps.

    The window samples ``exp(-pi x^2)`` at ``x = i / sqrt(P)`` (periodised),
    so it is its own DFT up to scaling and the lattice density is
    ``time_step * freq_step / P`` with critical value 1.
    """

    P: int
    time_step: int
    freq_step: int

    def __post_init__(self):
        for step in (self.time_step, self.freq_step):
            if step < 1 or self.P % step:
                raise ValueError(f"lattice step {step} must divide P={self.P}")

    @property
    def density(self):
        return self.time_step * self.freq_step / self.P

    def window(self):
        i = np.arange(self.P)
        wraps = np.arange(-3, 4)[:, None] * self.P
        return np.exp(-np.pi * (i[None, :] - wraps) ** 2 / self.P).sum(axis=0)

    def analysis_matrix(self):
        """Rows ``conj(M_l T_k g)`` so that ``C f = analysis_matrix() @ f``."""
        P, g = self.P, self.window()
        x = np.arange(P)
        shifts = np.array([np.roll(g, k) for k in range(0, P, self.time_step)])
        mods = np.exp(2j * np.pi * np.outer(np.arange(0, P, self.freq_step), x) / P)
        atoms = (shifts[:, None, :] * mods[None, :, :]).reshape(-1, P)
        return atoms.conj()


def lattice_for_density(P, density):
    """Divisor steps with the largest density not above ``density``.

    Ties prefer the squarest lattice.
    """
    divs = [d for d in range(1, P + 1) if P % d == 0]
    best = max(((a * b, -abs(math.log(a / b)), a, b)
                for a in divs for b in divs if a * b <= density * P + 1e-9),
               default=None)
    if best is None:
        raise ValueError(f"no lattice on Z_{P} has density <= {density}")
    return GaborFrameSpec(P, best[2], best[3])


def gaussian_frame_bounds(spec):
    """Optimal frame bounds ``(A, B)``: extreme eigenvalues of the frame operator."""
    s = np.linalg.svd(spec.analysis_matrix(), compute_uv=False)
    n_atoms = (spec.P // spec.time_step) * (spec.P // spec.freq_step)
    A = 0.0 if n_atoms < spec.P else float(s[-1] ** 2)
    return A, float(s[0] ** 2)


# -- composition C o Phi_f o E ----------------------------------------------------

def slant_for(n, mu):
    """Largest admissible slant ``n / c`` with ``1 < (n/c)^4 < mu``."""
    best = None
    for c in range(n - 1, 0, -1):
        if (n / c) ** 4 >= mu:
            break
        best = n / c
    if best is None:
        raise ValueError(f"no slant n/c with n={n} satisfies lam^4 < {mu}")
    return best


def delta_train(c, spacing, P):
    """``sum_q c[q mod L] delta_{q spacing}`` on Z_P."""
    c = np.asarray(c, dtype=complex)
    if P % (spacing * c.size):
        raise GridMismatch(f"P={P} is not a multiple of {spacing} * {c.size}")
    f = np.zeros(P, dtype=complex)
    f[::spacing] = np.tile(c, P // (spacing * c.size))
    return f


def fine_pilots(pilots, proto):
    """Fine-grid pilots ``f_n = M_{s_n n_f} f_1``, f_1 the delta train of c."""
    c = pilots.c.c if isinstance(pilots.c, IdentifierSequence) else np.asarray(pilots.c)
    f1 = delta_train(c, proto.n_t, proto.P)
    return np.array([modulate(f1, s * proto.n_f) for s in pilots.offsets])


@dataclass
class SectionResult:
    radius: int
    section_size: int
    sigma_min: float
    sigma_max: float

    @property
    def bound_rhs(self):
        return INSTABILITY_RATIO * self.sigma_max

    @property
    def ratio(self):
        return self.sigma_min / self.sigma_max if self.sigma_max else 0.0


@dataclass
class CompositionReport:
    sections: list
    cells: int
    L: int
    metadata: dict

    @property
    def decreasing(self):
        s = [r.sigma_min for r in self.sections]
        return all(b < a for a, b in zip(s, s[1:]))

    @property
    def unstable(self):
        return self.sections[-1].ratio < INSTABILITY_RATIO

    @property
    def floor_held(self):
        return all(r.ratio >= INSTABILITY_RATIO for r in self.sections)


def composition_instability(plan, pilots, proto, gabor, row=0, radii=None,
                            allow_underspread=False):
    """Singular values of nested sections of ``C o Phi_f o E`` for one row.

    The synthesis family of cell ``j = (n, (mu, nu))`` of the row applies
    the prototype member for cell ``(mu, nu)`` and modulation pair (k, l)
    to pilot ``f_n``; the analysis map takes Gaussian Gabor coefficients
    with lattice ``gabor``. Section ``r`` keeps the members with
    ``max(|k|, |l|) <= r`` for every cell.

    ``pilots`` is a :class:`PilotSet` (delta-train pilots on the fine grid)
    or an explicit N x P array of fine-grid input signals.
    """
    if plan.L != proto.L:
        raise GridMismatch(f"plan L={plan.L} differs from prototype L={proto.L}")
    if gabor.P != proto.P:
        raise GridMismatch("analysis frame and prototype use different P")
    entries = plan.row_entries(row)
    J = len(entries)
    mu_S = J / plan.L
    if J <= plan.L and not allow_underspread:
        raise PlanNotOverspread(
            f"row {row} has {J} cells <= L={plan.L}; instability is not expected")
    if J > plan.L and not 1 < proto.lam**4 < mu_S:
        raise ValueError(f"slant lam={proto.lam:.6g} violates 1 < lam^4 < mu(S)={mu_S:.6g}")

    inputs = fine_pilots(pilots, proto) if isinstance(pilots, PilotSet) else np.asarray(pilots)
    if inputs.shape != (plan.N, proto.P):
        raise GridMismatch(f"need {plan.N} fine-grid pilots of length {proto.P}")

    c_t, c_f = proto.modulations_per_axis()
    C = gabor.analysis_matrix()
    columns, reach = [], []
    for n, cell, _ in entries:
        for k in _box_indices(c_t):
            for l in _box_indices(c_f):
                columns.append(C @ proto.member_apply(cell, k, l, inputs[n]))
                reach.append(max(abs(k), abs(l)))
    columns, reach = np.array(columns).T, np.array(reach)

    full = int(reach.max())
    if radii is None:
        radii = sorted({max(1, round(0.4 * full)), max(1, round(0.7 * full)), full})
    sections = []
    for r in radii:
        s = np.linalg.svd(columns[:, reach <= r], compute_uv=False)
        n_cols = int((reach <= r).sum())
        s_min = 0.0 if n_cols > s.size else float(s[-1])
        sections.append(SectionResult(int(r), n_cols, s_min, float(s[0])))

    metadata = {
        "P": proto.P, "cell_samples": (proto.n_t, proto.n_f), "lam": proto.lam,
        "lam4": proto.lam**4, "mu_S": mu_S,
        "modulations_per_axis": (c_t, c_f),
        "time_step_samples": proto.lam * proto.P / proto.n_f,
        "freq_step_samples": proto.lam * proto.P / proto.n_t,
        "analysis_lattice": (gabor.time_step, gabor.freq_step),
        "analysis_density": gabor.density,
        "target_density": proto.lam**4 / mu_S,
    }
    return CompositionReport(sections, J, plan.L, metadata)


def composition_setup(plan, row=0, cell_samples=15):
    """Prototype and analysis frame sized for an overspread row of ``plan``.

    Uses square cells of ``cell_samples`` samples, the largest slant
    ``n/c`` allowed by ``lam^4 < mu(S)``, and the analysis lattice whose
    density is closest to ``lam^4 / mu(S)`` from below.
    """
    J = plan.row_count(row)
    mu_S = J / plan.L
    n = cell_samples
    lam = slant_for(n, mu_S)
    P = plan.L * n * n
    proto, _ = build_prototype(P, plan.K, plan.L, lam)
    gabor = lattice_for_density(P, lam**4 / mu_S)
    return proto, gabor
