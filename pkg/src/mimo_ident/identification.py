"""MIMO channel identification from one output vector per receive antenna.

Input ``n`` sends the delta-train pilot of ``c`` shifted in frequency by
``offsets[n]`` grid cells. Output ``m`` is linear in the stacked spreading
coefficients of row ``m``; its matrix collects the A(c) columns at the
shifted cells of every subchannel in that row. Rows decouple, so both
recovery and the stability constants are computed row by row.
"""
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, RankDeficient, ShapeMismatch
from .geometry import MimoSupportPlan
from .spark import IdentifierSequence, RANK_RTOL, build_A
from .tfcore import modulate, operator_from_spreading
from .util import complex_gaussian, make_rng


@dataclass(frozen=True)
class PilotSet:
    c: IdentifierSequence
    K: int
    offsets: tuple

    @classmethod
    def for_plan(cls, plan, c):
        if not isinstance(c, IdentifierSequence):
            c = IdentifierSequence(c)
        return cls(c, plan.K, tuple(plan.offsets))


@dataclass
class MimoChannel:
    """Spreading coefficients ``coeffs[(m, n)]`` over the cells of S_mn.

    Coefficient ``i`` of subchannel (m, n) sits on the ``i``-th cell of
    ``plan.supports[m][n].sorted_cells()``.
    """

    plan: MimoSupportPlan
    coeffs: dict

    def __post_init__(self):
        counts = self.plan.cell_counts()
        for m in range(self.plan.M):
            for n in range(self.plan.N):
                v = np.asarray(self.coeffs.get((m, n), np.zeros(0)), dtype=complex)
                if v.shape != (counts[m][n],):
                    raise ShapeMismatch(
                        f"subchannel ({m}, {n}) needs {counts[m][n]} coefficients, "
                        f"got shape {v.shape}")
                self.coeffs[(m, n)] = v

    @property
    def M(self):
        return self.plan.M

    @property
    def N(self):
        return self.plan.N

    def row_vector(self, m):
        return np.concatenate([self.coeffs[(m, n)] for n in range(self.N)])

    def hs_norm(self):
        """Block HS norm: root of the summed squared coefficient norms."""
        return float(np.sqrt(sum(np.linalg.norm(v) ** 2 for v in self.coeffs.values())))


@dataclass
class IdentificationResult:
    recovered: dict
    residual: np.ndarray
    A_est: float
    B_est: float
    row_sigmas: list


def random_channel(plan, rng=None):
    rng = make_rng(rng)
    counts = plan.cell_counts()
    coeffs = {(m, n): complex_gaussian(rng, counts[m][n])
              for m in range(plan.M) for n in range(plan.N)}
    return MimoChannel(plan, coeffs)


def _check_pilot(plan, c, K=None):
    if not isinstance(c, IdentifierSequence):
        c = IdentifierSequence(c)
    if c.L != plan.L or (K is not None and K != plan.K):
        raise GridMismatch(
            f"pilot grid (K={K}, L={c.L}) does not match plan (K={plan.K}, L={plan.L})")
    return c


def row_matrix(plan, c, m):
    """L x (cells in row m) matrix mapping row coefficients to output m."""
    c = _check_pilot(plan, c)
    A = build_A(c, plan.K)
    cols = [mu * plan.L + nu for _, _, (mu, nu) in plan.row_entries(m)]
    return A[:, cols]


def _sigmas(R):
    if R.shape[1] == 0:
        return np.zeros(0)
    s = np.linalg.svd(R, compute_uv=False)
    if R.shape[1] > R.shape[0]:
        s = np.concatenate([s, np.zeros(R.shape[1] - R.shape[0])])
    return s


def _checked_sigmas(plan, c, m):
    R = row_matrix(plan, c, m)
    s = _sigmas(R)
    if s.size and s[-1] <= RANK_RTOL * s[0]:
        raise RankDeficient(
            f"row {m}: {R.shape[1]} cells on {R.shape[0]} measurements, "
            f"sigma_min={s[-1]:.3e} <= {RANK_RTOL:g} * sigma_max",
            row=m, sigma_min=float(s[-1]), sigma_max=float(s[0]))
    return R, s


def simulate_output(ch, pilots, noise_sigma=0.0, rng=None):
    """Receive vectors ``y_m = R_m x_m + noise`` for every output antenna.

    Noise is circular complex Gaussian with ``E|n_i|^2 = noise_sigma**2``.
    """
    plan = ch.plan
    if tuple(pilots.offsets) != tuple(plan.offsets):
        raise GridMismatch("pilot offsets differ from the plan's offsets")
    c = _check_pilot(plan, pilots.c, pilots.K)
    rng = make_rng(rng) if noise_sigma else None
    out = []
    for m in range(plan.M):
        y = row_matrix(plan, c, m) @ ch.row_vector(m)
        if noise_sigma:
            y = y + complex_gaussian(rng, plan.L, noise_sigma)
        out.append(y)
    return out


def simulate_output_signal_domain(ch, pilots):
    """Literal ``g_m = sum_n H_mn f_n`` on Z_L; valid for K = 1 only.

    ``f_n = M_{s_n} c`` and H_mn carries coefficient ``i`` on the spreading
    cell ``(-mu, nu)`` of its ``i``-th grid cell ``(mu, nu)``.
    """
    plan = ch.plan
    if plan.K != 1:
        raise GridMismatch("the signal-domain model needs K = 1")
    c = _check_pilot(plan, pilots.c, pilots.K).c
    L = plan.L
    outs = []
    for m in range(plan.M):
        g = np.zeros(L, dtype=complex)
        for n in range(plan.N):
            eta = np.zeros((L, L), dtype=complex)
            for coef, (mu, nu) in zip(ch.coeffs[(m, n)],
                                      plan.supports[m][n].sorted_cells()):
                eta[(-mu) % L, nu] = coef
            g += operator_from_spreading(eta) @ modulate(c, pilots.offsets[n])
        outs.append(g)
    return outs


def recover(y, plan, c, K=None):
    """Least-squares recovery of every subchannel from the outputs ``y``.

    Raises :class:`RankDeficient` when a row matrix loses column rank
    (always the case with more cells than the L measurements).
    """
    c = _check_pilot(plan, c, K)
    if len(y) != plan.M:
        raise ShapeMismatch(f"expected {plan.M} output vectors, got {len(y)}")
    recovered, residual, sig = {}, np.zeros(plan.M), []
    for m in range(plan.M):
        ym = np.asarray(y[m], dtype=complex)
        if ym.shape != (plan.L,):
            raise ShapeMismatch(f"output {m} must have length {plan.L}")
        R, s = _checked_sigmas(plan, c, m)
        sig.append(s)
        x = np.linalg.lstsq(R, ym, rcond=None)[0] if R.shape[1] else np.zeros(0)
        norm_y = np.linalg.norm(ym)
        residual[m] = np.linalg.norm(ym - R @ x) / norm_y if norm_y else 0.0
        start = 0
        for n in range(plan.N):
            count = len(plan.supports[m][n])
            recovered[(m, n)] = x[start:start + count]
            start += count
    nonempty = [s for s in sig if s.size]
    A_est = min(s[-1] for s in nonempty) if nonempty else 0.0
    B_est = max(s[0] for s in nonempty) if nonempty else 0.0
    return IdentificationResult(recovered, residual, float(A_est), float(B_est), sig)


def stability_bounds(plan, c, K=None):
    """``(A_est, B_est)``: extreme singular values over all row matrices.

    These are the frame bounds of ``H -> H f`` on the support class, since
    ``||y||^2 = sum_m ||R_m x_m||^2`` and ``||H||^2 = sum_m ||x_m||^2``.
    """
    c = _check_pilot(plan, c, K)
    lo, hi = np.inf, 0.0
    for m in range(plan.M):
        _, s = _checked_sigmas(plan, c, m)
        if s.size:
            lo, hi = min(lo, s[-1]), max(hi, s[0])
    if hi == 0.0:
        return 0.0, 0.0
    return float(lo), float(hi)


def relative_error(ch, recovered):
    num = sum(np.linalg.norm(recovered[key] - v) ** 2 for key, v in ch.coeffs.items())
    den = ch.hs_norm() ** 2
    return float(np.sqrt(num / den)) if den else float(np.sqrt(num))
