"""Time-frequency calculus on the cyclic group Z_P.

Signals are complex vectors of length P, operators are P x P kernel
matrices ``kappa[x, y]`` acting by ``(H f)[x] = sum_y kappa[x, y] f[y]``,
and spreading functions are P x P arrays ``eta[k, l]`` indexed by
(time shift, frequency shift).

Conventions
-----------
* ``T_k f[x] = f[x - k]`` and ``M_l f[x] = exp(2 pi i l x / P) f[x]``.
* ``pi(k, l) = T_k M_l`` (translation applied after modulation).
* ``H = sum_{k,l} eta[k, l] pi(k, l)``, so ``spreading_of(pi(k0, l0))`` is
  the Kronecker delta at ``(k0, l0)``.

With these conventions ``||eta||_2 * sqrt(P) == ||kappa||_F`` and
``<H f, g> == <eta, stft(g, f)>`` (pairing constant 1).
"""
import numpy as np

PAIRING_CONSTANT = 1.0


def as_signal(x):
    """Return ``x`` as a 1-D complex array, rejecting NaN/Inf entries."""
    x = np.asarray(x, dtype=complex)
    if x.ndim != 1:
        raise ValueError(f"signal must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal has non-finite entries")
    return x


def _as_square(a, name):
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def translate(x, k):
    x = as_signal(x)
    return np.roll(x, int(k) % x.size)


def modulate(x, l):
    x = as_signal(x)
    P = x.size
    return np.exp(2j * np.pi * ((int(l) * np.arange(P)) % P) / P) * x


def tf_shift(x, s):
    """Apply ``pi(k, l) = T_k M_l`` to ``x`` where ``s = (k, l)``."""
    k, l = s
    return translate(modulate(x, l), k)


def tf_shift_matrix(P, k, l):
    """Kernel matrix of ``pi(k, l)`` on Z_P."""
    k, l = int(k) % P, int(l) % P
    y = np.arange(P)
    mat = np.zeros((P, P), dtype=complex)
    mat[(y + k) % P, y] = np.exp(2j * np.pi * ((l * y) % P) / P)
    return mat


def composition_phase(s1, s2, P):
    """Unimodular scalar c with ``pi(s2) pi(s1) = c * pi(s1 + s2)``."""
    (k1, _), (_, l2) = s1, s2
    return np.exp(2j * np.pi * ((l2 * k1) % P) / P)


def spreading_of(kernel):
    """Spreading coefficients ``eta`` of the operator with the given kernel.

    ``eta[k, l] = (1/P) sum_y kappa[y + k, y] exp(-2 pi i l y / P)``, the
    unique coefficients with ``H = sum eta[k, l] pi(k, l)``.
    """
    kernel = _as_square(kernel, "kernel")
    P = kernel.shape[0]
    y = np.arange(P)
    k = np.arange(P)[:, None]
    diagonals = kernel[(y[None, :] + k) % P, y[None, :]]
    return np.fft.fft(diagonals, axis=1) / P


def operator_from_spreading(eta):
    """Kernel matrix of ``sum_{k,l} eta[k, l] pi(k, l)``."""
    eta = _as_square(eta, "spreading function")
    P = eta.shape[0]
    diagonals = np.fft.ifft(eta, axis=1) * P
    y = np.arange(P)
    k = np.arange(P)[:, None]
    kernel = np.empty((P, P), dtype=complex)
    kernel[(y[None, :] + k) % P, y[None, :]] = diagonals
    return kernel


def apply_spreading(eta, f):
    """Compute ``H f`` directly from the spreading coefficients of ``H``."""
    eta = _as_square(eta, "spreading function")
    f = as_signal(f)
    P = f.size
    # (H f)[x] = sum_k D[k, x - k] f[x - k], D the inverse DFT of eta rows
    diagonals = np.fft.ifft(eta, axis=1) * P
    shifted = diagonals * f[None, :]
    out = np.zeros(P, dtype=complex)
    for k in np.flatnonzero(np.any(eta != 0, axis=1)):
        out += np.roll(shifted[k], k)
    return out


def hs_norm(kernel):
    return float(np.linalg.norm(np.asarray(kernel)))


def stft(g, f):
    """Short-time Fourier transform of ``g`` with window ``f``.

    ``V[k, l] = sum_x g[x] exp(-2 pi i l (x - k) / P) conj(f[x - k])``.
    """
    g, f = as_signal(g), as_signal(f)
    if g.size != f.size:
        raise ValueError("g and f must have the same period")
    P = g.size
    x = np.arange(P)
    k = np.arange(P)[:, None]
    # products[k, y] = g[y + k] conj(f[y]) with y = x - k
    products = g[(x[None, :] + k) % P] * np.conj(f)[None, :]
    return np.fft.fft(products, axis=1)


def inner(a, b):
    """Inner product linear in the first argument."""
    return complex(np.vdot(np.asarray(b).ravel(), np.asarray(a).ravel()))


def conjugate_operator(kernel, omega, p, r, xi):
    """Kernel of ``M_omega T_{p-r} H T_r M_{xi-omega}`` by matrix products."""
    kernel = _as_square(kernel, "kernel")
    P = kernel.shape[0]
    left = tf_shift_matrix(P, 0, omega) @ tf_shift_matrix(P, p - r, 0)
    right = tf_shift_matrix(P, r, 0) @ tf_shift_matrix(P, 0, xi - omega)
    return left @ kernel @ right


def conjugate_spreading(eta, omega, p, r, xi):
    """Spreading function of ``M_omega T_{p-r} H T_r M_{xi-omega}``.

    Closed form: translate ``eta`` by ``(p, xi)``, multiply cell ``(k, l)``
    by ``exp(2 pi i (omega k + r l) / P)`` and by the global phase
    ``exp(-2 pi i r xi / P)``.
    """
    eta = _as_square(eta, "spreading function")
    P = eta.shape[0]
    omega, p, r, xi = (int(v) % P for v in (omega, p, r, xi))
    shifted = np.roll(eta, (p, xi), axis=(0, 1))
    k = np.arange(P)[:, None]
    l = np.arange(P)[None, :]
    phase = np.exp(2j * np.pi * (((omega * k + r * l - r * xi) % P) / P))
    return phase * shifted
