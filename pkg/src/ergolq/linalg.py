"""Dense symmetric-matrix helpers shared by the solvers."""

from __future__ import annotations

import numpy as np

from .errors import CorruptedStateError, DimensionError, NotMeanSquareStableError

MAX_SPECTRAL_ORDER = 16
N_FLOOR = 0.5


def sym(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _square(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    return M


def loewner_leq(P1, P2, tol: float = 0.0) -> bool:
    """True iff ``P2 - P1`` is PSD up to ``-tol`` in its smallest eigenvalue.

    Accepts single matrices or stacks with a leading axis; a stack passes
    only if every slice does.
    """
    P1 = np.asarray(P1, dtype=float)
    P2 = np.asarray(P2, dtype=float)
    if P1.shape != P2.shape:
        raise DimensionError(f"order mismatch: {P1.shape} vs {P2.shape}")
    return bool(np.min(np.linalg.eigvalsh(sym(P2 - P1))) >= -tol)


def spd_solve(N, v):
    """Solve ``N w = v`` for ``N = I + (PSD term)``.

    Raises:
        CorruptedStateError: if the smallest eigenvalue of ``N`` is below 0.5,
            which means the Riccati iterate feeding ``N`` lost semidefiniteness.
    """
    N = sym(_square(N, "N"))
    v = np.asarray(v, dtype=float)
    lam_min = float(np.min(np.linalg.eigvalsh(N)))
    if lam_min < N_FLOOR:
        raise CorruptedStateError(f"N has min eigenvalue {lam_min:.3e} < {N_FLOOR}; Riccati state lost PSD")
    L = np.linalg.cholesky(N)
    y = np.linalg.solve(L, v)
    return np.linalg.solve(L.T, y)


def _moment_operator(H, Ks):
    H = _square(H, "H")
    n = H.shape[0]
    eye = np.eye(n)
    # column-major vec: vec(HM) = (I kron H) vec M, vec(M H^T) = (H kron I) vec M
    op = np.kron(eye, H) + np.kron(H, eye)
    for K in Ks:
        K = _square(K, "K")
        if K.shape != H.shape:
            raise DimensionError(f"K shape {K.shape} does not match H shape {H.shape}")
        op = op + np.kron(K, K)
    return op


def meansquare_abscissa(H, Ks=()) -> float:
    """Spectral abscissa of ``M -> H M + M H* + sum K M K*``.

    A negative value certifies mean-square exponential stability of
    ``dX = H X dt + sum K^i X dW^i`` with ``E|X_t|^2`` decaying at least at
    that rate.
    """
    H = _square(H, "H")
    if H.shape[0] > MAX_SPECTRAL_ORDER:
        raise DimensionError(f"order {H.shape[0]} exceeds spectral-test cap {MAX_SPECTRAL_ORDER}")
    return float(np.max(np.linalg.eigvals(_moment_operator(H, Ks)).real))


def lyapunov_solve(H, Ks, RHS):
    """Solve ``H M + M H* + sum K M K* + RHS = 0`` through the vectorized system."""
    H = _square(H, "H")
    RHS = _square(RHS, "RHS")
    n = H.shape[0]
    op = _moment_operator(H, Ks)
    b = -RHS.reshape(-1, order="F")
    try:
        x = np.linalg.solve(op, b)
    except np.linalg.LinAlgError:
        raise NotMeanSquareStableError("moment operator is singular: not mean-square stable") from None
    M = sym(x.reshape(n, n, order="F"))
    resid = np.linalg.norm(H @ M + M @ H.T + sum(K @ M @ K.T for K in Ks) + RHS)
    if not np.isfinite(resid) or resid > 1e-9 * (np.linalg.norm(RHS) + 1.0):
        raise NotMeanSquareStableError(f"moment operator is ill-conditioned (residual {resid:.2e})")
    return M


def min_eig(P) -> float:
    return float(np.min(np.linalg.eigvalsh(sym(np.asarray(P, dtype=float)))))
