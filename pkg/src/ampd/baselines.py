"""Classical comparison systems: zero-forcing, constructive-interference SLP,
and a minimum-phase-distance PSK detector."""

import numpy as np

from .channel import ChannelRealization

_CI_PROBLEM_CACHE: dict = {}


class SingularChannelError(RuntimeError):
    """Zero-forcing requires the K x N_t channel to have full row rank."""


class SolverError(RuntimeError):
    """Convex solve did not reach an optimal point."""


def _matrix_of(h) -> np.ndarray:
    return h.matrix if isinstance(h, ChannelRealization) else np.asarray(h)


def zf_precode(h, s: np.ndarray, power_budget: float) -> np.ndarray:
    """Zero-forcing: x = c * H (H^H H)^-1 s, rescaled so |x|^2 = P exactly."""
    matrix = _matrix_of(h)
    s = np.asarray(s)
    gram = matrix.conj().T @ matrix
    if np.linalg.cond(gram) > 1e12:
        raise SingularChannelError("channel Gram matrix is (near-)singular")
    x0 = matrix @ np.linalg.solve(gram, s)
    norm = np.linalg.norm(x0)
    if norm == 0.0:
        raise SingularChannelError("zero-forcing produced a zero signal")
    return x0 * (power_budget ** 0.5 / norm)


def rotated_rx(h, x: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Noise-free received points rotated so the intended symbol sits on +Re:
    r_k = h_k^H x * conj(s_k)."""
    matrix = _matrix_of(h)
    return (matrix.conj().T @ x) * np.conj(np.asarray(s))


def ci_margin(rotated: np.ndarray, orders: np.ndarray) -> np.ndarray:
    """Per-user constructive-region margin Re(r)*tan(pi/2^M) - |Im(r)|.

    For single-bit users the decision region is the half-plane, so the margin
    is just Re(r).
    """
    rotated = np.atleast_1d(rotated)
    orders = np.broadcast_to(np.asarray(orders), rotated.shape)
    out = np.empty(rotated.shape)
    bpsk = orders == 1
    out[bpsk] = rotated.real[bpsk]
    hi = ~bpsk
    out[hi] = (rotated.real[hi] * np.tan(np.pi / 2.0 ** orders[hi])
               - np.abs(rotated.imag[hi]))
    return out


def _ci_problem(num_antennas: int, num_users: int, orders: tuple[int, ...]):
    """Compiled max-min margin SOCP, cached per shape/order signature."""
    import cvxpy as cp

    key = (num_antennas, num_users, orders)
    if key in _CI_PROBLEM_CACHE:
        return _CI_PROBLEM_CACHE[key]
    u = cp.Variable(2 * num_antennas)
    t = cp.Variable()
    a = cp.Parameter((num_users, 2 * num_antennas))  # rows give Re(rotated rx)
    b = cp.Parameter((num_users, 2 * num_antennas))  # rows give Im(rotated rx)
    sqrt_p = cp.Parameter(nonneg=True)
    constraints = [cp.norm(u, 2) <= sqrt_p]
    re = a @ u
    im = b @ u
    for k in range(num_users):
        if orders[k] == 1:
            constraints.append(re[k] >= t)
        else:
            tan = np.tan(np.pi / 2.0 ** orders[k])
            constraints += [tan * re[k] - im[k] >= t,
                            tan * re[k] + im[k] >= t]
    problem = cp.Problem(cp.Maximize(t), constraints)
    handle = (problem, u, t, a, b, sqrt_p)
    _CI_PROBLEM_CACHE[key] = handle
    return handle


def ci_slp_precode(h, s: np.ndarray, orders, power_budget: float,
                   tol: float = 1e-6) -> np.ndarray:
    """Max-min safety-margin symbol-level precoder over PSK constructive regions.

    Maximizes t such that every user's rotated noise-free point satisfies
    Re*tan(pi/2^M) - |Im| >= t (half-plane for M = 1) and |x|^2 <= P.
    """
    import cvxpy as cp

    if power_budget <= 0:
        raise ValueError("power_budget must be positive")
    matrix = _matrix_of(h)
    s = np.asarray(s)
    order_tuple = tuple(int(m) for m in
                        (orders.orders if hasattr(orders, "orders") else orders))
    nt, k = matrix.shape
    problem, u, t, a, b, sqrt_p = _ci_problem(nt, k, order_tuple)

    # rotated rx w_k^H x with w_k = s_k * h_k; split into real coefficient rows
    w = matrix * s[None, :]
    a.value = np.concatenate([w.real.T, w.imag.T], axis=1)
    b.value = np.concatenate([-w.imag.T, w.real.T], axis=1)
    sqrt_p.value = power_budget ** 0.5
    problem.solve(solver=cp.CLARABEL, tol_gap_abs=tol, tol_gap_rel=tol,
                  tol_feas=tol)
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise SolverError(
            f"CI-SLP solve failed: status={problem.status}, "
            f"margin={t.value}, users={k}, antennas={nt}")
    return u.value[:nt] + 1j * u.value[nt:]


def psk_phase_detect(r_k: complex, order_bits: int) -> int:
    """Nearest-phase PSK detection; ties go to the smaller message index."""
    return int(psk_phase_detect_array(np.array([r_k]), order_bits)[0])


def psk_phase_detect_array(r: np.ndarray, order_bits: int) -> np.ndarray:
    """Vectorized nearest-phase detection, 1-indexed messages."""
    size = 2 ** order_bits
    targets = 2.0 * np.pi * np.arange(1, size + 1) / size
    diff = np.angle(r)[..., None] - targets
    dist = np.abs((diff + np.pi) % (2.0 * np.pi) - np.pi)
    near = dist <= dist.min(axis=-1, keepdims=True) + 1e-12
    out = np.argmax(near, axis=-1) + 1
    return np.where(np.asarray(r) == 0, 1, out)  # r = 0: every point ties
