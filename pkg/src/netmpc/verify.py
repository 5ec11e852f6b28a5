"""Solver-independent checks of the certificates produced online.

Every check returns a :class:`CertificateReport`; ``passed`` holds exactly
when the worst margin is at least ``-tol``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .geometry import Ellipsoid, Polytope, minkowski_contained
from .netmodel import Network, SubsystemModel, assemble_global

DEFAULT_SAMPLES = 200


@dataclass
class CertificateReport:
    name: str
    passed: bool
    margin: float
    witness: object = None
    seed: int | None = None

    def __bool__(self):
        return self.passed


def _report(name, margin, tol, witness=None, seed=None) -> CertificateReport:
    ok = bool(margin >= -tol)
    return CertificateReport(name, ok, float(margin), None if ok else witness, seed)


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def check_schur(mat, margin: float = 0.0) -> CertificateReport:
    """Pass iff the spectral radius is at most ``1 - margin``."""
    M = np.atleast_2d(np.asarray(mat, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    rho = spectral_radius(M)
    return _report("schur", (1.0 - margin) - rho, 0.0, witness=rho)


def _coupling_samples(rng, a_max, Y, n_samples, m0):
    """Sum over in-neighbors of draws from ``a_j * Yhat_j`` (boundary and interior mixed 1:1)."""
    w = np.zeros((n_samples, m0))
    for a, Yj in zip(a_max, Y):
        if a <= 0:
            continue
        w += Ellipsoid(a * Yj.c, Yj.Q / a**2).sample(rng, n_samples, boundary_fraction=0.5)
    return w


def check_rpi_sampled(Z, alpha, K, model: SubsystemModel, unc, n_samples: int = DEFAULT_SAMPLES, seed: int = 0,
                      tol: float = 1e-6) -> CertificateReport:
    """Sampled robust invariance of ``{e : e^T Z e <= alpha^2}`` under ``A + B K``.

    ``unc`` supplies ``a_max``, the outer output ellipsoids ``Y`` of the
    in-neighbors and the outer noise ellipsoid ``noise`` (``None`` = no noise).
    Tube points are taken on the boundary, noise on the boundary of its
    ellipsoid, coupling inputs half on the boundary and half inside.
    """
    rng = np.random.default_rng(seed)
    Z = np.asarray(Z, dtype=float)
    n = model.n
    AK = model.A + model.B @ np.atleast_2d(K)
    if alpha > 0:
        e = Ellipsoid.tube(Z, alpha).sample(rng, n_samples, boundary_fraction=1.0)
    else:
        e = np.zeros((n_samples, n))
    w = _coupling_samples(rng, unc.a_max, unc.Y, n_samples, model.m0)
    d = unc.noise.sample(rng, n_samples, boundary_fraction=1.0) if unc.noise is not None else np.zeros((n_samples, n))
    nxt = e @ AK.T + w @ model.E.T + d
    lvl = np.einsum("ij,jk,ik->i", nxt, Z, nxt)
    scale = alpha**2 if alpha > 0 else 1.0
    margins = (alpha**2 - lvl) / scale
    k = int(np.argmin(margins))
    return _report("rpi_sampled", margins[k], tol, witness={"e": e[k], "w": w[k], "d": d[k]}, seed=seed)


def check_global_lyapunov(network: Network, gains: Mapping, true_params: Mapping, P_global,
                          epsilon: float = 1e-6) -> CertificateReport:
    """Pass iff ``P - A_cl^T P A_cl >= epsilon I`` for the closed loop at the true couplings."""
    A, B, _, _ = assemble_global(network, true_params)
    from scipy.linalg import block_diag

    K = block_diag(*[np.atleast_2d(gains[s.id]) for s in network])
    Acl = A + B @ K
    P = np.asarray(P_global, dtype=float)
    lo = float(np.linalg.eigvalsh(P - Acl.T @ P @ Acl)[0])
    return _report("global_lyapunov", lo - epsilon, 0.0, witness=lo)


def check_passivity_samples(model: SubsystemModel, T, Gamma, D, P, K_o, z_set: Ellipsoid, unc,
                            n_samples: int = DEFAULT_SAMPLES, seed: int = 0, tol: float = 1e-9,
                            w_zero: bool = False) -> CertificateReport:
    """Sampled strict passivity ``|z+|_P^2 - |z|_P^2 <= y~^T w - |z|_Gamma^2`` with ``y~ = C z + D w``."""
    rng = np.random.default_rng(seed)
    z = z_set.sample(rng, n_samples, boundary_fraction=0.5)
    if w_zero:
        w = np.zeros((n_samples, model.m0))
    else:
        w = _coupling_samples(rng, unc.a_max, unc.Y, n_samples, model.m0)
    AK = model.A + model.B @ np.atleast_2d(K_o) @ np.asarray(T)
    zp = z @ AK.T + w @ model.E.T
    q = lambda X, M: np.einsum("ij,jk,ik->i", X, M, X)  # noqa: E731
    ytil = z @ model.C.T + w @ np.asarray(D).T
    lhs = q(zp, P) - q(z, P)
    rhs = np.einsum("ij,ij->i", ytil, w) - q(z, Gamma)
    margins = rhs - lhs
    k = int(np.argmin(margins))
    return _report("passivity_sampled", margins[k], tol, witness={"z": z[k], "w": w[k]}, seed=seed)


def input_image(K, Z, alpha) -> Ellipsoid | None:
    """``K`` applied to the tube, as an ellipsoid in input space (``None`` when degenerate)."""
    S = alpha**2 * K @ np.linalg.solve(Z, K.T)
    if alpha <= 0 or np.linalg.eigvalsh(S)[0] <= 1e-14 * max(1.0, np.abs(S).max()):
        return None
    return Ellipsoid(np.zeros(K.shape[0]), np.linalg.inv(S))


def check_containment(model: SubsystemModel, Z, alpha, K, g, h, tol: float = 1e-8):
    """Exact support-function tests that tightened set plus tube stays inside the original set.

    Returns ``(state_report, input_report)``.
    """
    K = np.atleast_2d(K)
    tube = Ellipsoid.tube(Z, alpha) if alpha > 0 else None
    ok_x, mx = minkowski_contained(Polytope.from_rows(model.G).scaled(g), tube, Polytope.from_rows(model.G), tol)
    img = input_image(K, Z, alpha)
    H = model.H
    tight = Polytope.from_rows(H).scaled(h)
    if img is not None:
        ok_u, mu = minkowski_contained(tight, img, Polytope.from_rows(H), tol)
    else:
        # rank-deficient image: add the exact support alpha * sqrt(r K Z^-1 K^T r^T) by hand
        ok_u, mu = minkowski_contained(tight, None, Polytope.from_rows(H), tol)
        ext = np.array([alpha * np.sqrt(max(r @ K @ np.linalg.solve(Z, K.T) @ r, 0.0)) for r in H])
        mu = mu - ext
    return (_report("state_containment", float(mx.min()), tol, witness=mx),
            _report("input_containment", float(mu.min()), tol, witness=mu))


def check_rowsums(Gamma, D, unc, epsilon: float = 1e-6, tol: float = 1e-8) -> CertificateReport:
    """Diagonal dominance of the passivity certificates against the coupling row sums."""
    gam = np.diag(np.atleast_2d(Gamma))
    dd = np.diag(np.atleast_2d(D))
    m1 = gam - epsilon - (unc.U + unc.V)
    m2 = 1.0 - dd * unc.W
    margin = float(min(m1.min(), m2.min()))
    return _report("rowsums", margin, tol, witness=(m1, m2))


def check_tightened_plan(model: SubsystemModel, raw, xi: float, tol: float = 1e-8) -> CertificateReport:
    """Nominal plan inside the tightened sets and equilibrium inside their ``xi``-scaled copies."""
    G, H = model.G, model.H
    m = [raw.g - (raw.x[:-1] @ G.T).max(), raw.h - (raw.u @ H.T).max(),
         xi * raw.g - (G @ raw.xe).max(), xi * raw.h - (H @ raw.ue).max()]
    return _report("tightened_plan", float(min(m)), tol, witness=m)


# ---------------------------------------------------------------------------
# explicit matrix forms of the ingredient inequalities


def lmi_blocks(model: SubsystemModel, base, unc, raw) -> dict:
    """Numeric matrices of every ingredient inequality at a decision ``raw``.

    Assembled directly from the decision values (not from the solver's
    program), so their eigenvalues give an independent feasibility check.
    """
    n, m0, k = model.n, model.m0, unc.k
    A, B, C, E = model.A, model.B, model.C, model.E
    Z, P, K_o = base.Z, base.P, base.K_o
    a = raw.alpha
    PhiK = A * a + B @ K_o @ raw.Phi
    out = {}

    # tube invariance
    Ecal = np.hstack([E] * k) if k else np.zeros((n, 0))
    Ylam = np.zeros((k * m0, k * m0))
    tau = np.zeros((k * m0, 1))
    corner = a - raw.lam
    for j, (aj, Yj) in enumerate(zip(unc.a_max, unc.Y)):
        sl = slice(j * m0, (j + 1) * m0)
        Ylam[sl, sl] = raw.lam_j[j] * Yj.Q
        tau[sl, 0] = aj * Yj.c
        corner -= raw.lam_j[j] * aj**2 * (1 - Yj.c @ Yj.Q @ Yj.c)
    parts_diag = [raw.lam * Z, Ylam]
    last = [PhiK, Ecal]
    cross = [np.zeros((n, 1)), -Ylam @ tau]
    if unc.noise is not None:
        Xh, cd = unc.noise.Q, unc.noise.c
        parts_diag.append(raw.lam_d * Xh)
        last.append(np.eye(n))
        cross.append(-raw.lam_d * (Xh @ cd)[:, None])
        corner -= raw.lam_d * (1 - cd @ Xh @ cd)
    dims = [p.shape[0] for p in parts_diag]
    top = sum(dims)
    S = np.zeros((top + 1 + n, top + 1 + n))
    o = 0
    for blk, cr, ls in zip(parts_diag, cross, last):
        d = blk.shape[0]
        S[o:o + d, o:o + d] = blk
        S[o:o + d, top:top + 1] = cr
        S[top:top + 1, o:o + d] = cr.T
        S[top + 1:, o:o + d] = ls
        S[o:o + d, top + 1:] = ls.T
        o += d
    S[top, top] = corner
    S[top + 1:, top + 1:] = a * np.linalg.inv(Z)
    out["rpi"] = S

    # passivity
    out["passivity"] = np.block([
        [a * P - raw.GammaS, 0.5 * a * C.T, PhiK.T],
        [0.5 * a * C, raw.DS, a * E.T],
        [PhiK, a * E, a * np.linalg.inv(P)],
    ])

    for j, Gj in enumerate(model.G):
        out[f"state_{j}"] = np.block([[raw.mu[j] * Z, -0.5 * a * Gj[:, None]],
                                      [-0.5 * a * Gj[None, :], np.array([[1 - raw.mu[j] - raw.g]])]])
    KPhi = K_o @ raw.Phi
    for j, Hj in enumerate(model.H):
        out[f"input_{j}_gain"] = np.block([[raw.Minv, KPhi], [KPhi.T, raw.nu[j] * Z]])
        MH = 0.5 * raw.Minv @ Hj[:, None]
        out[f"input_{j}_box"] = np.block([[raw.Minv, MH], [MH.T, np.array([[1 - raw.nu[j] - raw.h]])]])
    return out


def check_lmis(model: SubsystemModel, base, unc, raw, tol: float = 1e-7) -> CertificateReport:
    blocks = lmi_blocks(model, base, unc, raw)
    eigs = {name: float(np.linalg.eigvalsh(0.5 * (M + M.T))[0]) for name, M in blocks.items()}
    worst = min(eigs, key=eigs.get)
    return _report("lmi_eigen", eigs[worst], tol, witness={"block": worst, "eigs": eigs})
