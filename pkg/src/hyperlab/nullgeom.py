"""Null tetrad algebra: Weyl null decomposition, electric/magnetic parts,
Bel-Robinson contractions, Gauss-equation closure and the exterior-zone
frame-transformation identities for the sphere-adapted tetrads.

Orientation convention: the volume form is fixed by eps_{0123} = +sqrt(-det g)
in coordinates (t, x1, x2, x3).  The sign of sigma flips with orientation, so
identities stated as vanishing are asserted on |sigma|.

Null decomposition (e4 = L-like, e3 = Lb-like, eA orthonormal on the sphere):

    alphab(A,B) = W(e_A, e_3, e_B, e_3)     betab(A) = W(e_A, e_3, e_3, e_4)/2
    varrho      = W(e_3, e_4, e_3, e_4)/4   sigma    = *W(e_3, e_4, e_3, e_4)/4
    beta(A)     = W(e_A, e_4, e_3, e_4)/2   alpha(A,B) = W(e_A, e_4, e_B, e_4)
"""

from dataclasses import dataclass

import numpy as np

from .errors import BadFrame, BadTetrad, Horizon, OutsideZs
from .foliation import frames_at, leaf_scalars
from .metric import curvature_at

TETRAD_TOL = 1e-9


def _levi_civita4():
    eps = np.zeros((4, 4, 4, 4))
    from itertools import permutations
    for p in permutations(range(4)):
        sign = 1.0
        pl = list(p)
        for i in range(4):
            for j in range(i + 1, 4):
                if pl[i] > pl[j]:
                    sign = -sign
        eps[p] = sign
    return eps

_EPS4 = _levi_civita4()


@dataclass
class NullTetrad:
    e4: np.ndarray
    e3: np.ndarray
    eA: np.ndarray          # (2, 4)

    def validate(self, g, tol=TETRAD_TOL):
        e4, e3, eA = self.e4, self.e3, self.eA
        checks = [
            abs(e4 @ g @ e3 + 2.0),
            abs(e4 @ g @ e4),
            abs(e3 @ g @ e3),
            abs(eA[0] @ g @ eA[0] - 1.0),
            abs(eA[1] @ g @ eA[1] - 1.0),
            abs(eA[0] @ g @ eA[1]),
            abs(eA[0] @ g @ e3), abs(eA[0] @ g @ e4),
            abs(eA[1] @ g @ e3), abs(eA[1] @ g @ e4),
        ]
        if max(checks) > tol:
            raise BadTetrad(f"tetrad residual {max(checks):.3e} exceeds {tol:g}")


@dataclass
class WeylNull:
    alpha: np.ndarray       # (2,2) symmetric trace-free
    beta: np.ndarray        # (2,)
    varrho: float
    sigma: float
    betab: np.ndarray
    alphab: np.ndarray


@dataclass
class EMParts:
    E: np.ndarray           # (3,3) symmetric trace-free
    H: np.ndarray


def left_dual(W, g_inv, sqrt_det):
    """*W_abcd = (1/2) eps_abmn W^mn_cd with eps_0123 = +sqrt(-det g)."""
    Wud = np.einsum('ma,nb,abcd->mncd', g_inv, g_inv, W)
    return 0.5 * sqrt_det * np.einsum('abmn,mncd->abcd', _EPS4, Wud)


def right_dual(W, g_inv, sqrt_det):
    Wud = np.einsum('cm,dn,abmn->abcd', g_inv, g_inv, W)
    return 0.5 * sqrt_det * np.einsum('abmn,mncd->abcd', Wud, _EPS4)


def null_decompose(jet, tetrad, W=None):
    """Null decomposition of a Weyl tensor at the jet's point."""
    if W is None:
        W = jet.weyl
    tetrad.validate(jet.g)
    e4, e3, eA = tetrad.e4, tetrad.e3, tetrad.eA
    Wd = left_dual(W, jet.g_inv, jet.sqrt_det)
    c = lambda T, a, b, cc, d: np.einsum('abcd,a,b,c,d->', T, a, b, cc, d)
    alpha = np.array([[c(W, eA[A], e4, eA[B], e4) for B in range(2)]
                      for A in range(2)])
    alphab = np.array([[c(W, eA[A], e3, eA[B], e3) for B in range(2)]
                       for A in range(2)])
    beta = 0.5 * np.array([c(W, eA[A], e4, e3, e4) for A in range(2)])
    betab = 0.5 * np.array([c(W, eA[A], e3, e3, e4) for A in range(2)])
    varrho = 0.25 * c(W, e3, e4, e3, e4)
    sigma = 0.25 * c(Wd, e3, e4, e3, e4)
    return WeylNull(alpha=alpha, beta=beta, varrho=float(varrho),
                    sigma=float(sigma), betab=betab, alphab=alphab)


def em_decompose(jet, frame, which="T", W=None):
    """Electric/magnetic parts of W in the frame {U, spatial triad}.

    which = "T": U is the static observer with triad {N, eA};
    which = "B": U is the hyperboloid normal with triad {Nbar, eA}.
    """
    if W is None:
        W = jet.weyl
    if which == "T":
        U, triad = frame.T, np.stack([frame.N, frame.eA[0], frame.eA[1]])
    elif which == "B":
        U, triad = frame.B, np.stack([frame.Nbar, frame.eA[0], frame.eA[1]])
    else:
        raise BadFrame(f"which must be 'T' or 'B', got {which!r}")
    g = jet.g
    if abs(U @ g @ U + 1.0) > 1e-8:
        raise BadFrame("frame vector U is not unit timelike")
    Wd = left_dual(W, jet.g_inv, jet.sqrt_det)
    E = np.einsum('abcd,a,ib,c,jd->ij', W, U, triad, U, triad)
    H = np.einsum('abcd,a,ib,c,jd->ij', Wd, U, triad, U, triad)
    return EMParts(E=0.5 * (E + E.T), H=0.5 * (H + H.T))


def bel_robinson_scalar(jet, X, Y, Z, U, W=None):
    """Q(W)(X,Y,Z,U) = (W_arcs W_b^r_d^s + *W_arcs *W_b^r_d^s) X^a Y^b Z^c U^d."""
    if W is None:
        W = jet.weyl
    Wd = left_dual(W, jet.g_inv, jet.sqrt_det)
    total = 0.0
    for T in (W, Wd):
        Tu = np.einsum('rm,sn,amcn->arcs', jet.g_inv, jet.g_inv, T)
        total += np.einsum('arcs,brds,a,b,c,d->', T, Tu, X, Y, Z, U)
    return float(total)


def gauss_residual(K, trchi, trchib, chihat, chibhat, w_llbllb, schouten_ang=0.0):
    """Residual of the sphere Gauss equation
    K + trchi trchib / 4 - chihat.chibhat / 2 + W(L,Lb,L,Lb)/4 - S_ang/2."""
    dot = float(np.sum(np.asarray(chihat) * np.asarray(chibhat)))
    return float(K + 0.25 * trchi * trchib - 0.5 * dot
                 + 0.25 * w_llbllb - 0.5 * schouten_ang)


def schwarzschild_closed_forms(M, r):
    """Exterior-zone closed forms for the static sphere-adapted tetrad."""
    if r <= 2.0 * M:
        raise Horizon(f"r={r:.6g} is at or inside the horizon 2M={2*M:.6g}")
    R = r + 2.0 * M
    return {
        "varrho_hat_n4": -4.0 * M / R**3,
        "trchi_s": 2.0 / R,
        "trchib_s": -2.0 / R,
        "K_sphere": 1.0 / R**2,
        "gamma_r": r + 4.0 * M * np.log(r - 2.0 * M) if M > 0 else r,
    }


def hat_tetrad(jet):
    """Static canonical tetrad {n^-1 Lhat, n^-1 Lbhat, ehat_A} at the jet point."""
    x = jet.x
    r = float(np.linalg.norm(x[1:]))
    n = float(jet.lapse)
    rad = np.zeros(4)
    rad[1:] = x[1:] / r
    Lhat = np.zeros(4)
    Lhat[0] = 1.0
    Lhat[1:] = n * n * rad[1:]
    Lbhat = np.zeros(4)
    Lbhat[0] = 1.0
    Lbhat[1:] = -n * n * rad[1:]
    g = jet.g
    cands = np.eye(4)[1:]
    order = np.argsort([abs(c[1:] @ rad[1:]) for c in cands])
    eA = []
    for idx in order:
        c = cands[idx].copy()
        c -= (c[1:] @ rad[1:]) * rad
        for e in eA:
            c = c - (c @ g @ e) * e
        nc = np.sqrt(c @ g @ c)
        if nc > 1e-12:
            eA.append(c / nc)
        if len(eA) == 2:
            break
    return NullTetrad(e4=Lhat / n, e3=Lbhat / n, eA=np.stack(eA))


def intrinsic_tetrad(frames):
    """Canonical tetrad {L, Lb, eA} of the hyperboloidal foliation."""
    return NullTetrad(e4=frames.L, e3=frames.Lb, eA=frames.eA)


def radial_overlap_at(frames):
    """varpi = N(r) and the angular gradient (snr_A = e_A(r)) at a frame point."""
    x = frames.x
    r = float(np.linalg.norm(x[1:]))
    rad = x[1:] / r
    varpi = float(frames.N[1:] @ rad)
    snr = frames.eA[:, 1:] @ rad
    return varpi, snr


def varrho_consistency(model, rec, rho, r_out_margin=0.0):
    """Two computation paths for varrho in the exterior zone, plus betab.

    Direct: null decomposition of the pointwise Weyl tensor in the intrinsic
    tetrad.  Formula: varrho = n^-4 varrho_hat (1 + (3/2)(n^-2 varpi^2 - 1)),
    betab_A = -(3/2) n^-6 varpi varrho_hat e_A(r).
    """
    frames = frames_at(model, rec, rho)
    x = frames.x
    r = float(np.linalg.norm(x[1:]))
    if model.kind != "schwarzschild" and r < model.r_out + r_out_margin:
        raise OutsideZs(f"r={r:.6g} below the exterior zone r_out={model.r_out:.6g}")
    jet = curvature_at(model, x)
    dec = null_decompose(jet, intrinsic_tetrad(frames))
    varpi, snr = radial_overlap_at(frames)
    n = float(jet.lapse)
    vr_hat_n4 = -4.0 * model.mass / (r + 2.0 * model.mass) ** 3
    varrho_formula = vr_hat_n4 * (1.0 + 1.5 * ((varpi / n) ** 2 - 1.0))
    betab_formula = -1.5 * vr_hat_n4 * varpi * snr / n**2
    return {
        "varrho_direct": dec.varrho,
        "varrho_formula": float(varrho_formula),
        "betab_direct": dec.betab,
        "betab_formula": betab_formula,
        "dec": dec,
        "varpi": varpi,
        "snr": snr,
    }


def weyl_current(dS_cov):
    """J_bcd = (1/2)(cov_c S_bd - cov_d S_bc) from the covariant derivative of
    the Schouten tensor (dS_cov[m, a, b] = cov_m S_ab)."""
    return 0.5 * (np.einsum('cbd->bcd', dS_cov) - np.einsum('dbc->bcd', dS_cov))


def covariant_schouten_derivative(jet, S, dS_partial):
    """cov_m S_ab = d_m S_ab - G^l_ma S_lb - G^l_mb S_al."""
    return (dS_partial
            - np.einsum('lma,lb->mab', jet.gamma, S)
            - np.einsum('lmb,al->mab', jet.gamma, S))


def h_metric(jet, T):
    """Riemannian auxiliary metric h_ab = g_ab + 2 T_a T_b and its inverse."""
    T_low = jet.g @ T
    h = jet.g + 2.0 * np.outer(T_low, T_low)
    h_inv = jet.g_inv + 2.0 * np.outer(T, T)
    return h, h_inv


def q_oneform(jet, F, dF_cov, T, kg_mass=1.0):
    """Energy-momentum tensor of a covariant 1-form F with the h-metric trace:

    Q_mn = h^cd [cov_m F_c cov_n F_d
                 - g_mn (cov^a F_c cov_a F_d + m F_c F_d)/2].
    """
    _, h_inv = h_metric(jet, T)
    grad2 = np.einsum('ab,ac,bd->cd', jet.g_inv, dF_cov, dF_cov)
    inner = np.einsum('cd,mc,nd->mn', h_inv, dF_cov, dF_cov)
    trace = np.einsum('cd,cd->', h_inv, grad2) + kg_mass * np.einsum(
        'cd,c,d->', h_inv, F, F)
    return inner - 0.5 * jet.g * trace
