from functools import lru_cache
from itertools import combinations, permutations
from logging import Logger
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space

from helpers.Exceptions import ConstraintViolationError, NotCoassociativeError, PreconditionError
from helpers.FormsHelper import GraphSurface, gauss_codazzi_residual
from helpers.GeometryHelper import flat_metric
from helpers.StabilityHelper import ANTI_SELF_DUAL, coassociative_operator, validate_curvature

# 1-based index triples of the positive 3-form, with signs
PHI_TERMS = [(1, 5, 6, 7), (1, 1, 2, 5), (-1, 3, 4, 5), (1, 1, 3, 6), (1, 2, 4, 6), (1, 1, 4, 7), (-1, 2, 3, 7)]
STAR_PHI_TERMS = [
    (1, 1, 2, 3, 4),
    (-1, 1, 2, 6, 7),
    (1, 3, 4, 6, 7),
    (1, 1, 3, 5, 7),
    (1, 2, 4, 5, 7),
    (-1, 1, 4, 5, 6),
    (1, 2, 3, 5, 6),
]

# sum of sign * R[X, Y, A, B] vanishes for every A, B (1-based X, Y)
CURVATURE_IDENTITIES = [
    [(1, 5, 2), (1, 6, 3), (1, 7, 4)],
    [(1, 5, 1), (-1, 6, 4), (1, 7, 3)],
    [(1, 5, 4), (1, 6, 1), (-1, 7, 2)],
    [(-1, 5, 3), (1, 6, 2), (1, 7, 1)],
    [(1, 6, 7), (1, 1, 2), (-1, 3, 4)],
    [(-1, 5, 7), (1, 1, 3), (1, 2, 4)],
    [(1, 5, 6), (1, 1, 4), (-1, 2, 3)],
]
# the first four, read as sum of sign * h[alpha, j, i] = 0 for every tangent i
COASSOCIATIVE_RELATIONS = CURVATURE_IDENTITIES[:4]

TANGENT = slice(0, 4)
NORMAL = slice(4, 7)


def permutation_sign(order: Sequence[int]) -> int:
    sign = 1
    order = list(order)
    for i in range(len(order)):
        for j in range(i + 1, len(order)):
            if order[i] > order[j]:
                sign = -sign
    return sign


def alternating(terms, rank: int) -> np.ndarray:
    """Fully antisymmetric component array of sum(sign * w^{i1...ik}) on R^7"""
    form = np.zeros((7,) * rank)
    for sign, *indices in terms:
        zero_based = [i - 1 for i in indices]
        for order in permutations(range(rank)):
            form[tuple(zero_based[k] for k in order)] = sign * permutation_sign(order)
    return form


class G2Structure:
    """The positive 3-form phi and its dual 4-form on R^7 with the Euclidean metric.
    The sign convention makes deformations of coassociatives anti-self-dual."""

    def __init__(self) -> None:
        self.phi = alternating(PHI_TERMS, 3)
        self.star_phi = alternating(STAR_PHI_TERMS, 4)
        self.metric = np.eye(7)

    def __repr__(self) -> str:
        """Returns the structure as string"""
        return f"phi components: {np.count_nonzero(self.phi) // 6}, hodge residual: {self.hodge_residual():.3g}"

    def cross(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """(X x Y)_A = phi(X, Y, e_A)"""
        return np.einsum("...a,...b,abc->...c", X, Y, self.phi)

    def hodge_star(self) -> np.ndarray:
        """Hodge dual of phi for the orientation e1 ^ ... ^ e7"""
        epsilon = levi_civita()
        return np.einsum("efg,efgabcd->abcd", self.phi, epsilon) / 6.0

    def hodge_residual(self) -> float:
        return float(np.max(np.abs(self.hodge_star() - self.star_phi)))

    def restricted(self, basis: np.ndarray) -> np.ndarray:
        """phi evaluated on the rows of basis"""
        return np.einsum("abc,ia,jb,kc->ijk", self.phi, basis, basis, basis)

    def in_frame(self, frame: np.ndarray) -> np.ndarray:
        return self.restricted(frame)


@lru_cache(maxsize=1)
def levi_civita() -> np.ndarray:
    epsilon = np.zeros((7,) * 7)
    for order in permutations(range(7)):
        epsilon[order] = permutation_sign(order)
    return epsilon


class CoassociativeFrame:
    """Orthonormal frame e1..e7 (rows) adapted to a coassociative 4-plane"""

    def __init__(self, frame: np.ndarray, residual: float) -> None:
        self.frame = frame
        self.residual = residual

    def __repr__(self) -> str:
        """Returns the frame as string"""
        return f"model form residual: {self.residual:.3g}"

    def normal_forms(self, structure: G2Structure) -> np.ndarray:
        """(e_a -| phi) restricted to the tangent rows, for the three normal rows"""
        return np.einsum(
            "abc,na,ib,jc->nij", structure.phi, self.frame[NORMAL], self.frame[TANGENT], self.frame[TANGENT]
        )


def coassoc_frame(
    structure: G2Structure, plane: np.ndarray, e5: np.ndarray, e1: np.ndarray, tolerance: float = 1e-10
) -> CoassociativeFrame:
    """Start from a unit normal e5 and a unit tangent e1, then e2 = e5 x e1, a third tangent
    e3, e4 = e3 x e5, e6 = e1 x e3 and e7 = e3 x e2"""
    basis = np.linalg.qr(np.asarray(plane, dtype=float).T)[0].T
    if basis.shape != (4, 7):
        raise PreconditionError("A coassociative plane needs four spanning vectors in R^7")
    restricted = structure.restricted(basis)
    worst = float(np.max(np.abs(restricted)))
    if worst > tolerance:
        raise NotCoassociativeError(f"phi does not vanish on the plane (max component {worst:.3g})")
    e5 = np.asarray(e5, dtype=float) / np.linalg.norm(e5)
    e1 = np.asarray(e1, dtype=float) / np.linalg.norm(e1)
    if np.max(np.abs(basis @ e5)) > tolerance:
        raise PreconditionError("e5 is not normal to the plane")
    if np.linalg.norm(e1 - basis.T @ (basis @ e1)) > tolerance:
        raise PreconditionError("e1 is not tangent to the plane")
    e2 = structure.cross(e5, e1)
    candidates = basis - np.outer(basis @ e1, e1) - np.outer(basis @ e2, e2)
    e3 = candidates[int(np.argmax(np.linalg.norm(candidates, axis=-1)))]
    e3 = e3 / np.linalg.norm(e3)
    e4 = structure.cross(e3, e5)
    e6 = structure.cross(e1, e3)
    e7 = structure.cross(e3, e2)
    frame = np.vstack([e1, e2, e3, e4, e5, e6, e7])
    residual = float(np.max(np.abs(structure.in_frame(frame) - structure.phi)))
    residual = max(residual, float(np.max(np.abs(frame @ frame.T - np.eye(7)))))
    return CoassociativeFrame(frame, residual)


def curvature_identity_residual(R: np.ndarray) -> np.ndarray:
    """Residuals [k, A, B] of the seven curvature identities of a parallel cross product"""
    R = np.asarray(R, dtype=float)
    residual = np.zeros((7, 7, 7))
    for k, identity in enumerate(CURVATURE_IDENTITIES):
        for sign, X, Y in identity:
            residual[k] += sign * R[X - 1, Y - 1]
    return residual


def coassociative_relation_residual(h: np.ndarray) -> np.ndarray:
    """Residuals [k, i] of the four second fundamental form relations; h is [alpha, i, j]
    with alpha over e5, e6, e7 and i, j over e1..e4"""
    residual = np.zeros((4, 4))
    for k, relation in enumerate(COASSOCIATIVE_RELATIONS):
        for sign, alpha, j in relation:
            residual[k] += sign * h[alpha - 5, j - 1]
    return residual


def ricci(R: np.ndarray) -> np.ndarray:
    return np.einsum("abac->bc", R)


def encapsulated_residual(structure: G2Structure, h: np.ndarray) -> float:
    """max over i of |sum_j e_j x II(e_i, e_j)|"""
    second = np.zeros((4, 4, 7))
    second[..., NORMAL] = np.moveaxis(h, 0, -1)
    tangents = np.eye(7)[TANGENT]
    total = np.einsum("ja,ijb,abc->ic", tangents, second, structure.phi)
    return float(np.max(np.abs(total)))


def symmetric_pair_basis() -> Tuple[List[Tuple[int, int]], np.ndarray]:
    """Algebraic curvature-like tensors spanned by symmetric forms on 2-vectors:
    columns are R flattened, one per unordered pair of index pairs"""
    pairs = list(combinations(range(7), 2))
    columns = []
    for first, second in combinations(range(len(pairs)), 2):
        columns.append((pairs[first], pairs[second]))
    for p in range(len(pairs)):
        columns.append((pairs[p], pairs[p]))
    basis = np.zeros((7**4, len(columns)))
    for c, ((a, b), (x, y)) in enumerate(columns):
        R = np.zeros((7, 7, 7, 7))
        for (i, j, k, l), sign in (((a, b, x, y), 1), ((b, a, x, y), -1), ((a, b, y, x), -1), ((b, a, y, x), 1)):
            R[i, j, k, l] = sign
            R[k, l, i, j] = sign
        basis[:, c] = R.ravel()
    return pairs, basis


@lru_cache(maxsize=1)
def curvature_kernel() -> np.ndarray:
    """Orthonormal basis (flattened R, dim) of curvature tensors obeying the first Bianchi
    identity and the seven cross-product identities"""
    _, basis = symmetric_pair_basis()
    tensors = basis.T.reshape(-1, 7, 7, 7, 7)
    bianchi = tensors + np.einsum("nabcd->nacdb", tensors) + np.einsum("nabcd->nadbc", tensors)
    identities = np.stack([curvature_identity_residual(t) for t in tensors])
    constraints = np.concatenate([bianchi.reshape(len(tensors), -1), identities.reshape(len(tensors), -1)], axis=1)
    coefficients = null_space(constraints.T)
    kernel = basis @ coefficients
    return np.linalg.qr(kernel)[0]


@lru_cache(maxsize=1)
def second_fundamental_form_kernel() -> np.ndarray:
    """Orthonormal basis (flattened h[alpha, i, j], dim) of symmetric forms obeying the relations"""
    columns = []
    for alpha in range(3):
        for i in range(4):
            for j in range(i, 4):
                h = np.zeros((3, 4, 4))
                h[alpha, i, j] = h[alpha, j, i] = 1.0
                columns.append(h.ravel())
    basis = np.array(columns).T
    constraints = np.stack([coassociative_relation_residual(c.reshape(3, 4, 4)).ravel() for c in basis.T])
    return np.linalg.qr(basis @ null_space(constraints.T))[0]


class ConstrainedExtrinsicSample:
    """Second fundamental form h[alpha, i, j] (alpha over e5..e7) and ambient curvature R
    of a coassociative 4-plane, both satisfying the G2 linear constraints"""

    def __init__(self, h: np.ndarray, R: np.ndarray) -> None:
        self.h = np.asarray(h, dtype=float)
        self.R = np.asarray(R, dtype=float)

    def __repr__(self) -> str:
        """Returns the sample size as string"""
        return f"|h|: {np.linalg.norm(self.h):.6g}, |R|: {np.linalg.norm(self.R):.6g}"

    @classmethod
    def random(cls, rng: np.random.Generator, curvature: bool = True, extrinsic: bool = True):
        """Projection of Gaussian noise onto the constraint kernels"""
        h = np.zeros((3, 4, 4))
        R = np.zeros((7, 7, 7, 7))
        if extrinsic:
            kernel = second_fundamental_form_kernel()
            h = (kernel @ rng.standard_normal(kernel.shape[1])).reshape(3, 4, 4)
        if curvature:
            kernel = curvature_kernel()
            R = (kernel @ rng.standard_normal(kernel.shape[1])).reshape(7, 7, 7, 7)
        return cls(h, R)

    def residuals(self) -> dict:
        return {
            "symmetry": float(np.max(np.abs(self.h - np.swapaxes(self.h, 1, 2)))),
            "relations": float(np.max(np.abs(coassociative_relation_residual(self.h)))),
            "trace": float(np.max(np.abs(np.einsum("aii->a", self.h)))),
            "curvature_identities": float(np.max(np.abs(curvature_identity_residual(self.R)))),
            "ricci": float(np.max(np.abs(ricci(self.R)))),
        }

    def validate(self, tolerance: float = 1e-10) -> None:
        scale = max(1.0, float(np.max(np.abs(self.R))), float(np.max(np.abs(self.h))))
        failed = {name: value for name, value in self.residuals().items() if value > tolerance * scale}
        if failed:
            details = ", ".join(f"{name}={value:.3g}" for name, value in failed.items())
            raise ConstraintViolationError(f"Sample violates its constraints: {details}")
        validate_curvature(self.R)

    def rotated(self, frame: np.ndarray) -> "ConstrainedExtrinsicSample":
        """Components in a new orthonormal frame whose rows 1-4 span the same tangent plane"""
        R = np.einsum("abcd,Aa,Bb,Cc,Dd->ABCD", self.R, frame, frame, frame, frame, optimize=True)
        second = np.zeros((4, 4, 7))
        second[..., NORMAL] = np.moveaxis(self.h, 0, -1)
        tangent = frame[TANGENT][:, TANGENT]
        normal = frame[NORMAL]
        h = np.einsum("ijc,Ii,Jj,Ac->AIJ", second, tangent, tangent, normal)
        return ConstrainedExtrinsicSample(h, R)


def intrinsic_curvature(sample: ConstrainedExtrinsicSample) -> np.ndarray:
    """Gauss equation: R^Sigma_ijkl = R_ijkl + <h_ik, h_jl> - <h_il, h_jk>"""
    R = sample.R[TANGENT, TANGENT, TANGENT, TANGENT]
    return R + np.einsum("aik,ajl->ijkl", sample.h, sample.h) - np.einsum("ail,ajk->ijkl", sample.h, sample.h)


def q_equals_qtilde(structure: G2Structure, sample: ConstrainedExtrinsicSample, v: np.ndarray) -> float:
    """|Q(v, v) - Qtilde(v, v)| for a unit normal v of the model plane span(e1..e4)"""
    sample.validate()
    v = np.asarray(v, dtype=float)
    if v.shape == (3,):
        v = np.concatenate([np.zeros(4), v])
    if np.max(np.abs(v[TANGENT])) > 1e-12:
        raise PreconditionError("v must be normal to the model plane")
    frame = coassoc_frame(structure, np.eye(7)[TANGENT], v, np.eye(7)[0]).frame
    adapted = sample.rotated(frame)
    q = -np.einsum("ii->", adapted.R[TANGENT, 4, TANGENT, 4]) - np.sum(adapted.h[0] ** 2)
    q_tilde = coassociative_operator(intrinsic_curvature(adapted))[0, 0]
    return float(abs(q - q_tilde))


class IdentityCheck:
    """One row of the identity suite"""

    def __init__(self, name: str, residual: float, threshold: float) -> None:
        self.name = name
        self.residual = residual
        self.threshold = threshold
        self.passed = bool(residual < threshold)

    def __repr__(self) -> str:
        """Returns the table row as string"""
        status = "pass" if self.passed else "FAIL"
        return f"{self.name:<36} {self.residual:12.3e} < {self.threshold:8.1e}  {status}"


class G2Checker:
    """Brute-force verification of the G2 and coassociative identities"""

    def __init__(self, log: Logger, structure: Optional[G2Structure] = None) -> None:
        self.log = log
        self.structure = structure or G2Structure()

    def run(self, samples: int = 1000, seed: int = 0) -> List[IdentityCheck]:
        rng = np.random.default_rng(seed)
        s = self.structure
        checks = [IdentityCheck("hodge dual of phi", s.hodge_residual(), 1e-12)]

        X = rng.standard_normal((samples, 7))
        Y = rng.standard_normal((samples, 7))
        Z = s.cross(X, Y)
        scale = np.sum(X**2, -1) * np.sum(Y**2, -1)
        lagrange = (np.sum(Z**2, -1) - (scale - np.sum(X * Y, -1) ** 2)) / scale
        checks.append(IdentityCheck("cross product norm", float(np.max(np.abs(lagrange))), 1e-12))
        checks.append(IdentityCheck("cross product orthogonality", float(np.max(np.abs(np.sum(Z * X, -1)))), 1e-12))

        worst = {"curvature_identities": 0.0, "ricci": 0.0, "relations": 0.0, "trace": 0.0}
        encapsulated = 0.0
        q_residual = 0.0
        for _ in range(samples):
            sample = ConstrainedExtrinsicSample.random(rng)
            for name, value in sample.residuals().items():
                if name in worst:
                    worst[name] = max(worst[name], value)
            encapsulated = max(encapsulated, encapsulated_residual(s, sample.h))
            v = rng.standard_normal(3)
            q_residual = max(q_residual, q_equals_qtilde(s, sample, v / np.linalg.norm(v)))
        checks.append(IdentityCheck("curvature identities", worst["curvature_identities"], 1e-12))
        checks.append(IdentityCheck("ricci flatness", worst["ricci"], 1e-10))
        checks.append(IdentityCheck("second fundamental form relations", worst["relations"], 1e-12))
        checks.append(IdentityCheck("vanishing mean curvature", worst["trace"], 1e-12))
        checks.append(IdentityCheck("encapsulated relation", encapsulated, 1e-12))
        checks.append(IdentityCheck("Q equals Qtilde", q_residual, 1e-9))

        model = np.eye(7)
        frame_residual = coassoc_frame(s, model[TANGENT], model[4], model[0]).residual
        asd = np.max(np.abs(coassoc_frame(s, model[TANGENT], model[4], model[0]).normal_forms(s) - ANTI_SELF_DUAL))
        for _ in range(min(samples, 100)):
            e1 = rng.standard_normal(4)
            e5 = rng.standard_normal(3)
            frame = coassoc_frame(
                s, model[TANGENT], np.concatenate([np.zeros(4), e5]), np.concatenate([e1, np.zeros(3)])
            )
            frame_residual = max(frame_residual, frame.residual)
        checks.append(IdentityCheck("coassociative frame", frame_residual, 1e-10))
        checks.append(IdentityCheck("normal bundle as anti-self-dual forms", float(asd), 1e-12))

        surface = GraphSurface(
            lambda uv: np.stack([0.5 * (uv[..., 0] ** 2 - uv[..., 1] ** 2), uv[..., 0] * uv[..., 1]], axis=-1),
            name="complex parabola",
        )
        residuals = gauss_codazzi_residual(flat_metric(4), surface, np.zeros(2))
        checks.append(IdentityCheck("gauss equation in codimension 2", residuals.gauss, 1e-5))
        checks.append(IdentityCheck("codazzi equation in codimension 2", residuals.codazzi, 1e-5))
        if residuals.codazzi_trace is not None:
            checks.append(IdentityCheck("traced codazzi on a minimal surface", residuals.codazzi_trace, 1e-5))

        failed = [check.name for check in checks if not check.passed]
        if failed:
            self.log.error(f"g2-check: failed {', '.join(failed)}")
        else:
            self.log.info(f"g2-check: all {len(checks)} identities hold over {samples} samples")
        return checks
