from logging import Logger
from typing import Dict, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from helpers.Exceptions import GridMismatchError, InvalidCurvatureError, IterationLimitError, PreconditionError
from helpers.GeometryHelper import curvature_residuals
from helpers.TubularHelper import TubularChart

STRONGLY_STABLE = "strongly-stable"
STABLE_ONLY = "stable-only"
UNSTABLE = "unstable"
INCONCLUSIVE = "inconclusive"

DEFAULT_NODES = 256
DENSE_LIMIT = 400
DISCRETE_MINIMALITY = 1e-6


def two_form(terms) -> np.ndarray:
    """Antisymmetric 4x4 component matrix of sum(sign * e_i ^ e_j)"""
    form = np.zeros((4, 4))
    for sign, i, j in terms:
        form[i, j] += sign
        form[j, i] -= sign
    return form


# anti-self-dual basis e12 - e34, e13 + e24, e14 - e23
ANTI_SELF_DUAL = np.stack(
    [
        two_form([(1.0, 0, 1), (-1.0, 2, 3)]),
        two_form([(1.0, 0, 2), (1.0, 1, 3)]),
        two_form([(1.0, 0, 3), (-1.0, 1, 2)]),
    ]
)


def classify(c0: float, lambda_min: Optional[float], tolerance: float) -> str:
    """Classification from the pointwise margin and, when known, the lowest Jacobi eigenvalue"""
    if c0 > tolerance:
        return STRONGLY_STABLE
    if lambda_min is None:
        return INCONCLUSIVE
    if lambda_min < -tolerance:
        return UNSTABLE
    return STABLE_ONLY


class JacobiOperator:
    """Discrete (nabla^perp)* nabla^perp + R - A on N nodes of Sigma with m normal components.

    Normal fields are arrays (N, m) of components in the periodic normal frame. The
    discrete inner product is h * sum(u * v) with h = length / N.
    """

    def __init__(self, length: float, connection: np.ndarray, potential: np.ndarray) -> None:
        self.nodes, self.rank = potential.shape[:2]
        self.length = length
        self.h = length / self.nodes
        self.potential = potential
        shift = sparse.diags([np.ones(self.nodes - 1), np.ones(1)], [1, 1 - self.nodes], format="csr")
        identity = sparse.identity(self.nodes, format="csr")
        self.difference = (
            sparse.kron((shift - identity) / self.h, sparse.identity(self.rank))
            + sparse.kron(0.5 * (shift + identity), sparse.csr_matrix(connection))
        ).tocsr()
        self.matrix = (self.difference.T @ self.difference + sparse.block_diag(list(potential))).tocsr()

    def __repr__(self) -> str:
        """Returns the operator size as string"""
        return f"nodes: {self.nodes}, rank: {self.rank}, h: {self.h:.6g}"

    @property
    def size(self) -> int:
        return self.nodes * self.rank

    def apply(self, V: np.ndarray) -> np.ndarray:
        return (self.matrix @ self.__flat(V)).reshape(self.nodes, self.rank)

    def inner(self, U: np.ndarray, V: np.ndarray) -> float:
        return float(self.h * np.sum(self.__flat(U) * self.__flat(V)))

    def second_variation(self, V: np.ndarray) -> float:
        """h * sum |D V|^2 + h * sum <Q V, V>, D the staggered covariant difference"""
        v = self.__flat(V)
        dv = self.difference @ v
        components = v.reshape(self.nodes, self.rank)
        potential = np.einsum("kab,ka,kb->", self.potential, components, components)
        return float(self.h * (dv @ dv) + self.h * potential)

    def spectrum(self, count: int):
        """Lowest `count` eigenvalues with eigenvectors normalized in the discrete inner product"""
        count = min(count, self.size)
        if self.size <= DENSE_LIMIT or count >= self.size - 1:
            values, vectors = scipy.linalg.eigh(self.matrix.toarray(), subset_by_index=[0, count - 1])
        else:
            lowest = min(float(np.linalg.eigvalsh(q)[0]) for q in self.potential)
            try:
                values, vectors = eigsh(self.matrix, k=count, sigma=lowest - 1.0, which="LM", tol=1e-10)
            except ArpackNoConvergence as e:
                raise IterationLimitError(f"Jacobi eigensolve did not converge: {e}") from e
            order = np.argsort(values)
            values, vectors = values[order], vectors[:, order]
        vectors = vectors / np.sqrt(self.h)
        return values, vectors.T.reshape(count, self.nodes, self.rank)

    def __flat(self, V: np.ndarray) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        if V.ndim == 1 and self.rank == 1:
            V = V[:, None]
        if V.shape != (self.nodes, self.rank):
            raise GridMismatchError(
                f"Normal field of shape {V.shape} does not match the grid ({self.nodes}, {self.rank})"
            )
        return V.ravel()


class StabilityReport:
    """Pointwise strong-stability data along Sigma and, when computed, the Jacobi spectrum"""

    def __init__(
        self,
        scenario: str,
        s: np.ndarray,
        matrices: np.ndarray,
        asymmetry: float,
        tolerance: float,
        spectrum: Optional[np.ndarray] = None,
        test_value: Optional[float] = None,
    ) -> None:
        self.scenario = scenario
        self.s = s
        self.matrices = matrices
        self.asymmetry = asymmetry
        self.tolerance = tolerance
        self.margins = np.linalg.eigvalsh(matrices)[:, 0]
        self.c0 = float(np.min(self.margins))
        self.spectrum = spectrum
        self.test_value = test_value
        lowest = None if spectrum is None else float(spectrum[0])
        if lowest is None and test_value is not None and test_value < -tolerance and self.c0 < -tolerance:
            lowest = test_value
        self.classification = classify(self.c0, lowest, tolerance)
        self.hint = ""
        if self.classification == INCONCLUSIVE:
            self.hint = "margin within tolerance of zero, compute the Jacobi spectrum or refine the grid"

    def __repr__(self) -> str:
        """Returns the report as string"""
        lines = [
            f"scenario: {self.scenario}",
            f"c0: {self.c0:.6f}",
            f"classification: {self.classification}",
            f"asymmetry: {self.asymmetry:.3g}",
        ]
        if self.spectrum is not None:
            lines.append("jacobi spectrum: " + ", ".join(f"{value:.6f}" for value in self.spectrum))
        if self.hint:
            lines.append(f"hint: {self.hint}")
        return "\n".join(lines)

    def to_record(self) -> Dict:
        """Machine-readable form written next to the CSV traces"""
        return {
            "scenario": self.scenario,
            "c0": self.c0,
            "classification": self.classification,
            "asymmetry": self.asymmetry,
            "tolerance": self.tolerance,
            "nodes": len(self.s),
            "matrix_at_worst_node": self.matrices[int(np.argmin(self.margins))].tolist(),
            "jacobi_spectrum": None if self.spectrum is None else [float(v) for v in self.spectrum],
        }


class StabilityAnalyzer:
    """Strong stability margin, Jacobi operator and second variation of a minimal closed curve"""

    def __init__(
        self,
        log: Logger,
        tc: TubularChart,
        margin_tolerance: float = 1e-6,
        minimality_tolerance: float = 1e-8,
    ) -> None:
        self.log = log
        self.tc = tc
        self.ref = tc.ref
        self.margin_tolerance = margin_tolerance
        limit = minimality_tolerance if self.ref.analytic else max(minimality_tolerance, DISCRETE_MINIMALITY)
        if self.ref.sup_mean_curvature > limit:
            msg = f"{self.ref.name}: Sigma is not minimal (sup|H| = {self.ref.sup_mean_curvature:.3g} > {limit:g})"
            self.log.error(msg)
            raise PreconditionError(msg)

    def stability_matrices(self, s: np.ndarray):
        """(R - A)_ab = -R(e_0, e_a, e_0, e_b) - h_a h_b per node, symmetrized, and the asymmetry"""
        R = self.ref.curvature(s)
        h = self.ref.second_fundamental_form(s)
        matrices = -R[..., 0, 1:, 0, 1:] - np.einsum("...a,...b->...ab", h, h)
        asymmetry = float(np.max(np.abs(matrices - np.swapaxes(matrices, -1, -2))))
        if asymmetry >= 1e-8:
            msg = f"{self.ref.name}: stability matrix asymmetry {asymmetry:.3g} exceeds 1e-8"
            self.log.error(msg)
            raise PreconditionError(msg)
        return 0.5 * (matrices + np.swapaxes(matrices, -1, -2)), asymmetry

    def strong_stability_margin(self, nodes: int = DEFAULT_NODES) -> StabilityReport:
        s = self.ref.nodes(nodes)
        matrices, asymmetry = self.stability_matrices(s)
        test_value = None
        if np.min(np.linalg.eigvalsh(matrices)[:, 0]) < -self.margin_tolerance:
            operator = JacobiOperator(self.ref.length, self.ref.connection, matrices)
            field = self.__worst_direction_field(matrices)
            test_value = operator.second_variation(field) / operator.inner(field, field)
        report = StabilityReport(
            self.ref.name, s, matrices, asymmetry, self.margin_tolerance, test_value=test_value
        )
        self.log.info(f"{self.ref.name}: c0 = {report.c0:.6f} ({report.classification})")
        return report

    def jacobi_operator(self, nodes: int = DEFAULT_NODES) -> JacobiOperator:
        if nodes < 3:
            raise PreconditionError("The Jacobi operator needs at least 3 nodes")
        matrices, _ = self.stability_matrices(self.ref.nodes(nodes))
        return JacobiOperator(self.ref.length, self.ref.connection, matrices)

    def analyze(self, nodes: int = DEFAULT_NODES, eigenvalues: int = 8) -> StabilityReport:
        """Pointwise margin plus the lowest Jacobi eigenvalues"""
        s = self.ref.nodes(nodes)
        matrices, asymmetry = self.stability_matrices(s)
        operator = JacobiOperator(self.ref.length, self.ref.connection, matrices)
        values, _ = operator.spectrum(eigenvalues)
        report = StabilityReport(self.ref.name, s, matrices, asymmetry, self.margin_tolerance, spectrum=values)
        if values[0] < report.c0 - 1e-6 * max(1.0, abs(report.c0)):
            self.log.warning(
                f"{self.ref.name}: lowest Jacobi eigenvalue {values[0]:.6g} is below c0 = {report.c0:.6g}"
            )
        self.log.info(f"{self.ref.name}: c0 = {report.c0:.6f}, lambda_min = {values[0]:.6f} ({report.classification})")
        return report

    def second_variation(self, V: np.ndarray) -> float:
        V = np.asarray(V, dtype=float)
        return self.jacobi_operator(V.shape[0]).second_variation(V)

    @staticmethod
    def __worst_direction_field(matrices: np.ndarray) -> np.ndarray:
        """Constant field along the lowest eigenvector of the worst node"""
        worst = int(np.argmin(np.linalg.eigvalsh(matrices)[:, 0]))
        direction = np.linalg.eigh(matrices[worst])[1][:, 0]
        return np.broadcast_to(direction, matrices.shape[:2]).copy()


def lagrangian_margin(ricci: np.ndarray, einstein_constant: float) -> float:
    """min over the grid of the lowest eigenvalue of Ric^L - c"""
    ricci = np.asarray(ricci, dtype=float)
    if ricci.ndim == 2:
        ricci = ricci[None]
    shifted = ricci - einstein_constant * np.eye(ricci.shape[-1])
    return float(np.min(np.linalg.eigvalsh(0.5 * (shifted + np.swapaxes(shifted, -1, -2)))[:, 0]))


def validate_curvature(R: np.ndarray, tolerance: float = 1e-10) -> None:
    R = np.asarray(R, dtype=float)
    scale = max(1.0, float(np.max(np.abs(R))))
    failed = {name: value for name, value in curvature_residuals(R).items() if value > tolerance * scale}
    if failed:
        details = ", ".join(f"{name}={value:.3g}" for name, value in failed.items())
        raise InvalidCurvatureError(f"Curvature tensor violates its symmetries: {details}")


def scalar_curvature(R: np.ndarray) -> float:
    """Scalar curvature of an orthonormal-frame curvature tensor"""
    return float(np.einsum("ijij->", R))


def anti_self_dual_block(R: np.ndarray) -> np.ndarray:
    """Curvature operator on the anti-self-dual 2-forms, equal to W_- + s/12"""
    return 0.125 * np.einsum("ijkl,aij,bkl->ab", R, ANTI_SELF_DUAL, ANTI_SELF_DUAL)


def coassociative_operator(R: np.ndarray) -> np.ndarray:
    """-2 W_- + s/3 on the anti-self-dual forms"""
    return -2.0 * anti_self_dual_block(R) + 0.5 * scalar_curvature(R) * np.eye(3)


def coassociative_margin(R: np.ndarray) -> float:
    """Lowest eigenvalue of -2 W_- + s/3 for an orthonormal 4-dimensional curvature tensor"""
    R = np.asarray(R, dtype=float)
    if R.shape != (4, 4, 4, 4):
        raise InvalidCurvatureError(f"Expected a 4-dimensional curvature tensor, got shape {R.shape}")
    validate_curvature(R)
    operator = coassociative_operator(R)
    return float(np.linalg.eigvalsh(0.5 * (operator + operator.T))[0])
