"""Complex linear algebra over labeled tensor-product Hilbert spaces.

Everything is dense: the largest space used by the two-node model is a few
thousand dimensions, well within range of plain ndarray arithmetic.  Values
are immutable after construction and safe to share between workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError, LayoutError, TruncationError

__all__ = [
    "HilbertLayout",
    "Operator",
    "StateVector",
    "DensityMatrix",
    "tensor_product",
    "embed",
    "identity_op",
    "annihilation_op",
    "number_op",
    "basis_state",
    "product_state",
    "coherent_state",
    "coherent_tail_mass",
    "partial_trace",
    "reduced_density",
    "expectation",
    "fidelity_pure",
    "trace_distance",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.complex128)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HilbertLayout:
    """Ordered factor labels and dimensions of a composite Hilbert space."""

    factors: tuple[tuple[str, int], ...]

    def __post_init__(self):
        labels = [lab for lab, _ in self.factors]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"duplicate factor labels in {labels}")
        for lab, dim in self.factors:
            if dim < 1:
                raise LayoutError(f"factor {lab!r} has nonpositive dimension {dim}")

    @classmethod
    def of(cls, *factors: tuple[str, int]) -> "HilbertLayout":
        return cls(tuple(factors))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.factors)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    def index(self, label: str) -> int:
        for i, (lab, _) in enumerate(self.factors):
            if lab == label:
                return i
        raise LayoutError(f"unknown factor label {label!r}; have {self.labels}")

    def dim_of(self, label: str) -> int:
        return self.factors[self.index(label)][1]

    def concat(self, other: "HilbertLayout") -> "HilbertLayout":
        return HilbertLayout(self.factors + other.factors)


def _check_same_layout(a, b):
    if a.layout != b.layout:
        raise LayoutError(f"layout mismatch: {a.layout.factors} vs {b.layout.factors}")


@dataclass(frozen=True)
class Operator:
    """Dense operator on a labeled composite space."""

    layout: HilbertLayout
    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _readonly(self.entries))
        n = self.layout.total_dim
        if self.entries.shape != (n, n):
            raise LayoutError(f"entries shape {self.entries.shape} != ({n}, {n})")

    def dag(self) -> "Operator":
        return Operator(self.layout, self.entries.conj().T)

    def herm_defect(self) -> float:
        return float(np.abs(self.entries - self.entries.conj().T).max())

    def __add__(self, other: "Operator") -> "Operator":
        _check_same_layout(self, other)
        return Operator(self.layout, self.entries + other.entries)

    def __sub__(self, other: "Operator") -> "Operator":
        _check_same_layout(self, other)
        return Operator(self.layout, self.entries - other.entries)

    def __mul__(self, scalar: complex) -> "Operator":
        return Operator(self.layout, self.entries * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "Operator":
        return Operator(self.layout, -self.entries)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            _check_same_layout(self, other)
            return Operator(self.layout, self.entries @ other.entries)
        if isinstance(other, StateVector):
            _check_same_layout(self, other)
            return StateVector(self.layout, self.entries @ other.amplitudes, normalized=False)
        return NotImplemented


@dataclass(frozen=True)
class StateVector:
    """Pure state; `normalized=False` marks intentionally sub-normalized vectors."""

    layout: HilbertLayout
    amplitudes: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", _readonly(self.amplitudes))
        n = self.layout.total_dim
        if self.amplitudes.shape != (n,):
            raise LayoutError(f"amplitude length {self.amplitudes.shape} != ({n},)")
        if self.normalized and abs(self.norm() - 1.0) > 1e-9:
            raise IntegrityError(f"state flagged normalized but norm = {self.norm():.12g}")

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def unit(self) -> "StateVector":
        return StateVector(self.layout, self.amplitudes / self.norm(), normalized=True)

    def to_density(self) -> "DensityMatrix":
        return DensityMatrix(self.layout, np.outer(self.amplitudes, self.amplitudes.conj()))

    def overlap(self, other: "StateVector") -> complex:
        _check_same_layout(self, other)
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True)
class DensityMatrix:
    """Mixed state.  Invariant checks are explicit via `validate`."""

    layout: HilbertLayout
    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _readonly(self.entries))
        n = self.layout.total_dim
        if self.entries.shape != (n, n):
            raise LayoutError(f"entries shape {self.entries.shape} != ({n}, {n})")

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def herm_defect(self) -> float:
        return float(np.abs(self.entries - self.entries.conj().T).max())

    def min_eigenvalue(self) -> float:
        h = 0.5 * (self.entries + self.entries.conj().T)
        return float(np.linalg.eigvalsh(h)[0])

    def purity(self) -> float:
        return float(np.real(np.trace(self.entries @ self.entries)))

    def validate(self, herm_tol: float = 1e-10, trace_tol: float = 1e-8,
                 eig_tol: float = 1e-8) -> None:
        if self.herm_defect() > herm_tol:
            raise IntegrityError(f"Hermiticity defect {self.herm_defect():.3g} > {herm_tol}")
        if abs(self.trace() - 1.0) > trace_tol:
            raise IntegrityError(f"trace {self.trace():.12g} deviates from 1 beyond {trace_tol}")
        mi = self.min_eigenvalue()
        if mi < -eig_tol:
            raise IntegrityError(f"min eigenvalue {mi:.3g} < -{eig_tol}")


# ---------------------------------------------------------------------------
# construction

def tensor_product(a: Operator, b: Operator) -> Operator:
    """Kronecker product; a's factors precede b's in the combined layout."""
    layout = a.layout.concat(b.layout)  # raises on duplicate labels
    return Operator(layout, np.kron(a.entries, b.entries))


def tensor_state(a: StateVector, b: StateVector) -> StateVector:
    layout = a.layout.concat(b.layout)
    return StateVector(layout, np.kron(a.amplitudes, b.amplitudes),
                       normalized=a.normalized and b.normalized)


def identity_op(layout: HilbertLayout) -> Operator:
    return Operator(layout, np.eye(layout.total_dim, dtype=np.complex128))


def embed(op: Operator, target_label: str, layout: HilbertLayout) -> Operator:
    """Lift a single-factor operator to the full space (identity elsewhere)."""
    k = layout.index(target_label)
    d = layout.dims[k]
    if op.layout.total_dim != d:
        raise LayoutError(
            f"operator dim {op.layout.total_dim} != factor {target_label!r} dim {d}")
    left = int(np.prod(layout.dims[:k], dtype=np.int64))
    right = int(np.prod(layout.dims[k + 1:], dtype=np.int64))
    full = np.kron(np.kron(np.eye(left), op.entries), np.eye(right))
    return Operator(layout, full)


def annihilation_op(n_fock: int) -> Operator:
    """Truncated ladder operator: <n-1|a|n> = sqrt(n); the top level annihilates."""
    if n_fock < 2:
        raise LayoutError(f"Fock cutoff must be >= 2, got {n_fock}")
    a = np.zeros((n_fock, n_fock), dtype=np.complex128)
    ns = np.arange(1, n_fock)
    a[ns - 1, ns] = np.sqrt(ns)
    return Operator(HilbertLayout.of(("mode", n_fock)), a)


def number_op(n_fock: int) -> Operator:
    ad_a = annihilation_op(n_fock)
    return ad_a.dag() @ ad_a


def basis_state(layout: HilbertLayout, occupations: dict[str, int]) -> StateVector:
    """Computational basis state |n_1 n_2 ...> given per-factor indices."""
    if set(occupations) != set(layout.labels):
        raise LayoutError(f"occupations {sorted(occupations)} != labels {sorted(layout.labels)}")
    idx = 0
    for lab, dim in layout.factors:
        n = occupations[lab]
        if not 0 <= n < dim:
            raise LayoutError(f"occupation {n} out of range for factor {lab!r} (dim {dim})")
        idx = idx * dim + n
    amp = np.zeros(layout.total_dim, dtype=np.complex128)
    amp[idx] = 1.0
    return StateVector(layout, amp)


def product_state(layout: HilbertLayout, parts: dict[str, np.ndarray]) -> StateVector:
    """Tensor product of per-factor amplitude vectors, ordered by the layout."""
    if set(parts) != set(layout.labels):
        raise LayoutError(f"parts {sorted(parts)} != labels {sorted(layout.labels)}")
    amp = np.ones(1, dtype=np.complex128)
    for lab, dim in layout.factors:
        v = np.asarray(parts[lab], dtype=np.complex128)
        if v.shape != (dim,):
            raise LayoutError(f"part {lab!r} has shape {v.shape}, expected ({dim},)")
        amp = np.kron(amp, v)
    return StateVector(layout, amp, normalized=False).unit()


def coherent_tail_mass(alpha: complex, n_fock: int) -> float:
    """Probability mass of |alpha> above the cutoff (Poisson tail at n >= n_fock)."""
    c = _coherent_amplitudes(alpha, n_fock)
    return max(0.0, 1.0 - float(np.sum(np.abs(c) ** 2)))


def _coherent_amplitudes(alpha: complex, n_fock: int) -> np.ndarray:
    # stable recurrence c_{n+1} = c_n * alpha / sqrt(n+1)
    c = np.zeros(n_fock, dtype=np.complex128)
    c[0] = np.exp(-abs(alpha) ** 2 / 2.0)
    for n in range(n_fock - 1):
        c[n + 1] = c[n] * alpha / np.sqrt(n + 1)
    return c


def coherent_state(alpha: complex, n_fock: int, tail_tol: float = 1e-4) -> StateVector:
    """Truncated coherent state, renormalized after the cutoff.

    Raises TruncationError when the discarded tail mass exceeds `tail_tol`;
    the caller should raise n_fock.
    """
    if n_fock < 2:
        raise LayoutError(f"Fock cutoff must be >= 2, got {n_fock}")
    c = _coherent_amplitudes(alpha, n_fock)
    tail = max(0.0, 1.0 - float(np.sum(np.abs(c) ** 2)))
    if tail > tail_tol:
        raise TruncationError(
            f"coherent state |alpha|={abs(alpha):.4g} loses {tail:.3g} above n_fock={n_fock}")
    layout = HilbertLayout.of(("mode", n_fock))
    return StateVector(layout, c / np.linalg.norm(c), normalized=True)


# ---------------------------------------------------------------------------
# reductions and functionals

def _axes_of(layout: HilbertLayout, labels) -> list[int]:
    return [layout.index(lab) for lab in labels]


def partial_trace(rho: DensityMatrix, keep_labels) -> DensityMatrix:
    """Reduced density matrix over the kept factors (original order preserved)."""
    keep_labels = list(keep_labels)
    if not keep_labels:
        raise LayoutError("keep_labels must be nonempty")
    keep = sorted(_axes_of(rho.layout, keep_labels))
    dims = rho.layout.dims
    k = len(dims)
    t = rho.entries.reshape(dims + dims)
    drop = [i for i in range(k) if i not in keep]
    for off, i in enumerate(drop):
        ax = i - off
        t = np.trace(t, axis1=ax, axis2=ax + (k - off))
    d_keep = int(np.prod([dims[i] for i in keep], dtype=np.int64))
    out_layout = HilbertLayout(tuple(rho.layout.factors[i] for i in keep))
    return DensityMatrix(out_layout, t.reshape(d_keep, d_keep))


def reduced_density(state: StateVector, keep_labels) -> DensityMatrix:
    """Partial trace of a pure state without materializing the full density matrix."""
    keep_labels = list(keep_labels)
    keep = sorted(_axes_of(state.layout, keep_labels))
    dims = state.layout.dims
    k = len(dims)
    perm = keep + [i for i in range(k) if i not in keep]
    psi = state.amplitudes.reshape(dims).transpose(perm)
    d_keep = int(np.prod([dims[i] for i in keep], dtype=np.int64))
    m = psi.reshape(d_keep, -1)
    out_layout = HilbertLayout(tuple(state.layout.factors[i] for i in keep))
    return DensityMatrix(out_layout, m @ m.conj().T)


def expectation(op: Operator, state) -> complex:
    """<psi|A|psi> or Tr(A rho)."""
    if isinstance(state, StateVector):
        _check_same_layout(op, state)
        return complex(np.vdot(state.amplitudes, op.entries @ state.amplitudes))
    if isinstance(state, DensityMatrix):
        _check_same_layout(op, state)
        return complex(np.trace(op.entries @ state.entries))
    raise TypeError(f"expected StateVector or DensityMatrix, got {type(state)}")


def fidelity_pure(rho: DensityMatrix, target: StateVector,
                  tol: float = 1e-8) -> float:
    """<target|rho|target>, clamped to [0, 1] after an integrity check."""
    _check_same_layout(rho, target)
    if abs(target.norm() - 1.0) > 1e-9:
        raise IntegrityError(f"fidelity target not normalized (norm {target.norm():.12g})")
    val = np.vdot(target.amplitudes, rho.entries @ target.amplitudes)
    f = float(np.real(val))
    if f < -tol or f > 1.0 + tol:
        raise IntegrityError(f"fidelity {f:.12g} outside [0,1] beyond tolerance {tol}")
    return min(1.0, max(0.0, f))


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """(1/2)||a - b||_1."""
    _check_same_layout(a, b)
    d = a.entries - b.entries
    d = 0.5 * (d + d.conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(d))))
