"""Physical model builders: Hamiltonians, collapse operators, detector modes.

Two descriptions of each quantum dot are used.  The effective model keeps
only the two ground-spin levels {|X->, |X+>}; the drive enters through the
flip operator sigma = |X-><X+| + |X+><X-| whose eigenstates |b+>, |b-> =
(|X-> +- |X+>)/sqrt(2) displace the cavity in opposite directions:

    H_eff = sum_i lambda_i * sigma_i * (a_i^dag + a_i)

The full single-node model retains the two trion levels and the laser /
cavity couplings that generate lambda = Omega*g/Delta by adiabatic
elimination.  It is written in the static frame, with the detunings as
trion diagonal energies.

Internally everything is in reduced units where lambda_1 = 1 sets the time
scale; physical microvolt inputs are converted once at construction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import qcore
from .errors import LayoutError
from .qcore import HilbertLayout, Operator

__all__ = [
    "HBAR_EV_S",
    "X_MINUS", "X_PLUS", "T_PLUS", "T_MINUS",
    "ModelParams",
    "LindbladModel",
    "drive_pauli",
    "branch_state",
    "two_node_layout",
    "single_node_layout",
    "lambda_from_physical",
    "build_effective_hamiltonian",
    "build_full_hamiltonian",
    "collapse_operators",
    "detector_jump_ops",
    "branch_amplitude_analytic",
    "fock_cutoff",
    "build_lindblad_model",
]

HBAR_EV_S = 6.582119569e-16  # eV s

# dot level indices; trions only exist in the full (4-level) model
X_MINUS, X_PLUS, T_PLUS, T_MINUS = 0, 1, 2, 3


def drive_pauli(dot_dim: int = 2) -> Operator:
    """Ground-spin flip operator |X-><X+| + |X+><X-| (the drive axis)."""
    m = np.zeros((dot_dim, dot_dim), dtype=np.complex128)
    m[X_MINUS, X_PLUS] = 1.0
    m[X_PLUS, X_MINUS] = 1.0
    return Operator(HilbertLayout.of(("dot", dot_dim)), m)


def branch_state(sign: int, dot_dim: int = 2) -> np.ndarray:
    """Drive-axis eigenvector (|X-> + sign*|X+>)/sqrt(2), eigenvalue `sign`."""
    if sign not in (+1, -1):
        raise ValueError(f"branch sign must be +-1, got {sign}")
    v = np.zeros(dot_dim, dtype=np.complex128)
    v[X_MINUS] = 1.0 / math.sqrt(2.0)
    v[X_PLUS] = sign / math.sqrt(2.0)
    return v


def two_node_layout(n_fock: int) -> HilbertLayout:
    return HilbertLayout.of(("dot1", 2), ("dot2", 2), ("cav1", n_fock), ("cav2", n_fock))


def single_node_layout(n_fock: int, full: bool = False) -> HilbertLayout:
    return HilbertLayout.of(("dot", 4 if full else 2), ("cav", n_fock))


def lambda_from_physical(omega_ueV: float, g_ueV: float, delta_ueV: float):
    """Effective drive rate Omega*g/Delta.

    Returns (value in microvolt, angular frequency in rad/s).
    """
    if delta_ueV <= 0:
        raise ValueError(f"detuning must be positive, got {delta_ueV}")
    lam_ueV = omega_ueV * g_ueV / delta_ueV
    lam_rad = lam_ueV * 1e-6 / HBAR_EV_S
    return lam_ueV, lam_rad


@dataclass(frozen=True)
class ModelParams:
    """All model rates, in reduced units (lambda_1 = 1) unless noted.

    The laser/cavity fields (omega_*, g_*, delta_*) are only needed for the
    full model and for unit conversion; effective-model runs may leave them
    unset and give lambda_i directly.
    """

    lambda_1: float = 1.0
    lambda_2: float = 1.0
    kappa_1: float = 1.0
    kappa_2: float = 1.0
    gamma_1: float = 0.0
    gamma_2: float = 0.0
    gamma_T: float = 0.0
    # per-node laser Rabi rates, cavity couplings and detunings (same units
    # as the lambdas; microvolt before conversion)
    omega_plus_1: float | None = None
    omega_minus_1: float | None = None
    g_plus_1: float | None = None
    g_minus_1: float | None = None
    delta_plus_1: float | None = None
    delta_minus_1: float | None = None
    omega_plus_2: float | None = None
    omega_minus_2: float | None = None
    g_plus_2: float | None = None
    g_minus_2: float | None = None
    delta_plus_2: float | None = None
    delta_minus_2: float | None = None
    n_fock: int | None = None
    unit_mode: str = "reduced"
    dot_channel: str = "relaxation"  # or "dephasing"
    # set in physical mode: microvolt value of the reduced rate unit
    lambda_unit_ueV: float | None = None

    def __post_init__(self):
        for name in ("lambda_1", "lambda_2", "kappa_1", "kappa_2",
                     "gamma_1", "gamma_2", "gamma_T"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"rate {name} must be >= 0, got {v}")
        # lambda_1 = 0 is the lasers-off special case; otherwise it is the unit
        if (self.unit_mode == "reduced" and self.lambda_1 != 0.0
                and abs(self.lambda_1 - 1.0) > 1e-12):
            raise ValueError(
                f"reduced units fix lambda_1 = 1 as the time unit, got {self.lambda_1}")
        if self.dot_channel not in ("relaxation", "dephasing"):
            raise ValueError(f"unknown dot_channel {self.dot_channel!r}")
        if self.n_fock is not None and self.n_fock < 2:
            raise ValueError(f"n_fock must be >= 2, got {self.n_fock}")

    # -- derived quantities -------------------------------------------------

    def node(self, i: int) -> dict:
        if i not in (1, 2):
            raise ValueError(f"node index must be 1 or 2, got {i}")
        g = lambda base: getattr(self, f"{base}_{i}")
        return {k: g(k) for k in ("lambda", "kappa", "gamma", "omega_plus",
                                  "omega_minus", "g_plus", "g_minus",
                                  "delta_plus", "delta_minus")}

    def delta_splitting(self, i: int = 1) -> float:
        n = self.node(i)
        return n["delta_minus"] - n["delta_plus"]

    def has_full_fields(self, i: int = 1) -> bool:
        n = self.node(i)
        return all(n[k] is not None for k in ("omega_plus", "omega_minus",
                                              "g_plus", "g_minus",
                                              "delta_plus", "delta_minus"))

    def validity_ratio(self, i: int = 1) -> float:
        """max(Omega, g) / min(Delta); the adiabatic reduction needs << 1."""
        n = self.node(i)
        num = max(n["omega_plus"], n["omega_minus"], n["g_plus"], n["g_minus"])
        den = min(n["delta_plus"], n["delta_minus"])
        return num / den

    def check_branch_balance(self, i: int = 1, tol_ueV: float = 1e-9) -> tuple[float, float]:
        """Both Raman products Omega*g/Delta must agree for a clean drive axis."""
        n = self.node(i)
        plus = n["omega_plus"] * n["g_plus"] / n["delta_plus"]
        minus = n["omega_minus"] * n["g_minus"] / n["delta_minus"]
        scale = self.lambda_unit_ueV or 1.0
        if abs(plus - minus) * scale > tol_ueV:
            warnings.warn(
                f"drive-rate mismatch on node {i}: plus branch {plus * scale:.6g} ueV, "
                f"minus branch {minus * scale:.6g} ueV", stacklevel=2)
        return plus, minus

    @classmethod
    def from_physical_ueV(cls, *, kappa_ueV: tuple[float, float],
                          gamma_ueV: tuple[float, float], gamma_T_ueV: float,
                          omega_plus: tuple[float, float], omega_minus: tuple[float, float],
                          g_plus: tuple[float, float], g_minus: tuple[float, float],
                          delta_plus: tuple[float, float], delta_minus: tuple[float, float],
                          n_fock: int | None = None,
                          dot_channel: str = "relaxation") -> "ModelParams":
        """Convert microvolt inputs to reduced units (node-1 drive rate = 1)."""
        lam = [lambda_from_physical(omega_plus[i], g_plus[i], delta_plus[i])[0]
               for i in range(2)]
        unit = lam[0]
        r = lambda pair: tuple(v / unit for v in pair)
        p = cls(
            lambda_1=1.0, lambda_2=lam[1] / unit,
            kappa_1=kappa_ueV[0] / unit, kappa_2=kappa_ueV[1] / unit,
            gamma_1=gamma_ueV[0] / unit, gamma_2=gamma_ueV[1] / unit,
            gamma_T=gamma_T_ueV / unit,
            omega_plus_1=omega_plus[0] / unit, omega_plus_2=omega_plus[1] / unit,
            omega_minus_1=omega_minus[0] / unit, omega_minus_2=omega_minus[1] / unit,
            g_plus_1=g_plus[0] / unit, g_plus_2=g_plus[1] / unit,
            g_minus_1=g_minus[0] / unit, g_minus_2=g_minus[1] / unit,
            delta_plus_1=delta_plus[0] / unit, delta_plus_2=delta_plus[1] / unit,
            delta_minus_1=delta_minus[0] / unit, delta_minus_2=delta_minus[1] / unit,
            n_fock=n_fock, unit_mode="reduced", dot_channel=dot_channel,
            lambda_unit_ueV=unit)
        p.check_branch_balance(1)
        return p

    def lambda_rad_per_s(self) -> float:
        """Angular frequency of the reduced rate unit (physical inputs only)."""
        if self.lambda_unit_ueV is None:
            raise ValueError("no physical unit attached to these parameters")
        return self.lambda_unit_ueV * 1e-6 / HBAR_EV_S

    def time_to_ns(self, t_reduced) -> np.ndarray:
        return np.asarray(t_reduced) / self.lambda_rad_per_s() * 1e9


@dataclass(frozen=True)
class LindbladModel:
    """Hamiltonian plus labeled collapse operators (rates folded in)."""

    layout: HilbertLayout
    hamiltonian: Operator
    collapse_ops: tuple[tuple[str, Operator], ...]
    detected_labels: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.hamiltonian.layout != self.layout:
            raise LayoutError("hamiltonian layout mismatch")
        d = self.hamiltonian.herm_defect()
        if d > 1e-10:
            raise LayoutError(f"hamiltonian not Hermitian (defect {d:.3g})")
        for lab, op in self.collapse_ops:
            if op.layout != self.layout:
                raise LayoutError(f"collapse operator {lab!r} layout mismatch")

    def collapse_dict(self) -> dict[str, Operator]:
        return dict(self.collapse_ops)


# ---------------------------------------------------------------------------
# Hamiltonians

def build_effective_hamiltonian(params: ModelParams, layout: HilbertLayout) -> Operator:
    """Two-node spin-conditioned cavity drive sum_i lambda_i sigma_i (a_i^dag + a_i)."""
    if layout.labels != ("dot1", "dot2", "cav1", "cav2"):
        raise LayoutError(f"expected (dot1, dot2, cav1, cav2) layout, got {layout.labels}")
    n = layout.total_dim
    h = np.zeros((n, n), dtype=np.complex128)
    for i, lam in ((1, params.lambda_1), (2, params.lambda_2)):
        if lam == 0.0:
            continue
        a = annih_for(layout, f"cav{i}")
        x = a.dag() + a
        sig = qcore.embed(drive_pauli(), f"dot{i}", layout)
        h = h + lam * (sig @ x).entries
    return Operator(layout, h)


def annih_for(layout: HilbertLayout, label: str) -> Operator:
    return qcore.embed(qcore.annihilation_op(layout.dim_of(label)), label, layout)


def _proj(i: int, j: int, dim: int = 4) -> np.ndarray:
    m = np.zeros((dim, dim), dtype=np.complex128)
    m[i, j] = 1.0
    return m


def build_full_hamiltonian(params: ModelParams, layout: HilbertLayout,
                           node: int = 1) -> Operator:
    """Single-node four-level dot with lasers and cavity, static frame.

    Trion energies sit at the detunings; the two lasers drive X+ <-> T+ and
    X- <-> T-, while the cavity closes the Raman loops T+ -> X- and
    T- -> X+ with one photon emitted.
    """
    if layout.labels != ("dot", "cav") or layout.dim_of("dot") != 4:
        raise LayoutError(f"expected (dot:4, cav) layout, got {layout.factors}")
    p = params.node(node)
    for k in ("omega_plus", "omega_minus", "g_plus", "g_minus", "delta_plus", "delta_minus"):
        if p[k] is None:
            raise ValueError(f"full model needs {k} for node {node}")
    if p["delta_plus"] <= 0 or p["delta_minus"] <= 0:
        raise ValueError("full model needs positive detunings")
    ratio = params.validity_ratio(node)
    if ratio > 0.25:
        warnings.warn(f"adiabatic validity ratio max(Omega,g)/min(Delta) = {ratio:.3g} > 0.25",
                      stacklevel=2)

    nf = layout.dim_of("cav")
    a = qcore.annihilation_op(nf).entries
    ident = np.eye(nf)

    diag = p["delta_plus"] * _proj(T_PLUS, T_PLUS) + p["delta_minus"] * _proj(T_MINUS, T_MINUS)
    h = np.kron(diag, ident)
    lower = (np.kron(p["omega_plus"] * _proj(X_PLUS, T_PLUS), ident)
             + np.kron(p["omega_minus"] * _proj(X_MINUS, T_MINUS), ident)
             + np.kron(p["g_plus"] * _proj(X_MINUS, T_PLUS), a.conj().T)
             + np.kron(p["g_minus"] * _proj(X_PLUS, T_MINUS), a.conj().T))
    h = h + lower + lower.conj().T
    return Operator(layout, h)


# ---------------------------------------------------------------------------
# dissipation

def _dot_channel_op(kind: str, dim: int = 2) -> np.ndarray:
    if kind == "relaxation":
        return _proj(X_MINUS, X_PLUS, dim)
    # pure dephasing of the ground spin
    return _proj(X_PLUS, X_PLUS, dim) - _proj(X_MINUS, X_MINUS, dim)


def collapse_operators(params: ModelParams, layout: HilbertLayout,
                       model_kind: str) -> list[tuple[str, Operator]]:
    """Collapse operators with sqrt-rate prefactors; zero-rate channels are omitted."""
    ops: list[tuple[str, Operator]] = []
    if model_kind == "effective":
        if layout.labels != ("dot1", "dot2", "cav1", "cav2"):
            raise LayoutError(f"effective model needs a two-node layout, got {layout.labels}")
        for i in (1, 2):
            kap = getattr(params, f"kappa_{i}")
            gam = getattr(params, f"gamma_{i}")
            if kap > 0:
                ops.append((f"cav{i}", math.sqrt(kap) * annih_for(layout, f"cav{i}")))
            if gam > 0:
                ld = Operator(HilbertLayout.of(("dot", 2)),
                              _dot_channel_op(params.dot_channel))
                ops.append((f"dot{i}", math.sqrt(gam) * qcore.embed(ld, f"dot{i}", layout)))
    elif model_kind == "full":
        if layout.labels != ("dot", "cav") or layout.dim_of("dot") != 4:
            raise LayoutError(f"full model needs a (dot:4, cav) layout, got {layout.factors}")
        kap, gam, gT = params.kappa_1, params.gamma_1, params.gamma_T
        if kap > 0:
            ops.append(("cav", math.sqrt(kap) * annih_for(layout, "cav")))
        if gam > 0:
            ld = Operator(HilbertLayout.of(("dot", 4)),
                          _dot_channel_op(params.dot_channel, dim=4))
            ops.append(("dot", math.sqrt(gam) * qcore.embed(ld, "dot", layout)))
        if gT > 0:
            for lab, (i, j) in (("trion_plus", (X_PLUS, T_PLUS)),
                                ("trion_minus", (X_MINUS, T_MINUS))):
                op = Operator(HilbertLayout.of(("dot", 4)), _proj(i, j))
                ops.append((lab, math.sqrt(gT) * qcore.embed(op, "dot", layout)))
    else:
        raise ValueError(f"unknown model_kind {model_kind!r}")
    return ops


def detector_jump_ops(params: ModelParams, layout: HilbertLayout) -> tuple[Operator, Operator]:
    """Beamsplitter-mixed detector modes.

    c = -i(sqrt(k1) a1 + sqrt(k2) a2)/sqrt(2),
    d = -i(sqrt(k1) a1 - sqrt(k2) a2)/sqrt(2);
    together they resolve the total leak: c^dag c + d^dag d = sum_i k_i n_i.
    """
    if layout.labels != ("dot1", "dot2", "cav1", "cav2"):
        raise LayoutError(f"detector modes need a two-node layout, got {layout.labels}")
    b1 = math.sqrt(params.kappa_1) * annih_for(layout, "cav1")
    b2 = math.sqrt(params.kappa_2) * annih_for(layout, "cav2")
    c = (-1j / math.sqrt(2.0)) * (b1 + b2)
    d = (-1j / math.sqrt(2.0)) * (b1 - b2)
    return c, d


# ---------------------------------------------------------------------------
# analytic branch field

def branch_amplitude_analytic(lam: float, kappa: float, t, branch_sign: int):
    """Cavity amplitude on one drive-axis branch: alpha' = -i*s*lam - (kappa/2) alpha.

    Lossless cavities give alpha = -i*s*lam*t; with decay the amplitude
    saturates at magnitude 2*lam/kappa.
    """
    if branch_sign not in (+1, -1):
        raise ValueError(f"branch sign must be +-1, got {branch_sign}")
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("time must be >= 0")
    if kappa == 0.0:
        out = -1j * branch_sign * lam * t
    else:
        out = -1j * branch_sign * (2.0 * lam / kappa) * (1.0 - np.exp(-kappa * t / 2.0))
    return complex(out[0]) if scalar else out


def fock_cutoff(params: ModelParams, t_max: float, margin: float = 3.0) -> int:
    """Cutoff so the largest branch field keeps a negligible truncated tail.

    Coherent tails fall super-exponentially past (|alpha| + margin)^2 levels.
    """
    amax = 0.0
    for lam, kap in ((params.lambda_1, params.kappa_1), (params.lambda_2, params.kappa_2)):
        amax = max(amax, abs(branch_amplitude_analytic(lam, kap, t_max, +1)))
    return max(2, math.ceil((amax + margin) ** 2))


# ---------------------------------------------------------------------------
# assembly

def build_single_node_effective(lam: float, kappa: float, gamma: float,
                                n_fock: int, dot_channel: str = "relaxation"
                                ) -> LindbladModel:
    """One dot, one cavity, two-level dot: H = lam * sigma * (a^dag + a)."""
    layout = single_node_layout(n_fock, full=False)
    a = annih_for(layout, "cav")
    x = a.dag() + a
    sig = qcore.embed(drive_pauli(), "dot", layout)
    ham = lam * (sig @ x)
    ops: list[tuple[str, Operator]] = []
    if kappa > 0:
        ops.append(("cav", math.sqrt(kappa) * a))
    if gamma > 0:
        ld = Operator(HilbertLayout.of(("dot", 2)), _dot_channel_op(dot_channel))
        ops.append(("dot", math.sqrt(gamma) * qcore.embed(ld, "dot", layout)))
    return LindbladModel(layout, ham, tuple(ops), frozenset({"cav"}))


def build_lindblad_model(params: ModelParams, model_kind: str = "effective",
                         n_fock: int | None = None, t_max: float | None = None,
                         detected: str = "ports") -> LindbladModel:
    """Assemble layout, Hamiltonian and collapse operators.

    For the two-node effective model, `detected="ports"` replaces the two
    cavity decay channels by the beamsplitter-mixed detector modes; the
    Lindblad generator is identical, but quantum-jump unravellings then
    click per detector.  `detected="cavities"` keeps per-cavity channels.
    """
    nf = n_fock or params.n_fock
    if nf is None:
        if t_max is None:
            raise ValueError("need n_fock or t_max to size the Fock space")
        nf = fock_cutoff(params, t_max)
    if model_kind == "effective":
        layout = two_node_layout(nf)
        ham = build_effective_hamiltonian(params, layout)
        ops = collapse_operators(params, layout, "effective")
        if detected == "ports":
            nondet = [(lab, op) for lab, op in ops if not lab.startswith("cav")]
            c, d = detector_jump_ops(params, layout)
            ops = []
            if params.kappa_1 > 0 or params.kappa_2 > 0:
                ops = [("c", c), ("d", d)]
            ops += nondet
            return LindbladModel(layout, ham, tuple(ops), frozenset({"c", "d"}))
        return LindbladModel(layout, ham, tuple(ops),
                             frozenset(lab for lab, _ in ops if lab.startswith("cav")))
    if model_kind == "full":
        layout = single_node_layout(nf, full=True)
        ham = build_full_hamiltonian(params, layout)
        ops = collapse_operators(params, layout, "full")
        return LindbladModel(layout, ham, tuple(ops), frozenset({"cav"}))
    raise ValueError(f"unknown model_kind {model_kind!r}")
