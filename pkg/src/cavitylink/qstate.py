"""Composite Hilbert-space core: labeled tensor factors, states, operators,
measurement, and fidelity.

Everything downstream (node Hamiltonians, gates, the two-node protocol) is
built on these few primitives.  Values are immutable after construction and
all operations are pure functions, so they are safe to share across threads.

Conventions: atom levels are ordered g=0, e=1 (i=2 for three-level atoms);
Fock states are ordered by photon number 0..N.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Tolerances:
    """Central numerical tolerances cited by tests and docs."""

    norm: float = 1e-9        # state-vector normalization
    unitarity: float = 1e-10  # operator intent flags (hermitian / unitary)
    comparison: float = 1e-12 # generic matrix and amplitude comparisons


TOLERANCES = Tolerances()

# Atom level indices used throughout (basis ordering decision).
ATOM_G = 0
ATOM_E = 1
ATOM_I = 2
ATOM_LEVEL_NAMES = ("g", "e", "i")


class QStateError(ValueError):
    """Validation failure in a Hilbert-space operation."""


@dataclass(frozen=True)
class FactorLabel:
    """One labeled tensor factor: a name and a dimension.

    Atoms use dim 2 or 3; a cavity mode truncated at N photons uses dim N+1.
    """

    name: str
    dim: int

    def __post_init__(self) -> None:
        if not self.name:
            raise QStateError("factor name must be non-empty")
        if self.dim < 2:
            raise QStateError(f"factor {self.name!r} needs dim >= 2, got {self.dim}")


class CompositeSpace:
    """An ordered tensor product of labeled factors.

    Factor order is fixed for the lifetime of the space; amplitude index
    layout is row-major over the factor dimensions in that order.
    """

    def __init__(self, factors: Sequence[FactorLabel]):
        factors = tuple(factors)
        names = [f.name for f in factors]
        if len(set(names)) != len(names):
            raise QStateError(f"duplicate factor names in {names}")
        if not factors:
            raise QStateError("a space needs at least one factor")
        self.factors = factors
        self.dims = tuple(f.dim for f in factors)
        self.dim = int(np.prod(self.dims))

    @property
    def names(self) -> tuple:
        return tuple(f.name for f in self.factors)

    def axis(self, name: str) -> int:
        for k, f in enumerate(self.factors):
            if f.name == name:
                return k
        raise QStateError(f"unknown factor {name!r}; have {self.names}")

    def factor(self, name: str) -> FactorLabel:
        return self.factors[self.axis(name)]

    def index(self, levels: dict) -> int:
        """Flat amplitude index of a basis assignment {factor name: level}."""
        if set(levels) != set(self.names):
            raise QStateError(f"assignment keys {sorted(levels)} != factors {sorted(self.names)}")
        idx = 0
        for f in self.factors:
            lv = levels[f.name]
            if not 0 <= lv < f.dim:
                raise QStateError(f"level {lv} out of range for factor {f.name!r} (dim {f.dim})")
            idx = idx * f.dim + lv
        return idx

    def basis_state(self, levels: dict) -> "StateVector":
        amps = np.zeros(self.dim, dtype=complex)
        amps[self.index(levels)] = 1.0
        return StateVector(self, amps)

    def __eq__(self, other) -> bool:
        return isinstance(other, CompositeSpace) and self.factors == other.factors

    def __hash__(self):
        return hash(self.factors)

    def __repr__(self) -> str:
        body = ", ".join(f"{f.name}:{f.dim}" for f in self.factors)
        return f"CompositeSpace({body})"


class StateVector:
    """A normalized complex amplitude vector over a composite space."""

    def __init__(self, space: CompositeSpace, amplitudes: np.ndarray):
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        if amps.shape != (space.dim,):
            raise QStateError(f"amplitude length {amps.shape[0]} != space dim {space.dim}")
        nrm = np.linalg.norm(amps)
        if abs(nrm - 1.0) > TOLERANCES.norm:
            raise QStateError(f"state norm {nrm} deviates from 1 beyond {TOLERANCES.norm}")
        self.space = space
        self.amplitudes = amps
        self.amplitudes.setflags(write=False)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def overlap(self, other: "StateVector") -> complex:
        if self.space != other.space:
            raise QStateError("overlap requires identical spaces")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def amplitude(self, levels: dict) -> complex:
        return complex(self.amplitudes[self.space.index(levels)])

    def tensor_view(self) -> np.ndarray:
        return self.amplitudes.reshape(self.space.dims)

    def __repr__(self) -> str:
        return f"StateVector(dim={self.space.dim}, factors={self.space.names})"


class Operator:
    """A square matrix over a composite space.

    Intent flags record whether the matrix is meant to be Hermitian (a
    Hamiltonian, units of angular frequency) or unitary (a gate); each flag
    is verified on construction.
    """

    def __init__(self, space: CompositeSpace, matrix: np.ndarray,
                 hermitian: Optional[bool] = None, unitary: Optional[bool] = None):
        mat = np.asarray(matrix, dtype=complex)
        if mat.shape != (space.dim, space.dim):
            raise QStateError(f"matrix shape {mat.shape} != ({space.dim}, {space.dim})")
        if hermitian:
            err = np.max(np.abs(mat - mat.conj().T))
            scale = max(1.0, np.max(np.abs(mat)))
            if err > TOLERANCES.unitarity * scale:
                raise QStateError(f"hermitian intent violated by {err}")
        if unitary:
            err = np.max(np.abs(mat.conj().T @ mat - np.eye(space.dim)))
            if err > TOLERANCES.unitarity:
                raise QStateError(f"unitary intent violated by {err}")
        self.space = space
        self.matrix = mat
        self.matrix.setflags(write=False)
        self.hermitian = bool(hermitian)
        self.unitary = bool(unitary)

    def apply(self, state: StateVector) -> StateVector:
        if state.space != self.space:
            raise QStateError("operator and state live on different spaces")
        return StateVector(self.space, self.matrix @ state.amplitudes)

    def compose(self, other: "Operator") -> "Operator":
        """self applied after other (matrix product self @ other)."""
        if self.space != other.space:
            raise QStateError("composition requires identical spaces")
        return Operator(self.space, self.matrix @ other.matrix,
                        unitary=self.unitary and other.unitary)

    def dagger(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T,
                        hermitian=self.hermitian, unitary=self.unitary)

    def __repr__(self) -> str:
        kind = "hermitian" if self.hermitian else ("unitary" if self.unitary else "general")
        return f"Operator(dim={self.space.dim}, {kind})"


def tensor(states: Iterable[StateVector]) -> StateVector:
    """Kronecker product of states on disjoint factor sets."""
    states = list(states)
    if not states:
        raise QStateError("tensor of zero states")
    seen = set()
    for s in states:
        overlap_names = seen.intersection(s.space.names)
        if overlap_names:
            raise QStateError(f"label collision on {sorted(overlap_names)}")
        seen.update(s.space.names)
    factors = [f for s in states for f in s.space.factors]
    amps = states[0].amplitudes
    for s in states[1:]:
        amps = np.kron(amps, s.amplitudes)
    return StateVector(CompositeSpace(factors), amps)


def tensor_operators(ops: Iterable[Operator]) -> Operator:
    """Kronecker product of operators on disjoint factor sets."""
    ops = list(ops)
    seen = set()
    for o in ops:
        overlap_names = seen.intersection(o.space.names)
        if overlap_names:
            raise QStateError(f"label collision on {sorted(overlap_names)}")
        seen.update(o.space.names)
    factors = [f for o in ops for f in o.space.factors]
    mat = ops[0].matrix
    for o in ops[1:]:
        mat = np.kron(mat, o.matrix)
    return Operator(CompositeSpace(factors),
                    mat,
                    hermitian=all(o.hermitian for o in ops) or None,
                    unitary=all(o.unitary for o in ops) or None)


def identity(space: CompositeSpace) -> Operator:
    return Operator(space, np.eye(space.dim), hermitian=True, unitary=True)


def embed(op: Operator, space: CompositeSpace) -> Operator:
    """Lift an operator to a larger space, acting as identity elsewhere.

    The operator's own factors (by name) must all exist in the target space
    with matching dimensions; their relative order inside op is respected.
    """
    target_axes = []
    for f in op.space.factors:
        ax = space.axis(f.name)  # raises on unknown label
        if space.factors[ax].dim != f.dim:
            raise QStateError(f"factor {f.name!r} dim mismatch: {space.factors[ax].dim} vs {f.dim}")
        target_axes.append(ax)
    rest_axes = [k for k in range(len(space.factors)) if k not in target_axes]
    rest_dim = int(np.prod([space.dims[k] for k in rest_axes], initial=1))

    # Build on the permuted ordering (targets..., rest...), then permute the
    # row and column indices back to the space's factor order.
    big = np.kron(op.matrix, np.eye(rest_dim))
    perm = target_axes + rest_axes
    inv = np.argsort(perm)
    dims_perm = [space.dims[k] for k in perm]
    big = big.reshape(dims_perm + dims_perm)
    n = len(space.factors)
    big = big.transpose(list(inv) + [n + k for k in inv])
    big = big.reshape(space.dim, space.dim)
    return Operator(space, big, hermitian=op.hermitian or None,
                    unitary=op.unitary or None)


def _computational_basis(factor: FactorLabel) -> list:
    return [(str(k), np.eye(factor.dim)[:, k].astype(complex)) for k in range(factor.dim)]


def _validate_basis(factor: FactorLabel, basis) -> list:
    basis = [(str(label), np.asarray(vec, dtype=complex).reshape(-1)) for label, vec in basis]
    if len(basis) != factor.dim:
        raise QStateError(f"basis size {len(basis)} != factor dim {factor.dim}")
    mat = np.array([vec for _, vec in basis])
    gram = mat.conj() @ mat.T
    if np.max(np.abs(gram - np.eye(factor.dim))) > 1e-10:
        raise QStateError("basis is not orthonormal")
    return basis


def _project_factor(state: StateVector, axis: int, vec: np.ndarray):
    """Return (projected un-normalized amplitudes, probability)."""
    psi = state.tensor_view()
    psi = np.moveaxis(psi, axis, 0)
    coeff = np.tensordot(vec.conj(), psi, axes=(0, 0))  # amplitude per rest-index
    prob = float(np.sum(np.abs(coeff) ** 2))
    proj = np.multiply.outer(vec, coeff)
    proj = np.moveaxis(proj, 0, axis)
    return proj.reshape(-1), prob


def enumerate_branches(state: StateVector, factor: str, basis=None) -> list:
    """All measurement branches of one factor: (outcome, collapsed, probability).

    Zero-probability branches are listed with collapsed state None.
    Probabilities sum to 1 within 1e-10.
    """
    f = state.space.factor(factor)
    basis = _validate_basis(f, basis) if basis is not None else _computational_basis(f)
    axis = state.space.axis(factor)
    out = []
    for label, vec in basis:
        proj, prob = _project_factor(state, axis, vec)
        if prob < 1e-30:
            out.append((label, None, 0.0))
        else:
            out.append((label, StateVector(state.space, proj / np.sqrt(prob)), prob))
    total = sum(p for _, _, p in out)
    if abs(total - 1.0) > 1e-10:
        raise QStateError(f"branch probabilities sum to {total}, not 1")
    return out


def measure_factor(state: StateVector, factor: str, basis=None,
                   rng: Optional[np.random.Generator] = None,
                   rng_seed: Optional[int] = None):
    """Born-rule measurement of one factor.

    Returns (outcome label, collapsed state, probability).  With a seed (or
    an explicit generator) the outcome sequence is deterministic; without
    either, the most probable branch is chosen deterministically, which keeps
    unseeded library use reproducible.  Protocol code enumerates branches
    instead of sampling unless explicitly seeded.
    """
    branches = enumerate_branches(state, factor, basis)
    if rng is None and rng_seed is not None:
        rng = make_rng(rng_seed)
    if rng is None:
        k = int(np.argmax([p for _, _, p in branches]))
    else:
        probs = np.array([p for _, _, p in branches])
        k = int(rng.choice(len(branches), p=probs / probs.sum()))
    label, collapsed, prob = branches[k]
    if collapsed is None:
        raise QStateError("sampled a zero-probability branch")
    return label, collapsed, prob


def state_fidelity(x: StateVector, y: StateVector) -> float:
    """|<x|y>|^2; insensitive to global phase by construction."""
    return float(abs(x.overlap(y)) ** 2)


def equal_up_to_global_phase(x: np.ndarray, y: np.ndarray, tol: float = 1e-10) -> bool:
    """Amplitude-level comparison modulo one global phase."""
    x = np.asarray(x, dtype=complex).reshape(-1)
    y = np.asarray(y, dtype=complex).reshape(-1)
    if x.shape != y.shape:
        return False
    k = int(np.argmax(np.abs(x)))
    if abs(x[k]) < tol:
        return bool(np.max(np.abs(y)) < tol)
    phase = y[k] / x[k]
    if abs(abs(phase) - 1.0) > tol:
        return False
    return bool(np.max(np.abs(x * phase - y)) <= tol)


def make_rng(seed: Optional[int]) -> np.random.Generator:
    """The one named RNG constructor used across the package."""
    return np.random.default_rng(seed)
