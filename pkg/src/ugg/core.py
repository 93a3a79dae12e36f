"""Problem instances, configuration, graph topology and validation."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np


class UggError(Exception):
    """Base class for all errors raised by this package."""

    code = "UGG_ERROR"


class ValidationError(UggError, ValueError):
    code = "VALIDATION"


class DimensionMismatch(ValidationError):
    code = "DIMENSION_MISMATCH"


class NonSymmetric(ValidationError):
    code = "NON_SYMMETRIC"


class NonBinaryCannotLink(ValidationError):
    code = "NON_BINARY_CANNOT_LINK"


class NonFiniteEntry(ValidationError):
    code = "NON_FINITE_ENTRY"


class CannotLinkSelfLoop(ValidationError):
    code = "CANNOT_LINK_SELF_LOOP"


class EmptyGraph(UggError, ValueError):
    code = "EMPTY_GRAPH"


class InvalidConfig(UggError, ValueError):
    code = "INVALID_CONFIG"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Gallery-to-tracklet similarities (C x N), tracklet-to-tracklet
    similarities (N x N) and the symmetric cannot-link matrix (N x N).

    Construct through :func:`validate_instance` (or :meth:`from_arrays`);
    the bare constructor performs no checks.
    """

    gallery_tracklet_sim: np.ndarray
    tracklet_tracklet_sim: np.ndarray
    cannot_link: np.ndarray

    @classmethod
    def from_arrays(cls, gallery_tracklet_sim, tracklet_tracklet_sim,
                    cannot_link=None) -> ProblemInstance:
        s_gt = np.asarray(gallery_tracklet_sim)
        s_tt = np.asarray(tracklet_tracklet_sim)
        if cannot_link is None:
            n = s_gt.shape[1] if s_gt.ndim == 2 else 0
            cannot_link = np.zeros((n, n), dtype=np.int8)
        return validate_instance(cls(s_gt, s_tt, np.asarray(cannot_link)))

    @property
    def num_galleries(self) -> int:
        return int(self.gallery_tracklet_sim.shape[0])

    @property
    def num_tracklets(self) -> int:
        return int(self.gallery_tracklet_sim.shape[1])

    def permuted(self, tracklet_perm=None, gallery_perm=None) -> ProblemInstance:
        """Relabel tracklets and/or galleries. ``perm[new] = old``."""
        s_gt, s_tt, cl = (self.gallery_tracklet_sim, self.tracklet_tracklet_sim,
                          self.cannot_link)
        if tracklet_perm is not None:
            p = np.asarray(tracklet_perm)
            s_gt = s_gt[:, p]
            s_tt = s_tt[np.ix_(p, p)]
            cl = cl[np.ix_(p, p)]
        if gallery_perm is not None:
            s_gt = s_gt[np.asarray(gallery_perm), :]
        return validate_instance(ProblemInstance(s_gt, s_tt, cl))


def validate_instance(raw: ProblemInstance) -> ProblemInstance:
    """Check every instance invariant and return a read-only float64 copy.

    Nothing is repaired: an asymmetric matrix is an error, not something to
    average away.
    """
    s_gt = np.array(raw.gallery_tracklet_sim, dtype=np.float64)
    s_tt = np.array(raw.tracklet_tracklet_sim, dtype=np.float64)
    cl_raw = np.asarray(raw.cannot_link)

    if s_gt.ndim != 2:
        raise DimensionMismatch(f"gallery_tracklet_sim must be 2-D, got shape {s_gt.shape}")
    c, n = s_gt.shape
    if c < 1 or n < 1:
        raise DimensionMismatch(f"need C >= 1 and N >= 1, got C={c}, N={n}")
    if s_tt.shape != (n, n):
        raise DimensionMismatch(f"tracklet_tracklet_sim must be {n}x{n}, got {s_tt.shape}")
    if cl_raw.shape != (n, n):
        raise DimensionMismatch(f"cannot_link must be {n}x{n}, got {cl_raw.shape}")

    if not np.all(np.isfinite(s_gt)):
        raise NonFiniteEntry("gallery_tracklet_sim contains a non-finite entry")
    if not np.all(np.isfinite(s_tt)):
        raise NonFiniteEntry("tracklet_tracklet_sim contains a non-finite entry")
    cl_float = np.asarray(cl_raw, dtype=np.float64)
    if not np.all(np.isfinite(cl_float)):
        raise NonFiniteEntry("cannot_link contains a non-finite entry")

    if not np.all((cl_float == 0) | (cl_float == 1)):
        raise NonBinaryCannotLink("cannot_link entries must be 0 or 1")
    cl = cl_float.astype(np.int8)
    if np.any(np.diag(cl) != 0):
        raise CannotLinkSelfLoop("cannot_link diagonal must be zero")
    if not np.array_equal(cl, cl.T):
        i, j = np.argwhere(cl != cl.T)[0]
        raise NonSymmetric(f"cannot_link is not symmetric at ({i}, {j})")
    if not np.array_equal(s_tt, s_tt.T):
        i, j = np.argwhere(s_tt != s_tt.T)[0]
        raise NonSymmetric(f"tracklet_tracklet_sim is not symmetric at ({i}, {j})")

    return ProblemInstance(_frozen(s_gt), _frozen(s_tt), _frozen(cl))


class GateMode(str, Enum):
    FIXED = "fixed_gates"
    ADAPTIVE = "adaptive_gates"


class UpdateSemantics(str, Enum):
    # Node messages only through outgoing gates i->j, as the update is printed.
    PAPER_FAITHFUL = "paper_faithful"
    # Outgoing and incoming gates; the exact mean-field coordinate update.
    DERIVATION_EXACT = "derivation_exact"


@dataclass(frozen=True)
class NeighborhoodPolicy:
    """``full``, ``top_k`` (with ``k``) or ``threshold`` (with ``tau``)."""

    kind: str = "full"
    k: Optional[int] = None
    tau: Optional[float] = None

    def __post_init__(self):
        if self.kind == "full":
            if self.k is not None or self.tau is not None:
                raise InvalidConfig("full policy takes no parameters")
        elif self.kind == "top_k":
            if self.k is None or int(self.k) != self.k or self.k < 1:
                raise InvalidConfig(f"top_k needs an integer k >= 1, got {self.k!r}")
        elif self.kind == "threshold":
            if self.tau is None or not np.isfinite(self.tau):
                raise InvalidConfig(f"threshold needs a finite tau, got {self.tau!r}")
        else:
            raise InvalidConfig(f"unknown neighborhood policy {self.kind!r}")

    @classmethod
    def full(cls) -> NeighborhoodPolicy:
        return cls("full")

    @classmethod
    def top_k(cls, k: int) -> NeighborhoodPolicy:
        return cls("top_k", k=int(k))

    @classmethod
    def threshold(cls, tau: float) -> NeighborhoodPolicy:
        return cls("threshold", tau=float(tau))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.k is not None:
            d["k"] = self.k
        if self.tau is not None:
            d["tau"] = self.tau
        return d

    @classmethod
    def from_dict(cls, d) -> NeighborhoodPolicy:
        if isinstance(d, str):
            return cls(d)
        unknown = set(d) - {"kind", "k", "tau"}
        if unknown:
            raise InvalidConfig(f"unknown neighborhood_policy keys: {sorted(unknown)}")
        return cls(d.get("kind", "full"), d.get("k"), d.get("tau"))


@dataclass(frozen=True)
class UggConfig:
    """Hyperparameters of the gated graph.

    Defaults are the IJB-S testing configuration (T_gt = T_tt = 15,
    alpha_p = 10, alpha_n = 2, K = 4); see :data:`PRESETS` for the CSM ones.
    """

    temp_gallery: float = 15.0
    temp_tracklet: float = 15.0
    alpha_positive: float = 10.0
    alpha_negative: float = 2.0
    iterations: int = 4
    neighborhood_policy: NeighborhoodPolicy = field(default_factory=NeighborhoodPolicy)
    gate_mode: GateMode = GateMode.ADAPTIVE
    cannot_link_masks_positive: bool = False
    update_semantics: UpdateSemantics = UpdateSemantics.PAPER_FAITHFUL

    def __post_init__(self):
        object.__setattr__(self, "gate_mode", GateMode(self.gate_mode))
        object.__setattr__(self, "update_semantics", UpdateSemantics(self.update_semantics))
        if isinstance(self.neighborhood_policy, (dict, str)):
            object.__setattr__(self, "neighborhood_policy",
                               NeighborhoodPolicy.from_dict(self.neighborhood_policy))
        for name in ("temp_gallery", "temp_tracklet"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidConfig(f"{name} must be a finite positive number, got {v!r}")
        for name in ("alpha_positive", "alpha_negative"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise InvalidConfig(f"{name} must be finite and non-negative, got {v!r}")
        if isinstance(self.iterations, bool) or int(self.iterations) != self.iterations \
                or self.iterations < 0:
            raise InvalidConfig(f"iterations must be a non-negative integer, got {self.iterations!r}")
        object.__setattr__(self, "iterations", int(self.iterations))

    def replace(self, **changes) -> UggConfig:
        from dataclasses import replace
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "temp_gallery": self.temp_gallery,
            "temp_tracklet": self.temp_tracklet,
            "alpha_positive": self.alpha_positive,
            "alpha_negative": self.alpha_negative,
            "iterations": self.iterations,
            "neighborhood_policy": self.neighborhood_policy.to_dict(),
            "gate_mode": self.gate_mode.value,
            "cannot_link_masks_positive": self.cannot_link_masks_positive,
            "update_semantics": self.update_semantics.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> UggConfig:
        d = dict(d)
        preset = d.pop("preset", None)
        if preset is not None and preset not in PRESETS:
            raise InvalidConfig(f"unknown preset {preset!r}")
        base = PRESETS[preset].to_dict() if preset is not None else {}
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown ugg config keys: {sorted(unknown)}")
        base.update(d)
        return cls(**base)


PRESETS = {
    "csm-in": UggConfig(10.0, 15.0, 5.0, 0.0, 2),
    "csm-across": UggConfig(20.0, 30.0, 15.0, 0.0, 2),
    "ijbs": UggConfig(15.0, 15.0, 10.0, 2.0, 4, cannot_link_masks_positive=True),
    # tuned on held-out seeds of the synthetic desk profile
    "desk": UggConfig(2.0, 15.0, 5.0, 1.0, 4),
}


@dataclass(frozen=True, eq=False)
class Graph:
    num_nodes: int
    neighbors: tuple
    directed_edges: tuple

    @property
    def adjacency(self) -> np.ndarray:
        """Boolean N x N matrix, ``adj[i, j]`` iff ``j in N(i)``."""
        adj = np.zeros((self.num_nodes, self.num_nodes), dtype=bool)
        for i, j in self.directed_edges:
            adj[i, j] = True
        return adj

    def is_symmetric(self) -> bool:
        a = self.adjacency
        return bool(np.array_equal(a, a.T))


def build_graph(instance: ProblemInstance, config: UggConfig) -> Graph:
    n = instance.num_tracklets
    if n == 0:
        raise EmptyGraph("graph needs at least one tracklet")
    policy = config.neighborhood_policy
    s = instance.tracklet_tracklet_sim
    neighbors = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        if policy.kind == "full":
            nbrs = others
        elif policy.kind == "top_k":
            # stable sort on -s keeps lower indices first among ties
            ranked = sorted(others, key=lambda j: -s[i, j])
            nbrs = sorted(ranked[: policy.k])
        else:
            nbrs = [j for j in others if s[i, j] >= policy.tau]
        neighbors.append(tuple(nbrs))
    edges = tuple((i, j) for i in range(n) for j in neighbors[i])
    return Graph(n, tuple(neighbors), edges)


@dataclass(frozen=True)
class Labels:
    """Supervision for the loss: per-tracklet class labels (0-based gallery
    index, or ``None`` for unlabeled) and optional pair labels."""

    class_label: tuple
    pair_label: Optional[np.ndarray] = None

    @classmethod
    def from_identities(cls, identities: Sequence[int], labeled: Optional[Sequence[int]] = None,
                        pair_label=None) -> Labels:
        n = len(identities)
        labeled_set = set(range(n)) if labeled is None else {int(i) for i in labeled}
        cls_lab = tuple(int(identities[i]) if i in labeled_set else None for i in range(n))
        return cls(cls_lab, None if pair_label is None else np.asarray(pair_label))

    @property
    def labeled_set(self) -> tuple:
        return tuple(i for i, z in enumerate(self.class_label) if z is not None)

    def pair_matrix(self) -> np.ndarray:
        """Binary same-identity matrix; derived from class labels when no
        explicit pair labels were given (entries outside the labeled set are 0)."""
        if self.pair_label is not None:
            return np.asarray(self.pair_label, dtype=np.float64)
        n = len(self.class_label)
        z = np.zeros((n, n))
        s = self.labeled_set
        for i in s:
            for j in s:
                z[i, j] = float(self.class_label[i] == self.class_label[j])
        return z
