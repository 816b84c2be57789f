"""Cartesian grid domains and boundary-condition spaces.

A `GridDomain` is a node-centered lattice over an open box: active nodes
are interior unknowns at spacing h, and the first inactive/outside node
in any direction sits on the boundary layer.  Boundary faces (between an
active node and an inactive or outside one) carry the boundary
condition; `Mixed` holds the subset of faces treated as Dirichlet.
"""

from dataclasses import dataclass, field
import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridDomain:
    """Node lattice of dimension 1 or 2 with spacing h and an active mask."""

    dim: int
    shape: tuple
    h: float
    active: np.ndarray = None
    grid_id: str = "grid"
    allow_disconnected: bool = False

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError("grid dimension must be 1 or 2")
        if self.h <= 0:
            raise GridError("spacing must be positive")
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != self.dim:
            raise GridError("shape/dim mismatch")
        object.__setattr__(self, "shape", shape)
        if self.active is None:
            object.__setattr__(self, "active", np.ones(shape, dtype=bool))
        else:
            act = np.asarray(self.active, dtype=bool)
            if act.shape != shape:
                raise GridError("active mask shape mismatch")
            object.__setattr__(self, "active", act)
        if self.n_active == 0:
            raise GridError("empty active set")
        if not self.allow_disconnected and not self._connected():
            raise GridError("active region is disconnected (pass allow_disconnected=True to override)")

    @property
    def n_active(self):
        return int(self.active.sum())

    def _connected(self):
        from scipy.ndimage import label

        if self.dim == 1:
            structure = np.array([1, 1, 1])
            _, n = label(self.active, structure=structure)
        else:
            structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
            _, n = label(self.active, structure=structure)
        return n <= 1

    def active_indices(self):
        """Multi-indices of active nodes, in C order."""
        return np.argwhere(self.active)

    def index_map(self):
        """Array mapping multi-index -> unknown number (-1 if inactive)."""
        m = -np.ones(self.shape, dtype=np.int64)
        m[self.active] = np.arange(self.n_active)
        return m

    def node_coordinates(self):
        """Physical coordinates of active nodes ((n_active, dim) array)."""
        idx = self.active_indices().astype(float)
        return (idx + 1.0) * self.h

    def boundary_faces(self):
        """Faces between an active node and an inactive/outside slot.

        Each face is keyed (axis, neg_index, pos_index), indices as
        tuples; either side may lie outside the lattice.
        """
        faces = []
        act = self.active
        for axis in range(self.dim):
            for idx in np.argwhere(act):
                idx = tuple(idx)
                for step in (-1, 1):
                    nb = list(idx)
                    nb[axis] += step
                    nb = tuple(nb)
                    inside = all(0 <= nb[k] < self.shape[k] for k in range(self.dim))
                    if inside and act[nb]:
                        continue
                    if step == 1:
                        faces.append((axis, idx, nb))
                    else:
                        faces.append((axis, nb, idx))
        return faces

    def to_json(self):
        out = {"id": self.grid_id, "dim": self.dim, "shape": list(self.shape), "h": self.h}
        if not self.active.all():
            out["active"] = self.active.astype(int).tolist()
        return out

    @staticmethod
    def from_json(data):
        active = data.get("active")
        if active is not None:
            active = np.asarray(active, dtype=bool)
        return GridDomain(
            dim=int(data["dim"]),
            shape=tuple(data["shape"]),
            h=float(data["h"]),
            active=active,
            grid_id=data.get("id", "grid"),
        )


def interval_grid(n, length=1.0, grid_id="interval"):
    """1D grid with n interior nodes on (0, length); h = length/(n+1)."""
    return GridDomain(dim=1, shape=(n,), h=length / (n + 1), grid_id=grid_id)


def box_grid(nx, ny, length=1.0, active=None, grid_id="box"):
    """2D grid with nx*ny interior nodes on (0, length)^2."""
    return GridDomain(dim=2, shape=(nx, ny), h=length / (max(nx, ny) + 1),
                      active=active, grid_id=grid_id)


@dataclass(frozen=True)
class BCSpace:
    """Dirichlet, Neumann, or mixed boundary conditions.

    `dirichlet_faces` is consulted only for kind == "mixed"; it holds
    face keys as produced by `GridDomain.boundary_faces`.  An empty set
    coincides with Neumann, the full boundary with Dirichlet.
    """

    kind: str
    dirichlet_faces: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann", "mixed"):
            raise GridError(f"unknown boundary condition {self.kind!r}")

    def is_dirichlet_face(self, face):
        if self.kind == "dirichlet":
            return True
        if self.kind == "neumann":
            return False
        return face in self.dirichlet_faces


DIRICHLET = BCSpace("dirichlet")
NEUMANN = BCSpace("neumann")


def mixed_bc(grid, predicate):
    """Mixed space with Dirichlet on the faces selected by `predicate`.

    `predicate` receives (axis, neg_index, pos_index) and returns True
    for Dirichlet treatment.
    """
    chosen = frozenset(f for f in grid.boundary_faces() if predicate(*f))
    return BCSpace("mixed", chosen)
