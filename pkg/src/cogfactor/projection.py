"""Fixed first layer: orthogonal projection onto spatial dictionaries.

Each dictionary ``D`` (voxels x components) yields a block
``W = D (D^T D)^{-1}``, so that ``D^T W = I`` and ``W^T x`` are the
least-squares loadings of ``x`` on the components. Several dictionaries
are combined by concatenating their blocks column-wise.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from cogfactor.errors import GramSingular, InvalidDictionary, ShapeMismatch

DEFAULT_RCOND = 1e-10


@dataclass(frozen=True)
class Dictionary:
    """Nonnegative spatial components, one per column.

    ``components`` may be a dense array or any scipy sparse matrix. Linear
    independence is only checked when the projection is computed.
    """

    components: object
    name: str = ""

    def __post_init__(self):
        comp = self.components
        if sp.issparse(comp):
            comp = sp.csc_matrix(comp, dtype=np.float64)
            comp.sum_duplicates()
            values = comp.data
        else:
            comp = np.asarray(comp, dtype=np.float64)
            if comp.ndim != 2:
                raise ShapeMismatch(f"dictionary must be 2-D, got shape {comp.shape}")
            values = comp
        if not np.all(np.isfinite(values)):
            raise InvalidDictionary(f"dictionary {self.name!r} has non-finite entries")
        if np.any(values < 0):
            raise InvalidDictionary(f"dictionary {self.name!r} has negative entries")
        # entries are nonnegative, so a zero column sum means an all-zero column
        col_sums = np.asarray(comp.sum(axis=0)).ravel()
        if np.any(col_sums == 0):
            bad = np.flatnonzero(col_sums == 0)
            raise InvalidDictionary(f"dictionary {self.name!r} has all-zero columns {bad.tolist()}")
        object.__setattr__(self, "components", comp)

    @classmethod
    def from_coo(cls, rows, cols, values, shape, name=""):
        """Build from coordinate triplets; duplicate coordinates are summed."""
        mat = sp.coo_matrix((np.asarray(values, dtype=np.float64),
                             (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
                            shape=shape)
        return cls(mat.tocsc(), name=name)

    @property
    def n_voxels(self):
        return self.components.shape[0]

    @property
    def n_components(self):
        return self.components.shape[1]

    @property
    def is_sparse(self):
        return sp.issparse(self.components)

    def dense(self):
        if self.is_sparse:
            return self.components.toarray()
        return self.components

    def gram(self):
        comp = self.components
        g = comp.T @ comp
        return g.toarray() if sp.issparse(g) else np.asarray(g)


def compute_projection(dictionary, rcond=DEFAULT_RCOND):
    """Return ``D (D^T D)^{-1}`` as a dense (voxels x components) array.

    Raises :class:`GramSingular` when the Gram matrix's reciprocal condition
    number falls below ``rcond``.
    """
    if not rcond > 0:
        raise ValueError(f"rcond must be positive, got {rcond}")
    gram = dictionary.gram()
    eig = np.linalg.eigvalsh(gram)
    if eig[0] <= 0 or eig[0] < rcond * eig[-1]:
        raise GramSingular(
            f"Gram matrix of dictionary {dictionary.name!r} is singular "
            f"(eigenvalues in [{eig[0]:.3e}, {eig[-1]:.3e}], rcond={rcond:g})")
    factor = scipy.linalg.cho_factor(gram, lower=True)
    # W^T = G^{-1} D^T since G is symmetric
    dt = dictionary.components.T
    dt = dt.toarray() if sp.issparse(dt) else dt
    return np.ascontiguousarray(scipy.linalg.cho_solve(factor, dt).T)


@dataclass(frozen=True)
class ProjectionOperator:
    """Concatenation of per-dictionary projection blocks."""

    blocks: tuple
    dictionaries: tuple = ()
    names: tuple = ()
    matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("a projection operator needs at least one block")
        p = self.blocks[0].shape[0]
        for b in self.blocks:
            if b.shape[0] != p:
                raise ShapeMismatch("projection blocks must share their voxel count")
        full = np.ascontiguousarray(np.hstack(self.blocks))
        full.setflags(write=False)
        object.__setattr__(self, "matrix", full)

    @property
    def n_voxels(self):
        return self.matrix.shape[0]

    @property
    def total_dim(self):
        return self.matrix.shape[1]

    @property
    def widths(self):
        return tuple(b.shape[1] for b in self.blocks)

    @property
    def scale_offsets(self):
        """Half-open ``(start, stop)`` column range of each block."""
        edges = np.concatenate([[0], np.cumsum(self.widths)])
        return tuple((int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]))

    @property
    def n_scales(self):
        return len(self.blocks)


def assemble_multiscale(dictionaries, rcond=DEFAULT_RCOND):
    """Build the projection for an ordered list of dictionaries."""
    dictionaries = list(dictionaries)
    if not dictionaries:
        raise ValueError("need at least one dictionary")
    p = dictionaries[0].n_voxels
    for d in dictionaries[1:]:
        if d.n_voxels != p:
            raise ShapeMismatch(
                f"dictionary {d.name!r} has {d.n_voxels} voxels, expected {p}")
    blocks = []
    for d in dictionaries:
        w = compute_projection(d, rcond=rcond)
        w.setflags(write=False)
        blocks.append(w)
    return ProjectionOperator(tuple(blocks), tuple(dictionaries), tuple(d.name for d in dictionaries))


def project(op, X):
    """Loadings of each row of ``X`` (n x voxels) on every scale, concatenated."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        return project(op, X[None, :])[0]
    if X.ndim != 2 or X.shape[1] != op.n_voxels:
        raise ShapeMismatch(f"expected samples with {op.n_voxels} columns, got shape {X.shape}")
    return X @ op.matrix


def reconstruct(op, y, dictionaries=None):
    """Map loadings back to voxel space, averaging the per-scale images.

    ``t = (1/S) sum_s D_s y_s`` where ``y_s`` is the slice of ``y`` belonging
    to scale ``s``. The average (rather than the sum) keeps template
    amplitudes comparable when the number of scales changes.
    """
    dictionaries = tuple(dictionaries) if dictionaries is not None else op.dictionaries
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (op.total_dim,):
        raise ShapeMismatch(f"loadings must have shape ({op.total_dim},), got {y.shape}")
    if len(dictionaries) != op.n_scales:
        raise ShapeMismatch(f"need {op.n_scales} dictionaries, got {len(dictionaries)}")
    out = np.zeros(op.n_voxels)
    for d, (start, stop) in zip(dictionaries, op.scale_offsets):
        if d.n_components != stop - start or d.n_voxels != op.n_voxels:
            raise ShapeMismatch(f"dictionary {d.name!r} does not match its projection block")
        out += np.asarray(d.components @ y[start:stop]).ravel()
    return out / op.n_scales
