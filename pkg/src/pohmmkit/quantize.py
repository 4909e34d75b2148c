"""Per-group k-means vector quantization of continuous frame sequences."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class GroupSpec:
    """Named, disjoint, nonempty column groups; one output symbol per group."""

    groups: tuple

    def __post_init__(self):
        groups = tuple((str(n), tuple(int(c) for c in cols)) for n, cols in self.groups)
        if not groups:
            raise InvalidInputError("need at least one group")
        seen = set()
        for name, cols in groups:
            if not cols:
                raise InvalidInputError(f"group {name!r} has no columns")
            if seen & set(cols) or len(set(cols)) != len(cols):
                raise InvalidInputError("group column lists must be disjoint")
            seen |= set(cols)
        object.__setattr__(self, "groups", groups)

    @classmethod
    def parse(cls, text):
        """Parse ``"leg:0,1,2;arm:3,4"``."""
        groups = []
        for part in text.split(";"):
            if not part.strip():
                continue
            name, _, cols = part.partition(":")
            groups.append((name.strip(), [int(c) for c in cols.split(",") if c.strip()]))
        return cls(tuple(groups))

    @property
    def names(self):
        return [n for n, _ in self.groups]

    @property
    def max_column(self):
        return max(max(cols) for _, cols in self.groups)


@dataclass
class KMeansFit:
    centroids: np.ndarray
    distortion: float
    trace: list = field(default_factory=list)


def _assign(x, c):
    d2 = ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    # argmin takes the lowest index on ties
    lab = np.argmin(d2, axis=1)
    return lab, d2[np.arange(x.shape[0]), lab]


def _lloyd(x, init, max_iters):
    c = init.copy()
    K = c.shape[0]
    trace = []
    lab = None
    for _ in range(max_iters):
        new_lab, dist = _assign(x, c)
        trace.append(float(dist.mean()))
        if lab is not None and np.array_equal(new_lab, lab):
            break
        lab = new_lab
        counts = np.bincount(lab, minlength=K)
        for j in range(K):
            if counts[j]:
                c[j] = x[lab == j].mean(axis=0)
        for j in np.flatnonzero(counts == 0):
            # reseed an empty cluster at the point farthest from its centroid
            far = int(np.argmax(dist))
            c[j] = x[far]
            dist[far] = 0.0
    final = float(_assign(x, c)[1].mean())
    if final != trace[-1]:
        trace.append(final)
    return c, final, trace


def kmeans_fit(vectors, K, max_iters=100, restarts=10, seed=0):
    """Lloyd's algorithm, best of ``restarts`` random-subset initializations by distortion.

    Distortion is the mean squared Euclidean distance to the nearest centroid.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if K < 1 or restarts < 1 or max_iters < 1:
        raise InvalidInputError("K, restarts and max_iters must be positive")
    distinct = np.unique(x, axis=0)
    if distinct.shape[0] < K:
        raise InvalidInputError(f"only {distinct.shape[0]} distinct vectors for K={K}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        init = distinct[np.sort(rng.choice(distinct.shape[0], size=K, replace=False))]
        c, dist, trace = _lloyd(x, init, max_iters)
        if best is None or dist < best.distortion:
            best = KMeansFit(c, dist, trace)
    return best


@dataclass
class Codebook:
    """Centroids per group, plus the optional per-column standardization used at fit time."""

    spec: GroupSpec
    centroids: list
    means: list = None
    scales: list = None

    @property
    def sizes(self):
        return [c.shape[0] for c in self.centroids]

    def transform(self, g, x):
        if self.means is None:
            return x
        return (x - self.means[g]) / self.scales[g]


def _frames(frames, spec):
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] <= spec.max_column:
        raise InvalidInputError(f"frames must be 2-D with more than {spec.max_column} columns")
    return x


def fit_codebook(frames, spec, K, max_iters=100, restarts=10, seed=0, standardize=False):
    """Fit one k-means codebook per group, independently, on all frames."""
    x = _frames(frames, spec)
    cents, means, scales = [], [], []
    ss = np.random.SeedSequence(seed).spawn(len(spec.groups))
    for (name, cols), s in zip(spec.groups, ss):
        v = x[:, cols]
        if standardize:
            mu = v.mean(axis=0)
            sd = v.std(axis=0)
            sd[sd == 0] = 1.0
            v = (v - mu) / sd
            means.append(mu)
            scales.append(sd)
        fit = kmeans_fit(v, K, max_iters, restarts, int(s.generate_state(1)[0]))
        cents.append(fit.centroids)
    return Codebook(spec, cents, means if standardize else None, scales if standardize else None)


def encode(frames, spec, codebook):
    """Nearest-centroid symbol per group for every frame; shape ``(n_frames, n_groups)``."""
    x = _frames(frames, spec)
    if len(codebook.centroids) != len(spec.groups):
        raise InvalidInputError("codebook and group spec disagree on the number of groups")
    out = np.empty((x.shape[0], len(spec.groups)), dtype=np.int64)
    for g, ((_, cols), c) in enumerate(zip(spec.groups, codebook.centroids)):
        if c.shape[1] != len(cols):
            raise InvalidInputError("centroid width does not match the group")
        out[:, g] = _assign(codebook.transform(g, x[:, cols]), c)[0]
    return out


def decode(symbols, codebook, width):
    """Frames of ``width`` columns holding each group's centroid; other columns are zero."""
    sym = np.asarray(symbols)
    out = np.zeros((sym.shape[0], width))
    for g, ((_, cols), c) in enumerate(zip(codebook.spec.groups, codebook.centroids)):
        v = c[sym[:, g]]
        if codebook.means is not None:
            v = v * codebook.scales[g] + codebook.means[g]
        out[:, list(cols)] = v
    return out
