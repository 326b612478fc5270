"""Epsilon-insensitive kernel SVR trained by pairwise coordinate descent.

Self-contained regression core: kernels, per-feature z-scoring, an SMO-style
dual solver with maximal-violating-pair selection, and a versioned model
file.  The module never looks at grid objects; it sees feature matrices and
label vectors only.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

KERNELS = ("rbf", "polynomial")
MODEL_VERSION = 1

SV_TOL = 1e-12      # dual weights at or below this are dropped from the model
GRAM_JITTER = 1e-10  # diagonal guard on the training Gram matrix


@dataclass(frozen=True)
class KernelSpec:
    """rbf: exp(-|x-y|^2 / 2 sigma^2); polynomial: (x.y)^degree."""

    kind: str = "rbf"
    sigma: float = 1.0
    degree: int = 3

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValidationError(f"unknown kernel kind '{self.kind}'")
        if self.kind == "rbf" and not self.sigma > 0:
            raise ValidationError("rbf kernel requires sigma > 0")
        if self.kind == "polynomial":
            if int(self.degree) != self.degree or self.degree < 1:
                raise ValidationError("polynomial kernel requires integer degree >= 1")


def kernel_eval(spec, x, y):
    """Scalar kernel value k(x, y)."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValidationError(f"kernel operands have dimensions {x.size} and {y.size}")
    if spec.kind == "rbf":
        diff = x - y
        return float(np.exp(-np.dot(diff, diff) / (2.0 * spec.sigma ** 2)))
    return float(np.dot(x, y) ** spec.degree)


def kernel_matrix(spec, xs, ys=None):
    """Gram block K[i, j] = k(xs[i], ys[j]); ys defaults to xs."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = xs if ys is None else np.atleast_2d(np.asarray(ys, dtype=float))
    if xs.shape[1] != ys.shape[1]:
        raise ValidationError(
            f"kernel operands have dimensions {xs.shape[1]} and {ys.shape[1]}")
    if spec.kind == "rbf":
        d2 = (np.sum(xs * xs, axis=1)[:, None]
              + np.sum(ys * ys, axis=1)[None, :] - 2.0 * (xs @ ys.T))
        np.maximum(d2, 0.0, out=d2)
        return np.exp(-d2 / (2.0 * spec.sigma ** 2))
    return (xs @ ys.T) ** spec.degree


def median_sigma(xs):
    """Median pairwise distance; the usual rbf bandwidth heuristic.

    Falls back to 1.0 when every pair coincides.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    d2 = (np.sum(xs * xs, axis=1)[:, None]
          + np.sum(xs * xs, axis=1)[None, :] - 2.0 * (xs @ xs.T))
    iu = np.triu_indices(xs.shape[0], k=1)
    dists = np.sqrt(np.maximum(d2[iu], 0.0))
    dists = dists[dists > 0]
    if dists.size == 0:
        return 1.0
    return float(np.median(dists))


# ---------------------------------------------------------------------------
# per-feature normalization

@dataclass(frozen=True)
class Normalization:
    """z-score statistics; zero-variance coordinates keep std 1."""

    mean: np.ndarray
    std: np.ndarray


def normalize_fit(xs):
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[0] < 2:
        raise ValidationError("normalization needs at least 2 training vectors")
    mean = xs.mean(axis=0)
    std = xs.std(axis=0)
    # constant coordinates: rounding noise in the sample std must not blow
    # up the z-scores, so anything below float resolution counts as zero
    std = np.where(std <= 1e-12 * (np.abs(mean) + 1.0), 1.0, std)
    return Normalization(mean=mean, std=std)


def normalize_apply(stats, xs):
    arr = np.asarray(xs, dtype=float)
    if arr.shape[-1] != stats.mean.size:
        raise ValidationError(
            f"feature dimension {arr.shape[-1]} does not match "
            f"normalization dimension {stats.mean.size}")
    return (arr - stats.mean) / stats.std


# ---------------------------------------------------------------------------
# model

@dataclass
class SvrModel:
    kernel: KernelSpec
    vectors: np.ndarray      # support vectors in normalized feature space
    coef: np.ndarray         # dual weights alpha_i - alpha_i*
    bias: float              # in normalized label units
    epsilon: float
    c: float
    x_stats: Normalization
    y_stats: Normalization
    info: dict = field(default_factory=dict)

    @property
    def n_features(self):
        return self.x_stats.mean.size

    def decision(self, xs):
        """f(x) = sum_i coef_i k(sv_i, normalize(x)) + b, normalized labels."""
        z = normalize_apply(self.x_stats, np.atleast_2d(np.asarray(xs, dtype=float)))
        if self.vectors.shape[0] == 0:
            return np.full(z.shape[0], self.bias)
        return kernel_matrix(self.kernel, z, self.vectors) @ self.coef + self.bias

    def predict(self, xs):
        """De-normalized prediction; scalar for a single vector."""
        arr = np.asarray(xs, dtype=float)
        out = self.decision(arr) * self.y_stats.std[0] + self.y_stats.mean[0]
        return float(out[0]) if arr.ndim == 1 else out


class _GramCache:
    """Kernel rows on demand; full precompute unless a row budget is set."""

    def __init__(self, spec, z, cache_rows):
        self.spec = spec
        self.z = z
        self.limit = cache_rows
        self.full = None
        self.rows = {}
        if cache_rows is None:
            self.full = kernel_matrix(spec, z)
            self.full[np.diag_indices_from(self.full)] += GRAM_JITTER

    def row(self, i):
        if self.full is not None:
            return self.full[i]
        hit = self.rows.get(i)
        if hit is None:
            hit = kernel_matrix(self.spec, self.z[i:i + 1], self.z).ravel()
            hit[i] += GRAM_JITTER
            if len(self.rows) >= self.limit:
                self.rows.pop(next(iter(self.rows)))  # FIFO eviction
            self.rows[i] = hit
        return hit


def train_svr(features, labels, kernel=None, c=10.0, epsilon=0.05, tol=1e-3,
              max_iter=None, cache_rows=None, seed=None):
    """Fit an epsilon-insensitive SVR by SMO on the dual.

    Features and labels are z-scored internally (stats stored on the model),
    so `epsilon` is in normalized-label units.  Each step picks the pair of
    dual variables with the largest KKT violation and solves the two-variable
    subproblem in closed form; termination when the violation drops to `tol`.
    With `kernel=None` an rbf kernel with sigma = sqrt(n_features) is used.
    `cache_rows` bounds the number of Gram rows held in memory (None keeps
    the full matrix).
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels, dtype=float).ravel()
    n = x.shape[0]
    if n != y.size:
        raise ValidationError(f"{n} feature rows but {y.size} labels")
    if n < 2:
        raise ValidationError("training needs at least 2 samples")
    if not c > 0:
        raise ValidationError("C must be positive")
    if epsilon < 0:
        raise ValidationError("epsilon must be nonnegative")
    if kernel is None:
        kernel = KernelSpec("rbf", sigma=float(np.sqrt(x.shape[1])))

    x_stats = normalize_fit(x)
    y_stats = normalize_fit(y[:, None])
    z = normalize_apply(x_stats, x)
    t = normalize_apply(y_stats, y[:, None]).ravel()

    gram = _GramCache(kernel, z, cache_rows)
    if kernel.kind == "rbf":
        diag = np.full(n, 1.0 + GRAM_JITTER)
    else:
        diag = np.sum(z * z, axis=1) ** kernel.degree + GRAM_JITTER
    al = np.zeros(n)       # alpha: pulls the fit upward
    al_s = np.zeros(n)     # alpha*: pulls downward
    f_gap = t.copy()       # t_i - sum_j (al_j - al_s_j) K_ij
    if max_iter is None:
        max_iter = max(100000, 500 * n)

    iters = 0
    while True:
        # candidate scores for raising / lowering the net weight at each sample
        up_a = np.where(al < c, f_gap - epsilon, -np.inf)
        up_s = np.where(al_s > 0, f_gap + epsilon, -np.inf)
        dn_a = np.where(al > 0, f_gap - epsilon, np.inf)
        dn_s = np.where(al_s < c, f_gap + epsilon, np.inf)
        up = np.maximum(up_a, up_s)
        dn = np.minimum(dn_a, dn_s)
        i = int(np.argmax(up))
        m, mm = up[i], float(np.min(dn))
        violation = m - mm
        if violation <= tol or iters >= max_iter:
            break

        ki = gram.row(i)
        # second-order partner choice: largest objective decrease against i
        eta_all = np.maximum(ki[i] + diag - 2.0 * ki, 1e-12)
        gap = m - dn
        gain = np.where(gap > 0, gap * gap / eta_all, -np.inf)
        j = int(np.argmax(gain))
        kj = gram.row(j)
        eta = ki[i] + kj[j] - 2.0 * ki[j]
        up_via_a = up_a[i] >= up_s[i]    # which of the two variables moves
        dn_via_a = dn_a[j] <= dn_s[j]
        room_up = (c - al[i]) if up_via_a else al_s[i]
        room_dn = al[j] if dn_via_a else (c - al_s[j])
        step = min(room_up, room_dn)
        if eta > 1e-12:
            step = min(step, (m - float(dn[j])) / eta)
        if step <= 0:
            break
        if up_via_a:
            al[i] += step
        else:
            al_s[i] -= step
        if dn_via_a:
            al[j] -= step
        else:
            al_s[j] += step
        f_gap -= step * (ki - kj)
        iters += 1

    # a free upward puller fixes b at F_i - eps, a free downward one at
    # F_j + eps; at convergence those estimates agree to tol, so midpoint
    bias = 0.5 * (m + mm)
    beta = al - al_s
    keep = np.abs(beta) > SV_TOL
    raw = np.ascontiguousarray(x).tobytes() + np.ascontiguousarray(y).tobytes()
    info = {
        "iterations": iters,
        "violation": float(violation),
        "converged": bool(violation <= tol),
        "jitter": GRAM_JITTER,
        "n_train": n,
        "seed": seed,
        "data_hash": hashlib.sha256(raw).hexdigest()[:16],
    }
    return SvrModel(
        kernel=kernel, vectors=z[keep].copy(), coef=beta[keep].copy(),
        bias=float(bias), epsilon=float(epsilon), c=float(c),
        x_stats=x_stats, y_stats=y_stats, info=info,
    )


# ---------------------------------------------------------------------------
# serialization

def save_model(path, model):
    """Versioned npz archive; byte-deterministic for identical models."""
    np.savez(
        Path(path),
        version=np.int64(MODEL_VERSION),
        kind=np.str_(model.kernel.kind),
        sigma=np.float64(model.kernel.sigma),
        degree=np.int64(model.kernel.degree),
        vectors=model.vectors,
        coef=model.coef,
        bias=np.float64(model.bias),
        epsilon=np.float64(model.epsilon),
        c=np.float64(model.c),
        x_mean=model.x_stats.mean,
        x_std=model.x_stats.std,
        y_mean=model.y_stats.mean,
        y_std=model.y_stats.std,
        info=np.str_(json.dumps(model.info, sort_keys=True)),
    )


def load_model(path):
    with np.load(Path(path), allow_pickle=False) as data:
        if "version" not in data:
            raise FormatError(f"{path}: not a model file (no version field)")
        version = int(data["version"])
        if version != MODEL_VERSION:
            raise FormatError(
                f"{path}: model version {version}, expected {MODEL_VERSION}")
        return SvrModel(
            kernel=KernelSpec(kind=str(data["kind"]), sigma=float(data["sigma"]),
                              degree=int(data["degree"])),
            vectors=data["vectors"],
            coef=data["coef"],
            bias=float(data["bias"]),
            epsilon=float(data["epsilon"]),
            c=float(data["c"]),
            x_stats=Normalization(mean=data["x_mean"], std=data["x_std"]),
            y_stats=Normalization(mean=data["y_mean"], std=data["y_std"]),
            info=json.loads(str(data["info"])),
        )


def save_training_data(features_path, labels_path, features, labels):
    """Feature/label CSV pair; floats written in repr form for exactness."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels, dtype=float).ravel()
    if x.shape[0] != y.size:
        raise ValidationError(f"{x.shape[0]} feature rows but {y.size} labels")
    with open(features_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample"] + [f"f{k}" for k in range(x.shape[1])])
        for s in range(x.shape[0]):
            w.writerow([s] + [repr(float(v)) for v in x[s]])
    with open(labels_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "label"])
        for s in range(y.size):
            w.writerow([s, repr(float(y[s]))])


def load_training_data(features_path, labels_path):
    with open(features_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "sample":
            raise FormatError(f"{features_path}: expected 'sample,f0,...' header")
        rows = [[float(v) for v in row[1:]] for row in reader]
    with open(labels_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["sample", "label"]:
            raise FormatError(f"{labels_path}: expected 'sample,label' header")
        labels = [float(row[1]) for row in reader]
    x = np.asarray(rows, dtype=float)
    y = np.asarray(labels, dtype=float)
    if x.shape[0] != y.size:
        raise FormatError("feature/label CSV pair disagrees on sample count")
    return x, y
