"""Kernel-set file I/O, nested masking schedules, splits and synthetic data.

File formats
------------
CSV
    Comma separated, row major, optional header row. ``NaN`` marks hidden
    entries; a hidden object must be NaN across its whole row and column.
Binary
    ``b"MKMC"``, version ``u16``, ``l`` as ``u32``, then ``l*l`` row-major
    little-endian float64 values and ``l`` mask bytes (1 = observed). All
    integers are little-endian.
Mask sidecar
    One line per object, ``1`` for observed and ``0`` for hidden.
"""
from __future__ import annotations

import csv
import io
import math
import re
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .completion import DEFAULT_LAMBDA, KernelSet
from .errors import InvalidMaskPattern, KernelParseError
from .evalsuite import LabeledSplit
from .symmat import SymmetricKernel

MAGIC = b"MKMC"
VERSION = 1
_HEADER = struct.Struct("<4sHI")

DEFAULT_RATIOS = tuple(round(0.1 * i, 1) for i in range(1, 10))

_SUFFIX = {".csv": "csv", ".bin": "binary", ".mkmc": "binary"}


def infer_format(path):
    try:
        return _SUFFIX[Path(path).suffix.lower()]
    except KeyError:
        raise ValueError(f"cannot infer kernel format from {path!r}") from None


# --- CSV -----------------------------------------------------------------

def _parse_float(cell):
    s = cell.strip()
    if s.lower() in ("nan", "na"):
        return math.nan
    return float(s)


def read_csv_matrix(path):
    """Parse a square CSV matrix; NaN marks missing entries."""
    path = Path(path)
    text = path.read_text()
    rows = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        parsed = []
        for col, cell in enumerate(row, start=1):
            try:
                parsed.append(_parse_float(cell))
            except ValueError:
                if not rows and lineno == 1:
                    parsed = None  # header
                    break
                raise KernelParseError(f"cannot parse {cell!r} as a number",
                                       line=lineno, column=col, path=path) from None
        if parsed is None:
            continue
        if rows and len(parsed) != len(rows[0][1]):
            raise KernelParseError(f"expected {len(rows[0][1])} fields, found {len(parsed)}",
                                   line=lineno, path=path)
        rows.append((lineno, parsed))
    if not rows:
        raise KernelParseError("no numeric rows found", path=path)
    a = np.array([r for _, r in rows], dtype=float)
    if a.shape[0] != a.shape[1]:
        raise KernelParseError(f"matrix is {a.shape[0]}x{a.shape[1]}, not square", path=path)
    return a


def mask_from_nan(a):
    """Objects whose whole row and column are NaN are hidden.

    Any other NaN pattern raises :class:`InvalidMaskPattern`.
    """
    nan = np.isnan(a)
    hidden = nan.all(axis=1)
    expected = hidden[:, None] | hidden[None, :]
    if not np.array_equal(nan, expected):
        i, j = np.argwhere(nan != expected)[0]
        raise InvalidMaskPattern(
            f"NaN pattern at ({i}, {j}) does not hide a whole row and column"
        )
    return ~hidden


def write_csv_matrix(path, a):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in a:
            w.writerow(["nan" if math.isnan(x) else repr(float(x)) for x in row])


# --- binary --------------------------------------------------------------

def write_binary(path, kernel):
    ell = kernel.dim
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, ell))
        fh.write(np.ascontiguousarray(kernel.values, dtype="<f8").tobytes())
        fh.write(kernel.mask.astype(np.uint8).tobytes())


def read_binary(path):
    """Return ``(values, mask)`` from a binary kernel file."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise KernelParseError("file too short for header", path=path)
    magic, version, ell = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise KernelParseError(f"bad magic {magic!r}", path=path)
    if version != VERSION:
        raise KernelParseError(f"unsupported version {version}", path=path)
    need = _HEADER.size + 8 * ell * ell + ell
    if len(data) != need:
        raise KernelParseError(f"expected {need} bytes for l={ell}, found {len(data)}", path=path)
    off = _HEADER.size
    values = np.frombuffer(data, dtype="<f8", count=ell * ell, offset=off).reshape(ell, ell)
    mask = np.frombuffer(data, dtype=np.uint8, count=ell, offset=off + 8 * ell * ell)
    if not np.isin(mask, (0, 1)).all():
        raise KernelParseError("mask bytes must be 0 or 1", path=path)
    return values.astype(float), mask.astype(bool)


# --- sidecar masks -------------------------------------------------------

def read_mask(path):
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s not in ("0", "1"):
            raise KernelParseError(f"mask entry must be 0 or 1, got {s!r}", line=lineno, path=path)
        out.append(s == "1")
    if not out:
        raise KernelParseError("empty mask file", path=path)
    return np.array(out, dtype=bool)


def write_mask(path, mask):
    Path(path).write_text("".join("1\n" if m else "0\n" for m in np.asarray(mask, dtype=bool)))


# --- kernels -------------------------------------------------------------

def load_kernel(path, format=None, mask_path=None):
    """Read one kernel file into a :class:`SymmetricKernel`.

    The mask is the intersection of the file's own hidden objects (NaN rows
    in CSV, mask bytes in binary) and the optional sidecar. A non-PSD
    observed block only warns.
    """
    fmt = format or infer_format(path)
    if fmt == "csv":
        values = read_csv_matrix(path)
        mask = mask_from_nan(values)
    elif fmt == "binary":
        values, mask = read_binary(path)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if mask_path is not None:
        side = read_mask(mask_path)
        if side.size != mask.size:
            raise KernelParseError(f"mask has {side.size} entries, kernel has {mask.size}",
                                   path=mask_path)
        mask = mask & side
    kernel = SymmetricKernel(values, mask)
    if not kernel.observed_is_psd():
        warnings.warn(f"{path}: observed block is not positive semidefinite", stacklevel=2)
    return kernel


def save_kernel(path, kernel, format=None, hide=True):
    """Write a kernel. In CSV, hidden rows/columns become NaN when ``hide``."""
    fmt = format or infer_format(path)
    if fmt == "csv":
        a = np.array(kernel.values, copy=True)
        if hide and kernel.n_hidden:
            h = ~kernel.mask
            a[h, :] = np.nan
            a[:, h] = np.nan
        write_csv_matrix(path, a)
    elif fmt == "binary":
        write_binary(path, kernel)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def load_kernel_set(paths, format=None, mask_paths=None, lam=DEFAULT_LAMBDA):
    paths = list(paths)
    masks = list(mask_paths) if mask_paths is not None else [None] * len(paths)
    if len(masks) != len(paths):
        raise ValueError("one mask path per kernel is required")
    return KernelSet([load_kernel(p, format, m) for p, m in zip(paths, masks)], lam=lam)


_KFILE = re.compile(r"^Q(\d+)\.(csv|bin|mkmc)$")


def kernel_paths(directory):
    """``Q1.*``, ``Q2.*``, ... in a directory, ordered by index."""
    found = []
    for p in Path(directory).iterdir():
        m = _KFILE.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    found.sort()
    idx = [i for i, _ in found]
    if idx != list(range(1, len(idx) + 1)):
        raise FileNotFoundError(f"{directory}: kernel files must be Q1..QK, found {idx}")
    return [p for _, p in found]


def save_kernel_dir(directory, kernels, format="csv", hide=True, prefix="Q"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = "csv" if format == "csv" else "bin"
    paths = []
    for k, q in enumerate(getattr(kernels, "kernels", kernels), start=1):
        if not isinstance(q, SymmetricKernel):
            q = SymmetricKernel(q)
        p = directory / f"{prefix}{k}.{ext}"
        save_kernel(p, q, format, hide=hide)
        paths.append(p)
    return paths


def load_kernel_dir(directory, mask_dir=None, lam=DEFAULT_LAMBDA):
    paths = kernel_paths(directory)
    masks = None
    if mask_dir is not None:
        masks = [Path(mask_dir) / f"mask_{k}.txt" for k in range(1, len(paths) + 1)]
    return load_kernel_set(paths, mask_paths=masks, lam=lam)


def save_labels(path, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "label"])
        for i, y in enumerate(labels):
            w.writerow([i, int(y)])


def load_labels(path):
    path = Path(path)
    labels = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno == 1 and row and row[0].strip().lower() == "index":
                continue
            if not row:
                continue
            try:
                labels[int(row[0])] = int(row[1])
            except (ValueError, IndexError):
                raise KernelParseError(f"bad label row {row!r}", line=lineno, path=path) from None
    if not labels:
        raise KernelParseError("no labels", path=path)
    n = max(labels) + 1
    if sorted(labels) != list(range(n)):
        raise KernelParseError("label indices must be 0..n-1", path=path)
    return np.array([labels[i] for i in range(n)], dtype=int)


# --- masking protocol ----------------------------------------------------

@dataclass(frozen=True)
class MaskSchedule:
    """Nested hidden sets for a sequence of missing ratios.

    ``hidden[r][k]`` is the sorted array of objects hidden in kernel ``k``
    at ``ratios[r]``. Slots ``(object, kernel)`` are drawn without
    replacement in one random order; ratio ``r`` hides the first
    ``floor(r * l * K)`` of them, so larger ratios extend smaller ones.
    """

    ratios: tuple
    hidden: tuple
    seed: int
    ell: int
    K: int

    def index(self, ratio):
        for i, r in enumerate(self.ratios):
            if math.isclose(r, ratio, abs_tol=1e-12):
                return i
        raise KeyError(f"ratio {ratio} not in schedule {self.ratios}")

    def masks(self, ratio):
        """Observed-object masks (True = observed), one per kernel."""
        out = []
        for h in self.hidden[self.index(ratio)]:
            m = np.ones(self.ell, dtype=bool)
            m[h] = False
            out.append(m)
        return out

    def apply(self, kernels, ratio):
        """Same values, masks from the schedule."""
        ks = [q.replace(mask=m) for q, m in zip(kernels.kernels, self.masks(ratio))]
        return kernels.replace(kernels=ks)

    def n_hidden(self, ratio):
        return sum(h.size for h in self.hidden[self.index(ratio)])

    def is_nested(self):
        return check_nested([[set(h.tolist()) for h in per] for per in self.hidden])


def check_nested(hidden_sets):
    """``hidden_sets[r][k]`` must grow (weakly) with ``r`` for every kernel."""
    for a, b in zip(hidden_sets[:-1], hidden_sets[1:]):
        if len(a) != len(b):
            return False
        if any(not set(x) <= set(y) for x, y in zip(a, b)):
            return False
    return True


def make_mask_schedule(ell, K, ratios=DEFAULT_RATIOS, seed=0):
    ratios = tuple(float(r) for r in ratios)
    if not ratios:
        raise ValueError("need at least one ratio")
    if any(not 0.0 < r < 1.0 for r in ratios):
        raise ValueError(f"ratios must lie in (0, 1): {ratios}")
    if any(b <= a for a, b in zip(ratios[:-1], ratios[1:])):
        raise ValueError("ratios must be strictly increasing")
    if ell < 1 or K < 1:
        raise ValueError("ell and K must be >= 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(ell * K)
    hidden = []
    for r in ratios:
        # guard against 0.3 * 10 == 2.9999...
        count = int(math.floor(r * ell * K + 1e-9))
        slots = order[:count]
        objs, kern = np.divmod(slots, K)
        hidden.append(tuple(np.sort(objs[kern == k]) for k in range(K)))
    return MaskSchedule(ratios, tuple(hidden), seed, ell, K)


# --- splits and synthetic data -------------------------------------------

def make_split(labels, n_train, seed=0, nested_with=None):
    """Random train/test split; test is the complement of train.

    With ``nested_with``, its training objects are kept (in order) and the
    rest are drawn from the remaining objects.
    """
    labels = np.asarray(labels)
    ell = labels.size
    if not 0 < n_train < ell:
        raise ValueError(f"n_train must be in [1, {ell - 1}], got {n_train}")
    rng = np.random.default_rng(seed)
    if nested_with is None:
        train = rng.permutation(ell)[:n_train]
    else:
        base = np.asarray(nested_with.train_idx, dtype=np.intp)
        if base.size > n_train:
            raise ValueError("nested split is larger than n_train")
        rest = np.setdiff1d(np.arange(ell), base)
        train = np.concatenate([base, rng.permutation(rest)[: n_train - base.size]])
    test = np.setdiff1d(np.arange(ell), train)
    return LabeledSplit(labels, train, test)


@dataclass(frozen=True)
class SyntheticSpec:
    ell: int = 200
    K: int = 4
    d: int = 20
    sigma: float = 0.3
    seed: int = 0
    n_train: int | None = None

    def __post_init__(self):
        if self.ell < 2:
            raise ValueError("ell must be >= 2")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")


def synth_features(spec):
    """Latent features, per-view features and labels for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    x = rng.standard_normal((spec.ell, spec.d))
    views = [x + spec.sigma * rng.standard_normal(x.shape) for _ in range(spec.K)]
    w = rng.standard_normal(spec.d)
    labels = np.where(x @ w >= 0, 1, -1)
    return x, views, labels


def synth_kernel_set(spec, lam=DEFAULT_LAMBDA):
    """Correlated linear-kernel views of shared latent features.

    Returns the fully observed KernelSet and a split with ``spec.n_train``
    training objects (half of them when unset).
    """
    _, views, labels = synth_features(spec)
    kernels = KernelSet([SymmetricKernel(v @ v.T) for v in views], lam=lam)
    n_train = spec.n_train if spec.n_train is not None else spec.ell // 2
    return kernels, make_split(labels, n_train, seed=spec.seed)
