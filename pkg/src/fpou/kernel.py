"""Fractional kernel and the lower-triangular coefficient table.

The kernel is

    K(t, s) = s**(1/2-H) / Gamma(H-1/2) * int_s^t tau**(H-1/2) (tau-s)**(H-3/2) dtau

for 0 < s < t and zero otherwise.  The table entry ``(k, i)`` is the block
average ``m * int_{(i-1)/m}^{i/m} K(k/m, s) ds`` divided by ``sqrt(lambda)``.

Because ``K(a t, a s) = a**(H-1/2) K(t, s)`` every table is a multiple of
the grid-free matrix ``Bhat[k, i] = int_{i-1}^{i} K(k, sigma) dsigma``;
that matrix is what :func:`build_table` integrates.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import hyp2f1

from .errors import FormatError, InvalidArgumentError, ResourceLimitError
from .quadrature import adaptive_singular, gauss_jacobi, gauss_legendre

logger = logging.getLogger(__name__)

H_MIN = 0.5 + 1e-3
DEFAULT_MAX_N = 20_000


@dataclass(frozen=True)
class KernelParams:
    H: float
    gamma_factor: float = field(init=False)

    def __post_init__(self):
        if not (H_MIN < self.H < 1.0):
            raise InvalidArgumentError(f"Hurst index must lie in ({H_MIN}, 1), got {self.H}")
        object.__setattr__(self, "gamma_factor", 1.0 / math.gamma(self.H - 0.5))


@dataclass(frozen=True)
class QuadMeta:
    inner: int = 16
    outer: int = 8

    def __post_init__(self):
        if self.inner < 1 or self.outer < 1:
            raise InvalidArgumentError("quadrature orders must be positive")


def lower_bound_constant(H: float) -> float:
    """``1 / [Gamma(H-1/2) (H-1/2) (H+1/2)]``: minimum of sqrt(lambda) F_j m^(H-1/2)."""
    return 1.0 / (math.gamma(H - 0.5) * (H - 0.5) * (H + 0.5))


def variance_constant(H: float) -> float:
    """``V_H^2 = -Gamma(2-2H) cos(pi H) / ((2H-1) pi H)``."""
    return -math.gamma(2 - 2 * H) * math.cos(math.pi * H) / ((2 * H - 1) * math.pi * H)


# --------------------------------------------------------------------------
# kernel evaluation


def _inner_integral(rho: np.ndarray, H: float, order: int) -> np.ndarray:
    """``J(rho) = int_0^1 u**(H-3/2) (rho+u)**(H-1/2) du`` for rho > 0.

    For rho >= 1 one Gauss-Jacobi rule suffices.  For small rho the factor
    ``(rho+u)**(H-1/2)`` bends sharply near u = 0, so [0, rho] is rescaled
    onto a Jacobi rule and [rho, 1] is covered by doubling panels.
    """
    a, b = H - 1.5, H - 0.5
    jac = gauss_jacobi(order, a)
    rho = np.asarray(rho, dtype=float)
    flat = rho.ravel()
    out = np.empty_like(flat)

    big = flat >= 1.0
    if big.any():
        r = flat[big]
        out[big] = ((r[:, None] + jac.nodes) ** b) @ jac.weights

    small = ~big
    if small.any():
        r = flat[small]
        head_const = ((1.0 + jac.nodes) ** b) @ jac.weights
        acc = r ** (a + b + 1.0) * head_const
        leg = gauss_legendre(order)
        levels = int(np.ceil(np.log2(1.0 / r.min()))) + 1
        for level in range(levels):
            lo = r * 2.0**level
            hi = np.minimum(2.0 * lo, 1.0)
            width = np.clip(hi - lo, 0.0, None)
            live = width > 0
            if not live.any():
                break
            u = lo[live, None] + width[live, None] * leg.nodes
            vals = u**a * (r[live, None] + u) ** b
            acc[live] += width[live] * (vals @ leg.weights)
        out[small] = acc
    return out.reshape(rho.shape)


def kernel_eval(t, s, params: KernelParams, inner_order: int = 16):
    """Evaluate ``K_H(t, s)``; broadcasts over array arguments.

    Uses tau = s + (t-s) u so the inner singularity becomes the Jacobi weight
    ``u**(H-3/2)``.  Returns 0 where s >= t.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise InvalidArgumentError("kernel_eval requires s > 0")
    t, s = np.broadcast_arrays(t, s)
    H = params.H
    out = np.zeros(t.shape)
    pos = s < t
    if pos.any():
        sp, tp = s[pos], t[pos]
        gap = tp - sp
        J = _inner_integral(sp / gap, H, inner_order)
        out[pos] = params.gamma_factor * sp ** (0.5 - H) * gap ** (2 * H - 1) * J
    if out.ndim == 0:
        return float(out)
    return out


def kernel_reference(t, s, H: float, gap=None):
    """Kernel via the closed hypergeometric form of the inner integral.

    Independent of the quadrature path; used only as a test oracle.  ``gap``
    may supply ``t - s`` directly when it is known more precisely than the
    difference of the rounded arguments.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    a, b = H - 1.5, H - 0.5
    if gap is None:
        gap = t - s
    gap = np.asarray(gap, dtype=float)
    live = gap > 0
    gap = np.where(live, gap, 1.0)
    rho = s / gap
    J = rho**b / (a + 1.0) * hyp2f1(-b, a + 1.0, a + 2.0, -1.0 / rho)
    val = s ** (0.5 - H) * gap ** (2 * H - 1) * J / math.gamma(H - 0.5)
    return np.where(live, val, 0.0)


# --------------------------------------------------------------------------
# single entries


def _check_indices(k, i):
    if int(k) != k or int(i) != i or not (1 <= i <= k):
        raise InvalidArgumentError(f"need integers 1 <= i <= k, got k={k}, i={i}")


def coeff_entry(k: int, i: int, m: int, params: KernelParams, quad_meta: QuadMeta | None = None) -> float:
    """Unscaled ``b_{k,i} = m * int_{(i-1)/m}^{i/m} K(k/m, s) ds``.

    Integrates in physical time, independently of the batched builder.
    Column 1 carries the s = 0 endpoint (where K mixes the exponents
    1/2-H and H-1/2) and is done adaptively; the diagonal uses a Jacobi rule
    in ``k/m - s`` since K vanishes there like ``(t-s)**(H-1/2)``.
    """
    _check_indices(k, i)
    qm = quad_meta or QuadMeta()
    H = params.H
    t = k / m
    lo, hi = (i - 1) / m, i / m

    def K(s):
        return kernel_eval(t, s, params, qm.inner)

    if i == 1:
        if k == 1:
            mid = 0.5 * hi
            val = adaptive_singular(K, 0.0, mid, "left", 1e-14) + adaptive_singular(K, mid, hi, "right", 1e-14)
        else:
            val = adaptive_singular(K, 0.0, hi, "left", 1e-14)
        return m * val
    if k == i:
        rule = gauss_jacobi(qm.outer, H - 0.5)
        w = rule.nodes / m
        vals = K(t - w) / w ** (H - 0.5)
        return float(m * (vals @ rule.weights) * (1.0 / m) ** (H + 0.5))
    x, wts = gauss_legendre(qm.outer).on_interval(lo, hi)
    return float(m * (K(x) @ wts))


# --------------------------------------------------------------------------
# the table


@dataclass(frozen=True, eq=False)
class CoefficientTable:
    """Scaled lower-triangular matrix ``b~`` with 1-based math indexing.

    ``b_scaled[k-1, i-1]`` holds ``b~_{k,i}``; entries above the diagonal
    are zero.  ``F[j]`` is ``F~_j = b~_{j+1,j+1}`` for ``j = 0..n-1``.
    """

    m: int
    n: int
    H: float
    lam: float
    b_scaled: np.ndarray
    quad_meta: QuadMeta = QuadMeta()

    @property
    def F(self) -> np.ndarray:
        return np.diagonal(self.b_scaled)

    @property
    def kappa(self) -> float:
        return math.exp(-self.lam / self.n)

    def f(self, i: int, j: int) -> float:
        """``f~_{i,j} = b~_{j+1,i} - b~_{j,i}`` for 1 <= i <= j <= n-1."""
        if not (1 <= i <= j <= self.n - 1):
            raise InvalidArgumentError(f"f index out of range: i={i}, j={j}")
        return float(self.b_scaled[j, i - 1] - self.b_scaled[j - 1, i - 1])

    def checksum(self) -> str:
        return f"{_payload_digest(self.b_scaled):016x}"

    def rescaled(self, factor: float) -> "CoefficientTable":
        """Same geometry with every entry multiplied by ``factor`` (test helper)."""
        return CoefficientTable(self.m, self.n, self.H, self.lam, self.b_scaled * factor, self.quad_meta)


def sample_count(m: int, alpha: float) -> int:
    return int(round(m**alpha))


def _diagonal(H, n, qm):
    """``Bhat[i, i]`` for i = 1..n."""
    params = KernelParams(H)
    out = np.empty(n)
    mid = 0.5

    def K11(s):
        return kernel_eval(1.0, s, params, qm.inner)

    out[0] = adaptive_singular(K11, 0.0, mid, "left", 1e-14) + adaptive_singular(K11, mid, 1.0, "right", 1e-14)
    if n > 1:
        rule = gauss_jacobi(qm.outer, H - 0.5)
        i = np.arange(2, n + 1, dtype=float)
        w = rule.nodes
        vals = kernel_eval(i[:, None], i[:, None] - w, params, qm.inner) / w ** (H - 0.5)
        out[1:] = vals @ rule.weights
    return out


def _subdiagonal(H, n, qm):
    """``Bhat[i+1, i]`` for i = 1..n-1."""
    params = KernelParams(H)
    out = np.empty(max(n - 1, 0))
    if n < 2:
        return out
    out[0] = adaptive_singular(lambda s: kernel_eval(2.0, s, params, qm.inner), 0.0, 1.0, "left", 1e-14)
    if n > 2:
        leg = gauss_legendre(qm.outer)
        i = np.arange(2, n, dtype=float)
        sig = i[:, None] - 1.0 + leg.nodes
        out[1:] = kernel_eval(i[:, None] + 1.0, sig, params, qm.inner) @ leg.weights
    return out


def _base_table(H: float, n: int, qm: QuadMeta) -> np.ndarray:
    """Grid-free matrix ``Bhat`` (n x n, lower triangular)."""
    c = 1.0 / math.gamma(H - 0.5)
    a, b = H - 1.5, H - 0.5
    M = np.zeros((n, n))
    diag = _diagonal(H, n, qm)
    sub = _subdiagonal(H, n, qm)
    rows = np.arange(n)
    if n > 1:
        M[rows[1:], rows[:-1]] = sub

    # Increments fhat_{i,j} = Bhat[j+1,i] - Bhat[j,i] for j >= i+1 are smooth
    # double integrals over [i-1,i] x [j,j+1]; with d = j - i the factor
    # (tau - sigma)**a only depends on d and the node pair.
    leg = gauss_legendre(qm.outer)
    x, w = leg.nodes, leg.weights
    i_idx = np.arange(1, n + 1, dtype=float)
    P = w * (i_idx[:, None] - 1.0 + x) ** (0.5 - H)
    Q = w * (i_idx[:, None] + x) ** b
    jac = gauss_jacobi(qm.outer, 0.5 - H)
    xj, wj = jac.nodes, jac.weights
    for d in range(1, n - 1):
        D = (d + 1.0 + x[None, :] - x[:, None]) ** a  # [a_sigma, b_tau]
        # columns i = 2..n-d-1 (0-based 1..n-d-2), placed at row j+1 = i+d+1
        cnt = n - d - 2
        if cnt > 0:
            vals = c * ((Q[d + 1 : d + 1 + cnt] @ D.T) * P[1 : 1 + cnt]).sum(axis=1)
            M[rows[1 : 1 + cnt] + d + 1, rows[1 : 1 + cnt]] = vals
        # column i = 1 (sigma in [0,1]) uses the Jacobi rule for sigma**(1/2-H)
        tau = d + 1.0 + x
        D1 = (tau[None, :] - xj[:, None]) ** a
        M[d + 1, 0] = c * (wj @ D1 @ (w * tau**b))
    for k in range(2, n):
        M[k, : k - 1] += M[k - 1, : k - 1]
    M[rows, rows] = diag
    return M


_BASE_MEMO: dict = {}


def _base_cached(H, n, qm):
    key = (float(H), int(n), qm)
    hit = _BASE_MEMO.get(key)
    if hit is None:
        _BASE_MEMO.clear()
        hit = _base_table(H, n, qm)
        hit.setflags(write=False)
        _BASE_MEMO[key] = hit
    return hit


def build_table(
    m: int,
    alpha: float,
    H: float,
    lam: float,
    quad_meta: QuadMeta | None = None,
    *,
    n: int | None = None,
    max_n: int = DEFAULT_MAX_N,
) -> CoefficientTable:
    """Build the scaled coefficient table for ``n = round(m**alpha)`` samples.

    ``n`` may be passed explicitly to override the rounding rule.
    """
    qm = quad_meta or QuadMeta()
    KernelParams(H)
    if int(m) != m or m < 2:
        raise InvalidArgumentError(f"m must be an integer >= 2, got {m}")
    if alpha < 1:
        raise InvalidArgumentError(f"alpha must be >= 1, got {alpha}")
    if not lam > 0:
        raise InvalidArgumentError(f"lambda must be positive, got {lam}")
    n = sample_count(m, alpha) if n is None else int(n)
    if n < 1:
        raise InvalidArgumentError("sample count must be positive")
    if n > max_n:
        raise ResourceLimitError(
            f"n = {n} exceeds the dense-table cap of {max_n} "
            f"({n * (n + 1) // 2} entries); reduce m or alpha, or raise the cap "
            "and stream from a coefficient cache"
        )
    base = _base_cached(H, n, qm)
    scale = float(m) ** (0.5 - H) / math.sqrt(lam)
    b = base * scale
    b.setflags(write=False)
    return CoefficientTable(int(m), n, float(H), float(lam), b, qm)


def reference_entries(k, i, H: float, tol: float = 1e-13) -> np.ndarray:
    """Grid-free entries ``Bhat[k, i]`` by adaptive quadrature of the hypergeometric kernel.

    ``k`` and ``i`` are equal-length integer arrays (1-based).  Entries are
    grouped by where the outer integrand is singular and each group is
    integrated in one batched adaptive pass.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    i = np.atleast_1d(np.asarray(i, dtype=float))
    out = np.empty(k.shape)

    def batch(mask, end, a=0.0, b=1.0):
        kk, ii = k[mask][:, None], i[mask][:, None]
        if end == "right":
            # offsets w = i - sigma; kernel gap is k - i + w exactly
            f = lambda w: kernel_reference(kk, ii - w, H, gap=kk - ii + w)  # noqa: E731
            return np.atleast_1d(adaptive_singular(f, 1.0 - b, 1.0 - a, end, tol, offset=True))
        f = lambda x: kernel_reference(kk, ii - 1.0 + x, H)  # noqa: E731
        return np.atleast_1d(adaptive_singular(f, a, b, end, tol))

    first = i == 1
    groups = [
        (first & (k == 1), None),
        (first & (k > 1), "left"),
        (~first & (k == i), "right"),
        (~first & (k > i), "none"),
    ]
    for mask, end in groups:
        if not mask.any():
            continue
        if end is None:
            out[mask] = batch(mask, "left", 0.0, 0.5) + batch(mask, "right", 0.5, 1.0)
        else:
            out[mask] = batch(mask, end)
    return out


# --------------------------------------------------------------------------
# binary cache

MAGIC = b"FPOU"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQddII")


def _payload_digest(b: np.ndarray) -> int:
    h = hashlib.blake2b(digest_size=8)
    for k in range(b.shape[0]):
        h.update(np.ascontiguousarray(b[k, : k + 1], dtype="<f8").tobytes())
    return int.from_bytes(h.digest(), "little")


def cache_write(table: CoefficientTable, path) -> str:
    """Write ``table`` in the FPOU binary format; returns the payload checksum (hex)."""
    path = Path(path)
    b = table.b_scaled
    h = hashlib.blake2b(digest_size=8)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as fh:
        fh.write(
            _HEADER.pack(
                MAGIC, FORMAT_VERSION, table.m, table.n, table.H, table.lam,
                table.quad_meta.inner, table.quad_meta.outer,
            )
        )
        for k in range(table.n):
            row = np.ascontiguousarray(b[k, : k + 1], dtype="<f8").tobytes()
            h.update(row)
            fh.write(row)
        digest = int.from_bytes(h.digest(), "little")
        fh.write(struct.pack("<Q", digest))
    os.replace(tmp, path)
    return f"{digest:016x}"


def cache_read(path, *, m=None, n=None, H=None, lam=None, quad_meta: QuadMeta | None = None) -> CoefficientTable:
    """Read an FPOU cache file, validating the header against any given fields."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError("truncated header", field="header")
        magic, version, fm, fn, fH, flam, fin, fout = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}", field="magic")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}", field="version")
        expected = {"m": m, "n": n, "H": H, "lambda": lam}
        found = {"m": fm, "n": fn, "H": fH, "lambda": flam}
        if quad_meta is not None:
            expected.update(inner=quad_meta.inner, outer=quad_meta.outer)
            found.update(inner=fin, outer=fout)
        for name, want in expected.items():
            if want is not None and found[name] != want:
                raise FormatError(f"header field {name} is {found[name]!r}, expected {want!r}", field=name)
        if fn > DEFAULT_MAX_N:
            raise FormatError(f"n = {fn} exceeds the dense-table cap", field="n")
        b = np.zeros((fn, fn))
        h = hashlib.blake2b(digest_size=8)
        for k in range(fn):
            raw = fh.read(8 * (k + 1))
            if len(raw) != 8 * (k + 1):
                raise FormatError("truncated payload", field="payload")
            h.update(raw)
            b[k, : k + 1] = np.frombuffer(raw, dtype="<f8")
        tail = fh.read(8)
        if len(tail) != 8:
            raise FormatError("missing checksum", field="checksum")
        if struct.unpack("<Q", tail)[0] != int.from_bytes(h.digest(), "little"):
            raise FormatError("checksum mismatch", field="checksum")
        if fh.read(1):
            raise FormatError("trailing bytes after checksum", field="payload")
    b.setflags(write=False)
    return CoefficientTable(int(fm), int(fn), fH, flam, b, QuadMeta(fin, fout))


def cache_path(cache_dir, m, n, H, lam, qm: QuadMeta) -> Path:
    name = f"fpou_m{m}_n{n}_H{H!r}_lam{lam!r}_q{qm.inner}x{qm.outer}.bin"
    return Path(cache_dir) / name


def load_or_build(m, alpha, H, lam, quad_meta=None, *, cache_dir=None, n=None, max_n=DEFAULT_MAX_N):
    """Return ``(table, checksum, reused)``, consulting ``cache_dir`` when given."""
    qm = quad_meta or QuadMeta()
    nn = sample_count(m, alpha) if n is None else int(n)
    if cache_dir is not None:
        p = cache_path(cache_dir, m, nn, H, lam, qm)
        if p.exists():
            try:
                table = cache_read(p, m=m, n=nn, H=H, lam=lam, quad_meta=qm)
                return table, table.checksum(), True
            except FormatError as exc:
                logger.warning("ignoring unusable cache %s: %s", p, exc)
    table = build_table(m, alpha, H, lam, qm, n=nn, max_n=max_n)
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        checksum = cache_write(table, cache_path(cache_dir, m, nn, H, lam, qm))
    else:
        checksum = table.checksum()
    return table, checksum, False
