"""Kernel construction for gene-level association tests.

Every kernel here is a finite-dimensional instance of the family

    K = G V W W^T V^T G^T

with G the n x m dosage matrix, W = diag(sqrt(w_1), ..., sqrt(w_m)) a
per-SNV weight matrix and V an m x m SNV-similarity matrix with unit
diagonal.  K is always formed from the half product A = G V W as K = A A^T,
which keeps it symmetric positive semidefinite under floating-point error;
downstream eigenvalue code relies on that.

Weight builders (combinable as sums of products):

    identity                 w_j = 1
    beta_maf                 w_j = Beta density at MAF_j, default shape (1, 25)
    annot_indicator          w_j = 1 if SNV j is annotated
    annot_code               w_j = numeric annotation code (0..3 by default)
    omics_neglog             w_j = -log10 omics p (0 without evidence)
    omics_indicator_plus1    w_j = 1 + 1[omics p < alpha]

Similarity builders (combined by elementwise product, diagonal forced to 1):

    identity                 V = I
    genomic_proximity        V_ij = 1 / d_ij, base-pair distance
    both_annotated           V_ij = 1 if both SNVs are annotated
    same_annotation          V_ij = 1 if both annotated with the same category
    both_significant         V_ij = 1 if both omics p < alpha

The named composite weight recipes and the three preset kernels used in
reports are spelled out in PRESETS / W_ALIASES so that every "or" choice in
the builder family is pinned explicitly rather than guessed downstream.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import beta as beta_dist

from .exceptions import ConfigError, NumericalError

W_ATOMS = (
    "identity",
    "beta_maf",
    "annot_indicator",
    "annot_code",
    "omics_neglog",
    "omics_indicator_plus1",
)

# named composite recipes; each pins one concrete choice of the generic
# product/sum combinations
W_ALIASES = {
    "product_beta_omics": "beta_maf*omics_indicator_plus1",
    "sum_annot_omics": "annot_code+omics_neglog",
    "sum_annot_productterm": "annot_code+beta_maf*omics_indicator_plus1",
}

V_ATOMS = (
    "identity",
    "genomic_proximity",
    "both_annotated",
    "same_annotation",
    "both_significant",
)


def parse_w_expression(expr):
    """Sum-of-products weight recipe, e.g. 'annot_code+beta_maf*omics_neglog'."""
    expr = expr.strip()
    if expr in W_ALIASES:
        expr = W_ALIASES[expr]
    terms = []
    for term in expr.split("+"):
        atoms = tuple(a.strip() for a in term.split("*"))
        if not atoms or any(not a for a in atoms):
            raise ConfigError(f"malformed weight expression {expr!r}")
        for a in atoms:
            if a not in W_ATOMS:
                raise ConfigError(f"unknown weight builder {a!r}")
        terms.append(atoms)
    if not terms:
        raise ConfigError("weight expression selects no builders")
    return tuple(terms)


def parse_v_expression(expr):
    """Product similarity recipe, e.g. 'genomic_proximity*both_significant'."""
    factors = tuple(a.strip() for a in expr.strip().split("*"))
    if not factors or any(not a for a in factors):
        raise ConfigError(f"malformed similarity expression {expr!r}")
    for a in factors:
        if a not in V_ATOMS:
            raise ConfigError(f"unknown similarity builder {a!r}")
    return factors


@dataclass(frozen=True)
class KernelSpec:
    """Declarative recipe for one kernel: weight terms, similarity factors,
    and the shared tuning constants."""

    name: str
    w_terms: tuple = (("identity",),)
    v_factors: tuple = ("identity",)
    alpha: float = 0.05
    beta_params: tuple = (1.0, 25.0)
    center: bool = False
    trace_normalize: bool = False
    proximity_colocated_one: bool = False

    def __post_init__(self):
        if not self.w_terms or not self.v_factors:
            raise ConfigError("kernel spec needs at least one W and one V builder")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.beta_params[0] <= 0 or self.beta_params[1] <= 0:
            raise ConfigError("beta weight parameters must be positive")

    @classmethod
    def from_strings(cls, name, w="identity", v="identity", **kwargs):
        return cls(
            name=name,
            w_terms=parse_w_expression(w),
            v_factors=parse_v_expression(v),
            **kwargs,
        )

    def w_expression(self):
        return "+".join("*".join(t) for t in self.w_terms)

    def v_expression(self):
        return "*".join(self.v_factors)


# Preset kernels as reported: 1 = identity V with MAF x omics weights,
# 2 = proximity x omics V with omics weights, 3 = annotation x omics V with
# annotation + MAF x omics weights.
PRESETS = {
    "new-kernel-1": ("beta_maf*omics_indicator_plus1", "identity"),
    "new-kernel-2": ("omics_neglog", "genomic_proximity*both_significant"),
    "new-kernel-3": (
        "annot_code+beta_maf*omics_indicator_plus1",
        "same_annotation*both_significant",
    ),
}


def preset_spec(name, alpha=0.05, beta_params=(1.0, 25.0)):
    if name not in PRESETS:
        raise ConfigError(f"unknown kernel preset {name!r}")
    w, v = PRESETS[name]
    return KernelSpec.from_strings(name, w=w, v=v, alpha=alpha, beta_params=beta_params)


@dataclass
class WeightMatrix:
    """Diagonal of the m x m weight matrix, stored as w_j and sqrt(w_j)."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise NumericalError("weights must be finite and non-negative")

    @property
    def sqrt(self):
        return np.sqrt(self.weights)

    @property
    def m(self):
        return self.weights.size


@dataclass
class SimilarityMatrix:
    """Dense m x m SNV similarity with unit diagonal."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        m = self.values.shape[0]
        if self.values.shape != (m, m):
            raise NumericalError("similarity matrix must be square")
        if m and not np.allclose(np.diag(self.values), 1.0):
            raise NumericalError("similarity matrix must have unit diagonal")

    @property
    def m(self):
        return self.values.shape[0]


@dataclass
class KernelMatrix:
    """n x n kernel with its half factor A (K = A A^T) and provenance."""

    values: np.ndarray
    half: np.ndarray | None = None
    spec: KernelSpec | None = None
    gene: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = self.values.shape[0]
        if self.values.shape != (n, n):
            raise NumericalError("kernel matrix must be square")

    @property
    def n(self):
        return self.values.shape[0]

    def is_zero(self):
        return self.values.size == 0 or float(np.abs(self.values).max()) == 0.0

    def check_symmetric(self, rtol=1e-10):
        if self.values.size == 0:
            return True
        scale = max(float(np.abs(self.values).max()), 1.0)
        return float(np.abs(self.values - self.values.T).max()) <= rtol * scale

    def min_max_eigenvalues(self):
        if self.values.size == 0:
            return 0.0, 0.0
        w = np.linalg.eigvalsh((self.values + self.values.T) / 2.0)
        return float(w[0]), float(w[-1])

    def check_psd(self, tol=1e-8):
        lo, hi = self.min_max_eigenvalues()
        return lo >= -tol * max(1.0, hi)


def _require(table, what, builder):
    if table is None:
        raise ConfigError(f"weight/similarity builder {builder!r} needs {what} data")
    return table


def _w_atom(atom, g, annot, omics, spec):
    vids = g.variant_ids()
    if atom == "identity":
        return np.ones(g.m)
    if atom == "beta_maf":
        a, b = spec.beta_params
        return beta_dist.pdf(g.mafs(), a, b)
    if atom == "annot_indicator":
        annot = _require(annot, "annotation", atom)
        return np.array([1.0 if annot.is_annotated(v) else 0.0 for v in vids])
    if atom == "annot_code":
        annot = _require(annot, "annotation", atom)
        return np.array([annot.code(v) for v in vids])
    if atom == "omics_neglog":
        omics = _require(omics, "omics", atom)
        return np.array([omics.neglog10(v) for v in vids])
    if atom == "omics_indicator_plus1":
        omics = _require(omics, "omics", atom)
        return np.array(
            [2.0 if omics.significant(v, spec.alpha) else 1.0 for v in vids]
        )
    raise ConfigError(f"unknown weight builder {atom!r}")


def build_w(g, annot, omics, spec):
    """Per-SNV weights for the selected recipe; sum over terms, product within."""
    if g.m < 1:
        raise NumericalError("weight builder needs at least one variant")
    total = np.zeros(g.m)
    for term in spec.w_terms:
        prod = np.ones(g.m)
        for atom in term:
            prod = prod * _w_atom(atom, g, annot, omics, spec)
        total = total + prod
    return WeightMatrix(weights=total)


def _v_atom(atom, variants, annot, omics, spec):
    m = len(variants)
    vids = [v.vid for v in variants]
    if atom == "identity":
        return np.eye(m)
    if atom == "genomic_proximity":
        chroms = {v.chrom for v in variants}
        if len(chroms) > 1:
            raise NumericalError(
                "genomic proximity is undefined across chromosomes: " f"{sorted(chroms)}"
            )
        pos = np.array([v.pos for v in variants], dtype=np.float64)
        dist = np.abs(pos[:, None] - pos[None, :])
        off = ~np.eye(m, dtype=bool)
        if np.any(dist[off] == 0.0):
            if not spec.proximity_colocated_one:
                raise NumericalError(
                    "co-located SNVs have zero distance; enable"
                    " proximity_colocated_one to map them to similarity 1"
                )
            dist[off & (dist == 0.0)] = 1.0
        v = np.ones((m, m))
        v[off] = 1.0 / dist[off]
        return v
    if atom == "both_annotated":
        annot = _require(annot, "annotation", atom)
        ind = np.array([annot.is_annotated(v) for v in vids])
        v = np.outer(ind, ind).astype(np.float64)
        np.fill_diagonal(v, 1.0)
        return v
    if atom == "same_annotation":
        annot = _require(annot, "annotation", atom)
        cats = [annot.category(v) for v in vids]
        ind = np.array([annot.is_annotated(v) for v in vids])
        same = np.array([[a == b for b in cats] for a in cats])
        v = (same & np.outer(ind, ind)).astype(np.float64)
        np.fill_diagonal(v, 1.0)
        return v
    if atom == "both_significant":
        omics = _require(omics, "omics", atom)
        sig = np.array([omics.significant(v, spec.alpha) for v in vids])
        v = np.outer(sig, sig).astype(np.float64)
        np.fill_diagonal(v, 1.0)
        return v
    raise ConfigError(f"unknown similarity builder {atom!r}")


def build_v(variants, annot, omics, spec):
    """SNV similarity matrix: elementwise product of the selected builders,
    diagonal forced to 1."""
    if len(variants) < 1:
        raise NumericalError("similarity builder needs at least one variant")
    v = np.ones((len(variants), len(variants)))
    for atom in spec.v_factors:
        v = v * _v_atom(atom, variants, annot, omics, spec)
    np.fill_diagonal(v, 1.0)
    return SimilarityMatrix(values=v)


def _finalize(values, half, spec, gene):
    if spec is not None and spec.center and values.shape[0] > 0:
        n = values.shape[0]
        half = half - half.mean(axis=0, keepdims=True)
        values = half @ half.T
    if spec is not None and spec.trace_normalize and values.shape[0] > 0:
        tr = float(np.trace(values))
        if tr > 0:
            scale = values.shape[0] / tr
            values = values * scale
            half = half * np.sqrt(scale)
    return KernelMatrix(values=values, half=half, spec=spec, gene=gene)


def build_kernel(g, w, v, spec=None, gene=""):
    """K = (G V W)(G V W)^T from the half product; PSD by construction."""
    if w.m != g.m or v.m != g.m:
        raise NumericalError(
            f"dimension mismatch: G has {g.m} variants, W {w.m}, V {v.m}"
        )
    if g.m == 0:
        return KernelMatrix(
            values=np.zeros((g.n, g.n)), half=np.zeros((g.n, 0)), spec=spec, gene=gene
        )
    if np.isnan(g.dosages).any():
        raise NumericalError("kernel builder needs imputed dosages; run apply_qc first")
    half = (g.dosages @ v.values) * w.sqrt[None, :]
    return _finalize(half @ half.T, half, spec, gene)


def baseline_kernels(g, w, gene=""):
    """Weighted linear kernel G W W^T G^T and the collapsing/burden kernel
    (G W 1)(G W 1)^T; the two components the optimal unified test mixes."""
    if w.m != g.m:
        raise NumericalError("weight dimension does not match variant count")
    if g.m < 1:
        raise NumericalError("baseline kernels need at least one variant")
    if np.isnan(g.dosages).any():
        raise NumericalError("kernel builder needs imputed dosages; run apply_qc first")
    half = g.dosages * w.sqrt[None, :]
    linear = KernelMatrix(values=half @ half.T, half=half, gene=gene)
    burden_vec = half.sum(axis=1, keepdims=True)
    burden = KernelMatrix(values=burden_vec @ burden_vec.T, half=burden_vec, gene=gene)
    return linear, burden
