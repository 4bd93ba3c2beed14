"""Functional annotations and omics evidence for SNV weighting.

Annotations map variant IDs to categories from a declared vocabulary; each
category carries a non-negative numeric code used by the annotation-based
weight builders.  The default vocabulary follows the usual damaging-ness
scale:

    unannotated 0, benign 1, possibly_damaging 2, probably_damaging 3.

Omics evidence is a map from variant ID to an association p-value in (0, 1].
Absent variants mean "no omics evidence", which is deliberately distinct from
p = 1: indicator-style builders treat absent entries as failing the
significance cutoff, and -log10 builders give them weight 0.

When no precomputed p-values are available they can be derived from an
expression table as cis-eQTL p-values: per SNV, the two-sided t-test on the
slope of the simple linear regression of expression on dosage.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import t as t_dist

from .cohort import _read_rows
from .exceptions import IngestError, NumericalError

UNANNOTATED = "unannotated"

DEFAULT_VOCABULARY = {
    UNANNOTATED: 0.0,
    "benign": 1.0,
    "possibly_damaging": 2.0,
    "probably_damaging": 3.0,
}

PVALUE_FLOOR = 1e-300  # keeps -log10(p) finite


@dataclass
class AnnotationTable:
    """Variant ID -> category, with a category -> code vocabulary."""

    categories: dict = field(default_factory=dict)
    vocabulary: dict = field(default_factory=lambda: dict(DEFAULT_VOCABULARY))

    def __post_init__(self):
        if UNANNOTATED not in self.vocabulary or self.vocabulary[UNANNOTATED] != 0.0:
            raise IngestError("vocabulary must map 'unannotated' to code 0")
        for cat, code in self.vocabulary.items():
            if code < 0:
                raise IngestError(f"category {cat!r} has negative code {code}")
        for vid, cat in self.categories.items():
            if cat not in self.vocabulary:
                raise IngestError(f"variant {vid}: unknown category {cat!r}")

    def category(self, vid):
        return self.categories.get(vid, UNANNOTATED)

    def code(self, vid):
        return self.vocabulary[self.category(vid)]

    def is_annotated(self, vid):
        return self.category(vid) != UNANNOTATED


def load_vocabulary(path):
    """Category -> code override table (TSV with header ``category code``)."""
    rows = _read_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise IngestError(f"{path}: empty vocabulary file") from None
    if header[:2] != ["category", "code"]:
        raise IngestError(f"{path}: expected header 'category code'")
    vocab = {}
    for lineno, fields in rows:
        if len(fields) < 2:
            raise IngestError(f"{path}:{lineno}: expected 2 columns")
        try:
            vocab[fields[0]] = float(fields[1])
        except ValueError:
            raise IngestError(f"{path}:{lineno}: bad code {fields[1]!r}") from None
    vocab.setdefault(UNANNOTATED, 0.0)
    return vocab


def load_annotations(path, vocabulary=None):
    """Annotation TSV with header ``variant category``; unlisted variants
    default to unannotated."""
    vocab = dict(vocabulary) if vocabulary is not None else dict(DEFAULT_VOCABULARY)
    rows = _read_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise IngestError(f"{path}: empty annotation file") from None
    if header[:2] != ["variant", "category"]:
        raise IngestError(f"{path}: expected header 'variant category'")
    categories = {}
    for lineno, fields in rows:
        if len(fields) < 2:
            raise IngestError(f"{path}:{lineno}: expected 2 columns")
        vid, cat = fields[0], fields[1]
        if cat not in vocab:
            raise IngestError(f"{path}:{lineno}: unknown category {cat!r}")
        categories[vid] = cat
    return AnnotationTable(categories=categories, vocabulary=vocab)


@dataclass
class OmicsPValues:
    """Variant ID -> association p-value in (0, 1]; absence means no evidence."""

    pvalues: dict = field(default_factory=dict)

    def __post_init__(self):
        for vid, p in self.pvalues.items():
            if not 0.0 < p <= 1.0:
                raise IngestError(f"variant {vid}: p-value {p} outside (0, 1]")

    def get(self, vid):
        return self.pvalues.get(vid)

    def neglog10(self, vid):
        """-log10 p, or 0 for variants without omics evidence."""
        p = self.pvalues.get(vid)
        if p is None:
            return 0.0
        return -np.log10(max(p, PVALUE_FLOOR))

    def significant(self, vid, alpha):
        p = self.pvalues.get(vid)
        return p is not None and p < alpha


def load_omics_pvalues(path):
    """Precomputed omics p-values (TSV with header ``variant pvalue``)."""
    rows = _read_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise IngestError(f"{path}: empty omics file") from None
    if header[:2] != ["variant", "pvalue"]:
        raise IngestError(f"{path}: expected header 'variant pvalue'")
    pvalues = {}
    for lineno, fields in rows:
        if len(fields) < 2:
            raise IngestError(f"{path}:{lineno}: expected 2 columns")
        try:
            pvalues[fields[0]] = float(fields[1])
        except ValueError:
            raise IngestError(f"{path}:{lineno}: bad p-value {fields[1]!r}") from None
    return OmicsPValues(pvalues=pvalues)


@dataclass
class ExpressionTable:
    """Sample-aligned gene expression columns."""

    samples: list
    genes: dict = field(default_factory=dict)

    def __post_init__(self):
        for gene, col in self.genes.items():
            if len(col) != len(self.samples):
                raise IngestError(f"expression column {gene!r} length mismatch")

    def has_gene(self, gene):
        return gene in self.genes

    def column(self, gene):
        if gene not in self.genes:
            raise IngestError(f"gene {gene!r} not found in expression table")
        return np.asarray(self.genes[gene], dtype=np.float64)

    def subset(self, indices):
        indices = list(indices)
        return ExpressionTable(
            samples=[self.samples[i] for i in indices],
            genes={g: np.asarray(c, dtype=np.float64)[indices] for g, c in self.genes.items()},
        )


def load_expression(path):
    """Expression TSV: header ``sample gene1 gene2 ...``, NA for missing."""
    rows = _read_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise IngestError(f"{path}: empty expression file") from None
    if header[0] != "sample":
        raise IngestError(f"{path}: first header column must be 'sample'")
    genes = header[1:]
    samples = []
    cols = {g: [] for g in genes}
    for lineno, fields in rows:
        if len(fields) != len(genes) + 1:
            raise IngestError(f"{path}:{lineno}: column count mismatch")
        samples.append(fields[0])
        for g, tok in zip(genes, fields[1:]):
            try:
                cols[g].append(np.nan if tok in ("NA", "") else float(tok))
            except ValueError:
                raise IngestError(f"{path}:{lineno}: bad value {tok!r}") from None
    return ExpressionTable(
        samples=samples, genes={g: np.array(c) for g, c in cols.items()}
    )


def cis_eqtl_pvalues(g, expression):
    """Per-SNV two-sided p-values for the dosage slope against an expression
    column aligned with ``g.samples``.

    Monomorphic dosage columns (and columns with fewer than 3 complete pairs)
    get p = 1.  P-values are floored at 1e-300 so downstream -log10 weights
    stay finite.
    """
    expr = np.asarray(expression, dtype=np.float64).ravel()
    if expr.size != g.n:
        raise NumericalError("expression column length does not match samples")
    finite_expr = expr[np.isfinite(expr)]
    if finite_expr.size < 3:
        raise NumericalError("expression column needs at least 3 observations")
    if np.ptp(finite_expr) == 0.0:
        raise NumericalError("expression column has zero variance")

    pvalues = {}
    for j, v in enumerate(g.variants):
        dose = g.dosages[:, j]
        ok = np.isfinite(dose) & np.isfinite(expr)
        x = dose[ok]
        y = expr[ok]
        n = x.size
        if n < 3 or np.ptp(x) == 0.0:
            pvalues[v.vid] = 1.0
            continue
        xc = x - x.mean()
        yc = y - y.mean()
        sxx = float(xc @ xc)
        sxy = float(xc @ yc)
        syy = float(yc @ yc)
        df = n - 2
        rss = syy - sxy * sxy / sxx
        if rss <= 0.0:
            # perfect fit: the t statistic diverges, report the floor
            pvalues[v.vid] = PVALUE_FLOOR
            continue
        se = np.sqrt(rss / df / sxx)
        tstat = (sxy / sxx) / se
        p = 2.0 * float(t_dist.sf(abs(tstat), df))
        pvalues[v.vid] = min(max(p, PVALUE_FLOOR), 1.0)
    return OmicsPValues(pvalues=pvalues)
