"""Cohort ingestion: genotypes, phenotypes/covariates, and gene regions.

Genotype sources
----------------
dense-tsv
    Header row ``sample <variantID>...``, one row per sample, cells in
    {0,1,2,NA}.  Variant metadata comes from a sidecar TSV with header
    ``id chrom pos ref alt``.
vcf-lite
    Tab-separated VCF v4 subset: the 8 fixed columns, FORMAT, then sample
    columns.  Only the GT subfield is read; ``.`` denotes a missing allele.
    Multi-allelic records are rejected unless splitting is requested.

Dosages are folded to minor-allele coding at load time, so MAF <= 0.5 always
holds and a minor-allele count of 1 or 2 identifies singletons or doubletons.
Missing entries are carried as NaN; ``apply_qc`` drops columns at or above
the missingness threshold and mean-imputes the survivors, after which dosage
values may be fractional.

Phenotype/covariate tables are plain TSVs with a leading ``sample`` column.
Columns that fail float parsing are treated as categorical and are expanded
to indicator columns (against the first-seen level) when a design matrix is
requested.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import IngestError, NumericalError

MISSING_TOKEN = "NA"


@dataclass(frozen=True)
class VariantInfo:
    """Per-SNV record; annotation/omics_p are optional side-channel metadata."""

    vid: str
    chrom: str
    pos: int
    ref: str
    alt: str
    maf: float
    mac: int
    annotation: str | None = None
    omics_p: float | None = None

    def __post_init__(self):
        if self.pos < 1:
            raise IngestError(f"variant {self.vid}: position must be >= 1")
        if not 0.0 <= self.maf <= 0.5:
            raise IngestError(f"variant {self.vid}: MAF {self.maf} outside [0, 0.5]")

    @property
    def is_singleton(self):
        return self.mac == 1

    @property
    def is_doubleton(self):
        return self.mac == 2


def _fold_column(col):
    """Fold one dosage column to minor-allele coding.

    Returns (folded column, maf, mac).  Idempotent: a column with allele
    frequency <= 0.5 passes through unchanged.
    """
    obs = col[~np.isnan(col)]
    if obs.size == 0:
        return col, 0.0, 0
    af = float(obs.mean()) / 2.0
    if af > 0.5:
        col = 2.0 - col
        obs = 2.0 - obs
        af = 1.0 - af
    mac = int(round(float(obs.sum())))
    return col, af, mac


@dataclass
class GenotypeMatrix:
    """n x m dosage matrix with aligned sample IDs and variant metadata."""

    samples: list
    variants: list
    dosages: np.ndarray

    def __post_init__(self):
        self.dosages = np.asarray(self.dosages, dtype=np.float64)
        if self.dosages.ndim != 2:
            raise IngestError("dosage matrix must be 2-dimensional")
        n, m = self.dosages.shape
        if n != len(self.samples):
            raise IngestError("dosage rows do not match sample count")
        if m != len(self.variants):
            raise IngestError("dosage columns do not match variant count")
        if n < 1:
            raise IngestError("need at least one sample")
        if len(set(self.samples)) != n:
            raise IngestError("duplicate sample IDs in genotype matrix")

    @property
    def n(self):
        return self.dosages.shape[0]

    @property
    def m(self):
        return self.dosages.shape[1]

    def missingness(self):
        """Per-column fraction of missing calls."""
        if self.m == 0:
            return np.zeros(0)
        return np.isnan(self.dosages).mean(axis=0)

    def mafs(self):
        return np.array([v.maf for v in self.variants])

    def macs(self):
        return np.array([v.mac for v in self.variants], dtype=int)

    def positions(self):
        return np.array([v.pos for v in self.variants], dtype=np.int64)

    def variant_ids(self):
        return [v.vid for v in self.variants]

    def select_variants(self, idx):
        """New matrix restricted to the given column indices, order preserved."""
        idx = np.asarray(idx, dtype=int)
        return GenotypeMatrix(
            samples=list(self.samples),
            variants=[self.variants[i] for i in idx],
            dosages=self.dosages[:, idx].copy(),
        )

    def restrict_samples(self, sample_ids):
        """New matrix restricted to the given samples; refolds and recomputes
        per-variant statistics on the subset."""
        index = {s: i for i, s in enumerate(self.samples)}
        missing = [s for s in sample_ids if s not in index]
        if missing:
            raise IngestError(f"unknown sample IDs: {missing[:5]}")
        rows = np.array([index[s] for s in sample_ids], dtype=int)
        dos = self.dosages[rows, :].copy()
        variants = []
        for j, v in enumerate(self.variants):
            col, maf, mac = _fold_column(dos[:, j])
            dos[:, j] = col
            variants.append(replace(v, maf=maf, mac=mac))
        return GenotypeMatrix(samples=list(sample_ids), variants=variants, dosages=dos)


def _read_rows(path):
    with open(path, "rt", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            yield lineno, line.split("\t")


def _load_variant_sidecar(path):
    rows = _read_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise IngestError(f"{path}: empty variant metadata file") from None
    if header[:5] != ["id", "chrom", "pos", "ref", "alt"]:
        raise IngestError(f"{path}: expected header 'id chrom pos ref alt'")
    meta = {}
    order = []
    for lineno, fields in rows:
        if len(fields) < 5:
            raise IngestError(f"{path}:{lineno}: expected 5 columns")
        vid, chrom, pos, ref, alt = fields[:5]
        if vid in meta:
            raise IngestError(f"{path}:{lineno}: duplicate variant ID {vid!r}")
        try:
            meta[vid] = (chrom, int(pos), ref, alt)
        except ValueError:
            raise IngestError(f"{path}:{lineno}: bad position {pos!r}") from None
        order.append(vid)
    return meta


def _parse_dosage_token(tok, path, lineno):
    if tok == MISSING_TOKEN or tok == "":
        return np.nan
    if tok in ("0", "1", "2"):
        return float(tok)
    raise IngestError(f"{path}:{lineno}: bad dosage value {tok!r} (expected 0/1/2/NA)")


def _load_dense_tsv(path, variants_path):
    if variants_path is None:
        raise IngestError("dense-tsv genotypes need a variant metadata sidecar")
    meta = _load_variant_sidecar(variants_path)
    rows = _read_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise IngestError(f"{path}: empty genotype file") from None
    if header[0] != "sample":
        raise IngestError(f"{path}: first header column must be 'sample'")
    vids = header[1:]
    for vid in vids:
        if vid not in meta:
            raise IngestError(f"{path}: variant {vid!r} missing from metadata sidecar")
    samples = []
    seen = set()
    data = []
    for lineno, fields in rows:
        if len(fields) != len(vids) + 1:
            raise IngestError(
                f"{path}:{lineno}: expected {len(vids) + 1} columns, got {len(fields)}"
            )
        sid = fields[0]
        if sid in seen:
            raise IngestError(f"{path}:{lineno}: duplicate sample ID {sid!r}")
        seen.add(sid)
        samples.append(sid)
        data.append([_parse_dosage_token(t, path, lineno) for t in fields[1:]])
    if not samples:
        raise IngestError(f"{path}: no sample rows")
    dosages = np.array(data, dtype=np.float64)
    variants = []
    for j, vid in enumerate(vids):
        chrom, pos, ref, alt = meta[vid]
        col, maf, mac = _fold_column(dosages[:, j])
        dosages[:, j] = col
        variants.append(VariantInfo(vid, chrom, pos, ref, alt, maf, mac))
    return GenotypeMatrix(samples=samples, variants=variants, dosages=dosages)


def _gt_to_dosage(gt, alt_index):
    """Count copies of the chosen alt allele in a GT string like 0/1 or 1|1."""
    if gt in (".", "./.", ".|."):
        return np.nan
    alleles = gt.replace("|", "/").split("/")
    dose = 0.0
    for a in alleles:
        if a == ".":
            return np.nan
        if a == str(alt_index):
            dose += 1.0
        elif a != "0" and alt_index == 1:
            # biallelic record: only 0 and 1 are legal allele codes
            return None
        elif a != "0" and a != str(alt_index):
            # split multi-allelic record: other alt alleles become missing
            return np.nan
    return dose


def _load_vcf_lite(path, split_multiallelic):
    samples = None
    variants = []
    columns = []
    for lineno, fields in _read_rows(path):
        if fields[0].startswith("##"):
            continue
        if fields[0] == "#CHROM":
            if len(fields) < 10:
                raise IngestError(f"{path}:{lineno}: VCF header has no sample columns")
            samples = fields[9:]
            if len(set(samples)) != len(samples):
                raise IngestError(f"{path}:{lineno}: duplicate sample ID in VCF header")
            continue
        if samples is None:
            raise IngestError(f"{path}:{lineno}: record before #CHROM header")
        if len(fields) != 9 + len(samples):
            raise IngestError(
                f"{path}:{lineno}: expected {9 + len(samples)} columns, got {len(fields)}"
            )
        chrom, pos, vid, ref, alt, _qual, _filt, _info, fmt = fields[:9]
        try:
            pos = int(pos)
        except ValueError:
            raise IngestError(f"{path}:{lineno}: bad position {fields[1]!r}") from None
        fmt_keys = fmt.split(":")
        if "GT" not in fmt_keys:
            raise IngestError(f"{path}:{lineno}: FORMAT has no GT subfield")
        gt_idx = fmt_keys.index("GT")
        alts = alt.split(",")
        if len(alts) > 1 and not split_multiallelic:
            raise IngestError(
                f"{path}:{lineno}: multi-allelic record {vid or chrom + ':' + str(pos)!r}"
                " (splitting disabled)"
            )
        for k, alt_k in enumerate(alts, start=1):
            col = np.empty(len(samples))
            for i, cell in enumerate(fields[9:]):
                gt = cell.split(":")[gt_idx] if cell else "."
                dose = _gt_to_dosage(gt, k if len(alts) > 1 else 1)
                if dose is None:
                    raise IngestError(
                        f"{path}:{lineno}: unexpected allele code in GT {gt!r}"
                        " for a biallelic record"
                    )
                col[i] = dose
            base_id = vid if vid not in (".", "") else f"{chrom}:{pos}:{ref}:{alt_k}"
            use_id = base_id if len(alts) == 1 else f"{base_id}:{k}"
            columns.append((use_id, chrom, pos, ref, alt_k, col))
    if samples is None:
        raise IngestError(f"{path}: missing #CHROM header")
    dosages = (
        np.column_stack([c[5] for c in columns])
        if columns
        else np.zeros((len(samples), 0))
    )
    infos = []
    for j, (use_id, chrom, pos, ref, alt_k, _) in enumerate(columns):
        col, maf, mac = _fold_column(dosages[:, j])
        dosages[:, j] = col
        infos.append(VariantInfo(use_id, chrom, pos, ref, alt_k, maf, mac))
    return GenotypeMatrix(samples=samples, variants=infos, dosages=dosages)


def load_genotypes(path, fmt="dense-tsv", variants_path=None, split_multiallelic=False):
    """Load a genotype matrix, folding dosages to minor-allele coding."""
    if fmt == "dense-tsv":
        return _load_dense_tsv(path, variants_path)
    if fmt == "vcf-lite":
        return _load_vcf_lite(path, split_multiallelic)
    raise IngestError(f"unknown genotype format {fmt!r}")


def apply_qc(g, max_missing=0.05):
    """Keep columns with missingness strictly below the threshold, mean-impute
    the remaining missing calls, and recompute MAF/MAC on observed calls."""
    if not 0.0 <= max_missing < 1.0:
        raise NumericalError(f"max_missing must be in [0, 1), got {max_missing}")
    keep = np.where(g.missingness() < max_missing)[0]
    out = g.select_variants(keep)
    dos = out.dosages
    variants = []
    for j, v in enumerate(out.variants):
        col = dos[:, j]
        obsmask = ~np.isnan(col)
        col2, maf, mac = _fold_column(col)
        nan_left = ~np.isfinite(col2)
        if nan_left.any():
            col2 = col2.copy()
            col2[nan_left] = col2[obsmask].mean() if obsmask.any() else 0.0
        dos[:, j] = col2
        variants.append(replace(v, maf=maf, mac=mac))
    out.variants = variants
    return out


@dataclass(frozen=True)
class GeneRegion:
    gene: str
    chrom: str
    start: int
    end: int

    def __post_init__(self):
        if self.start < 1 or self.end < self.start:
            raise IngestError(
                f"gene {self.gene}: invalid interval [{self.start}, {self.end}]"
            )


def load_gene_regions(path):
    """Gene regions from a TSV with header ``gene chrom start end`` (1-based,
    inclusive)."""
    rows = _read_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise IngestError(f"{path}: empty gene region file") from None
    if header[:4] != ["gene", "chrom", "start", "end"]:
        raise IngestError(f"{path}: expected header 'gene chrom start end'")
    regions = []
    seen = set()
    for lineno, fields in rows:
        if len(fields) < 4:
            raise IngestError(f"{path}:{lineno}: expected 4 columns")
        gene, chrom, start, end = fields[:4]
        if gene in seen:
            raise IngestError(f"{path}:{lineno}: duplicate gene {gene!r}")
        seen.add(gene)
        try:
            regions.append(GeneRegion(gene, chrom, int(start), int(end)))
        except ValueError:
            raise IngestError(f"{path}:{lineno}: bad coordinates") from None
    return regions


def slice_gene(g, region):
    """Columns of g inside the region, order preserved; empty slices are legal."""
    chroms = {v.chrom for v in g.variants}
    if region.chrom not in chroms:
        raise IngestError(
            f"gene {region.gene}: chromosome {region.chrom!r} absent from genotypes"
        )
    idx = [
        j
        for j, v in enumerate(g.variants)
        if v.chrom == region.chrom and region.start <= v.pos <= region.end
    ]
    return g.select_variants(idx)


@dataclass
class PhenotypeTable:
    """Sample-indexed table of quantitative and categorical columns.

    Numeric columns are float arrays with NaN for missing; categorical
    columns are object arrays of strings with None for missing.
    """

    samples: list
    columns: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.samples)) != len(self.samples):
            raise IngestError("duplicate sample IDs in phenotype table")
        for name, col in self.columns.items():
            if len(col) != len(self.samples):
                raise IngestError(f"column {name!r} length does not match samples")

    def is_numeric(self, name):
        return np.issubdtype(np.asarray(self.columns[name]).dtype, np.floating)

    def has_column(self, name):
        return name in self.columns

    def trait_vector(self, name):
        if name not in self.columns:
            raise IngestError(f"trait {name!r} not found in phenotype table")
        if not self.is_numeric(name):
            raise IngestError(
                f"trait {name!r} is categorical; only quantitative traits are supported"
            )
        return np.asarray(self.columns[name], dtype=np.float64)

    def covariate_matrix(self, names):
        """Design matrix [intercept | covariates], categoricals expanded to
        k-1 indicators against the first-seen level.  Returns (X, colnames)."""
        cols = [np.ones(len(self.samples))]
        labels = ["intercept"]
        for name in names:
            if name not in self.columns:
                raise IngestError(f"covariate {name!r} not found in phenotype table")
            col = self.columns[name]
            if self.is_numeric(name):
                arr = np.asarray(col, dtype=np.float64)
                if np.isnan(arr).any():
                    raise IngestError(
                        f"covariate {name!r} still has missing values; align first"
                    )
                cols.append(arr)
                labels.append(name)
            else:
                levels = []
                for v in col:
                    if v is None:
                        raise IngestError(
                            f"covariate {name!r} still has missing values; align first"
                        )
                    if v not in levels:
                        levels.append(v)
                for lev in levels[1:]:
                    cols.append(np.array([1.0 if v == lev else 0.0 for v in col]))
                    labels.append(f"{name}[{lev}]")
        return np.column_stack(cols), labels

    def is_missing(self, name):
        col = self.columns[name]
        if self.is_numeric(name):
            return np.isnan(np.asarray(col, dtype=np.float64))
        return np.array([v is None for v in col])

    def subset(self, indices):
        indices = list(indices)
        cols = {}
        for name, col in self.columns.items():
            if self.is_numeric(name):
                cols[name] = np.asarray(col, dtype=np.float64)[indices]
            else:
                cols[name] = np.asarray(col, dtype=object)[indices]
        return PhenotypeTable(
            samples=[self.samples[i] for i in indices], columns=cols
        )


def load_phenotypes(path):
    """Phenotype/covariate TSV: first column ``sample``, NA for missing."""
    rows = _read_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise IngestError(f"{path}: empty phenotype file") from None
    if header[0] != "sample":
        raise IngestError(f"{path}: first header column must be 'sample'")
    names = header[1:]
    samples = []
    raw = {name: [] for name in names}
    for lineno, fields in rows:
        if len(fields) != len(names) + 1:
            raise IngestError(
                f"{path}:{lineno}: expected {len(names) + 1} columns, got {len(fields)}"
            )
        samples.append(fields[0])
        for name, tok in zip(names, fields[1:]):
            raw[name].append(tok)
    columns = {}
    for name in names:
        toks = raw[name]
        try:
            arr = np.array(
                [np.nan if t == MISSING_TOKEN or t == "" else float(t) for t in toks]
            )
            columns[name] = arr
        except ValueError:
            columns[name] = np.array(
                [None if t == MISSING_TOKEN or t == "" else t for t in toks],
                dtype=object,
            )
    return PhenotypeTable(samples=samples, columns=columns)


def align_samples(g, p, columns=None):
    """Restrict genotypes and phenotypes to their common samples.

    The canonical order is the genotype-file order restricted to the
    intersection.  Rows with missing values in any of the analyzed phenotype
    ``columns`` (default: all columns) are dropped listwise.
    """
    pheno_index = {s: i for i, s in enumerate(p.samples)}
    shared = [s for s in g.samples if s in pheno_index]
    if not shared:
        raise IngestError("no samples shared between genotypes and phenotypes")
    use_cols = list(columns) if columns is not None else list(p.columns)
    for name in use_cols:
        if name not in p.columns:
            raise IngestError(f"column {name!r} not found in phenotype table")
    kept = []
    for s in shared:
        i = pheno_index[s]
        if all(not p.is_missing(name)[i] for name in use_cols):
            kept.append(s)
    if not kept:
        raise IngestError(
            "sample intersection is empty after dropping rows with missing values"
        )
    g2 = g.restrict_samples(kept)
    p2 = p.subset([pheno_index[s] for s in kept])
    return g2, p2
