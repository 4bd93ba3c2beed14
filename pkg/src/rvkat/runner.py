"""Batch scan driver: per-gene x per-trait x per-method association tests.

The scan loads and QCs the cohort once, fits one null model per trait (on the
trait's listwise-complete sample set), slices genes, evaluates every method
and emits one row per (gene, trait, method) in gene-major order.  Genes with
no testable variants appear with the literal ``NA`` untestable marker rather
than a fake p-value, so minimum-p summaries stay honest.  Identical config,
seed and inputs produce byte-identical output files.
"""

import os
from dataclasses import replace

import numpy as np

from . import cohort as cio
from . import omics as oio
from .exceptions import ConfigError, IngestError
from .methods import evaluate_method
from .nullmodel import fit_null_lmm, fit_null_ols
from .scoretest import TestResult, seed_from_names

RESULT_COLUMNS = (
    "gene",
    "trait",
    "method",
    "q_stat",
    "p_value",
    "p_adj",
    "pvalue_method",
    "eigencount",
    "rho_opt",
    "n_variants",
)

NA = "NA"


def _fmt(value):
    if value is None:
        return NA
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def write_results_tsv(results, path):
    lines = ["\t".join(RESULT_COLUMNS)]
    for r in results:
        lines.append(
            "\t".join(
                [
                    r.gene,
                    r.trait,
                    r.method,
                    _fmt(r.q_stat),
                    _fmt(r.p_value),
                    _fmt(r.p_adj),
                    r.pvalue_method if r.pvalue_method else NA,
                    str(r.eigencount),
                    _fmt(r.rho_opt),
                    str(r.n_variants),
                ]
            )
        )
    with open(path, "wt", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_results_tsv(path):
    """Results back from a scan TSV (inverse of write_results_tsv)."""
    if not os.path.exists(path):
        raise IngestError(f"results file not found: {path}")
    with open(path, "rt", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != RESULT_COLUMNS:
            raise IngestError(f"{path}: unexpected results header")
        out = []
        for lineno, raw in enumerate(fh, start=2):
            f = raw.rstrip("\n").split("\t")
            if len(f) != len(RESULT_COLUMNS):
                raise IngestError(f"{path}:{lineno}: column count mismatch")

            def opt_float(tok):
                return None if tok == NA else float(tok)

            out.append(
                TestResult(
                    gene=f[0],
                    trait=f[1],
                    method=f[2],
                    q_stat=opt_float(f[3]),
                    p_value=opt_float(f[4]),
                    p_adj=opt_float(f[5]),
                    pvalue_method=None if f[6] == NA else f[6],
                    eigencount=int(f[7]),
                    rho_opt=opt_float(f[8]),
                    n_variants=int(f[9]),
                )
            )
    return out


def bonferroni(results, family_size=None):
    """Append p_adj = min(1, family_size * p); default family is the number
    of distinct genes in the results (per-trait gene-scan family)."""
    if family_size is None:
        family_size = len({r.gene for r in results})
    if family_size < 1:
        raise ConfigError(f"family size must be >= 1, got {family_size}")
    out = []
    for r in results:
        p_adj = None if r.p_value is None else min(1.0, r.p_value * family_size)
        out.append(replace(r, p_adj=p_adj))
    return out


def summarize_minp(results):
    """Per (trait, method) minimum p-value, the gene attaining it, and a
    best-method flag per trait.  Ties are broken by input order."""
    if not results:
        raise ConfigError("cannot summarize an empty result set")
    traits = []
    methods = []
    for r in results:
        if r.trait not in traits:
            traits.append(r.trait)
        if r.method not in methods:
            methods.append(r.method)
    rows = []
    for trait in traits:
        per_method = []
        for method in methods:
            best_p = None
            best_gene = None
            for r in results:
                if r.trait != trait or r.method != method or r.p_value is None:
                    continue
                if best_p is None or r.p_value < best_p:
                    best_p = r.p_value
                    best_gene = r.gene
            per_method.append((trait, method, best_p, best_gene))
        testable = [row for row in per_method if row[2] is not None]
        winner = None
        if testable:
            winner = min(testable, key=lambda row: row[2])[1]
        for trait_, method, min_p, gene in per_method:
            rows.append(
                {
                    "trait": trait_,
                    "method": method,
                    "min_p": min_p,
                    "gene": gene,
                    "best": 1 if method == winner and min_p is not None else 0,
                }
            )
    return rows


def write_summary_tsv(rows, path):
    lines = ["trait\tmethod\tmin_p\tgene\tbest"]
    for row in rows:
        lines.append(
            "\t".join(
                [
                    row["trait"],
                    row["method"],
                    _fmt(row["min_p"]),
                    row["gene"] if row["gene"] is not None else NA,
                    str(row["best"]),
                ]
            )
        )
    with open(path, "wt", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def cohort_summary(phenotypes, genotypes, rare_maf=0.01):
    """Descriptive rows: sample size, per-column mean (SD) or level counts,
    and the variant spectrum."""
    rows = [("sample_size", str(len(phenotypes.samples)))]
    for name in phenotypes.columns:
        if phenotypes.is_numeric(name):
            arr = np.asarray(phenotypes.columns[name], dtype=np.float64)
            arr = arr[np.isfinite(arr)]
            if arr.size == 0:
                rows.append((f"{name}", "absent"))
                continue
            rows.append(
                (f"{name} mean (SD)", f"{arr.mean():.6g} ({arr.std(ddof=0):.6g})")
            )
        else:
            col = phenotypes.columns[name]
            levels = []
            for v in col:
                if v is not None and v not in levels:
                    levels.append(v)
            for lev in levels:
                rows.append((f"{name}={lev}", str(sum(1 for v in col if v == lev))))
    macs = genotypes.macs()
    mafs = genotypes.mafs()
    rows.append(("variants", str(genotypes.m)))
    rows.append(("singletons", str(int((macs == 1).sum()))))
    rows.append(("doubletons", str(int((macs == 2).sum()))))
    rows.append((f"maf_lt_{rare_maf:g}", str(int((mafs < rare_maf).sum()))))
    return rows


def write_cohort_summary_tsv(rows, path):
    lines = ["measure\tvalue"] + ["\t".join(r) for r in rows]
    with open(path, "wt", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _load_inputs(config):
    g = cio.load_genotypes(
        config.genotypes,
        fmt=config.genotype_format,
        variants_path=config.variants,
        split_multiallelic=config.split_multiallelic,
    )
    g = cio.apply_qc(g, config.max_missing)
    phenotypes = cio.load_phenotypes(config.phenotypes)
    regions = cio.load_gene_regions(config.regions)
    for trait in config.traits:
        if not phenotypes.has_column(trait):
            raise ConfigError(f"trait {trait!r} not found in phenotype file")
    for cov in config.covariates:
        if not phenotypes.has_column(cov):
            raise ConfigError(f"covariate {cov!r} not found in phenotype file")
    vocab = oio.load_vocabulary(config.vocabulary) if config.vocabulary else None
    annot = (
        oio.load_annotations(config.annotations, vocabulary=vocab)
        if config.annotations
        else None
    )
    omics = oio.load_omics_pvalues(config.omics) if config.omics else None
    expression = oio.load_expression(config.expression) if config.expression else None
    background = None
    if config.background:
        btab = cio.load_phenotypes(config.background)
        background = btab
    return g, phenotypes, regions, annot, omics, expression, background


def _eqtl_omics_for_gene(gene_slice, region, expression):
    """Cis-eQTL p-values of the gene's variants against its expression column,
    on the genotype/expression sample intersection."""
    if not expression.has_gene(region.gene):
        return oio.OmicsPValues()
    index = {s: i for i, s in enumerate(expression.samples)}
    shared = [s for s in gene_slice.samples if s in index]
    col = expression.column(region.gene)
    keep = [s for s in shared if np.isfinite(col[index[s]])]
    if len(keep) < 3:
        return oio.OmicsPValues()
    g2 = gene_slice.restrict_samples(keep)
    expr = np.array([col[index[s]] for s in keep])
    return oio.cis_eqtl_pvalues(g2, expr)


def _background_matrix(background, samples):
    index = {s: i for i, s in enumerate(background.samples)}
    missing = [s for s in samples if s not in index]
    if missing:
        raise IngestError(
            f"background matrix lacks samples: {missing[:5]}"
            + ("..." if len(missing) > 5 else "")
        )
    cols = []
    for name in background.columns:
        if not background.is_numeric(name):
            raise IngestError(f"background column {name!r} is not numeric")
        arr = np.asarray(background.columns[name], dtype=np.float64)
        cols.append(arr[[index[s] for s in samples]])
    return np.column_stack(cols)


def _scan_one_gene(args):
    (gene_slice, region, trait, fit, annot, omics_map, methods, seed) = args
    rows = []
    for spec in methods:
        rows.append(
            evaluate_method(
                fit,
                gene_slice,
                annot,
                omics_map,
                spec,
                gene=region.gene,
                trait=trait,
                seed=seed_from_names(seed, region.gene, trait, spec.name),
            )
        )
    return rows


def run_scan(config, log=None):
    """Full scan: returns results in gene-major, then trait, then method order
    and writes results.tsv plus summary.tsv under config.out."""

    def say(msg):
        if log is not None:
            log(msg)

    g, phenotypes, regions, annot, omics, expression, background = _load_inputs(config)
    say(f"loaded {g.n} samples x {g.m} variants after QC; {len(regions)} genes")

    # per-trait aligned cohorts and null fits
    fits = {}
    aligned = {}
    for trait in config.traits:
        cols = [trait] + list(config.covariates)
        g_t, p_t = cio.align_samples(g, phenotypes, columns=cols)
        y = p_t.trait_vector(trait)
        x, _ = p_t.covariate_matrix(config.covariates)
        if background is not None:
            z = _background_matrix(background, g_t.samples)
            fit = fit_null_lmm(y, x, z)
            say(
                f"trait {trait}: n={g_t.n}, REML background fit"
                f" (sigma2_z={fit.sigma2_z:.4g}, sigma2_eps={fit.sigma2_eps:.4g})"
            )
        else:
            fit = fit_null_ols(y, x)
            say(f"trait {trait}: n={g_t.n}, OLS fit (sigma2_eps={fit.sigma2_eps:.4g})")
        fits[trait] = fit
        aligned[trait] = g_t

    # evaluate gene-major
    tasks = []
    for region in regions:
        for trait in config.traits:
            g_t = aligned[trait]
            gene_slice = cio.slice_gene(g_t, region)
            if expression is not None:
                omics_map = _eqtl_omics_for_gene(gene_slice, region, expression)
            else:
                omics_map = omics
            tasks.append(
                (
                    gene_slice,
                    region,
                    trait,
                    fits[trait],
                    annot,
                    omics_map,
                    config.methods,
                    config.seed,
                )
            )

    if config.threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            nested = list(pool.map(_scan_one_gene, tasks, chunksize=4))
    else:
        nested = [_scan_one_gene(t) for t in tasks]

    results = [r for rows in nested for r in rows]
    results = bonferroni(results, config.family_size)

    os.makedirs(config.out, exist_ok=True)
    results_path = os.path.join(config.out, "results.tsv")
    write_results_tsv(results, results_path)
    summary_path = os.path.join(config.out, "summary.tsv")
    write_summary_tsv(summarize_minp(results), summary_path)
    say(f"wrote {results_path} and {summary_path} ({len(results)} rows)")
    return results
