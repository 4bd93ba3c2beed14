"""Synthetic cohorts with a controlled rare-variant spectrum.

Genotypes are generated by direct minor-allele-count placement: each variant
is assigned a class (singleton, doubleton, other rare, common) according to
the target spectrum, its minor-allele count is drawn within the class range,
and the carrier haplotypes are placed uniformly at random among the 2n
chromosomes.  This gives exact control over the spectrum, which is what the
calibration and power studies need; no linkage structure is simulated.

Variant columns are laid out class-major (all singletons first, then
doubletons, other rare, common) so that causal sets can target a class by
index.  Traits follow

    y = X alpha + G gamma + eps,    eps ~ N(0, sigma_eps^2),

with standard-normal covariates plus an intercept.  Annotation and omics
tables are generated with a configurable concordance: a causal variant
receives a damaging annotation / significant omics p-value with the given
probability, non-causal variants get background noise.  Under a null
scenario (no causal variants) annotations are random background and omics
p-values are uniform.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .cohort import GenotypeMatrix, PhenotypeTable, VariantInfo
from .exceptions import ConfigError, NumericalError
from .omics import UNANNOTATED, AnnotationTable, OmicsPValues

# §-free restatement of the observed ADNI-like spectrum used as default:
# 7575 singletons, 1740 doubletons, 12337 of 17013 with MAF < 0.01.
DEFAULT_SINGLETON = 7575 / 17013
DEFAULT_DOUBLETON = 1740 / 17013
DEFAULT_RARE = 12337 / 17013


@dataclass(frozen=True)
class SpectrumTarget:
    """Target proportions; ``rare`` is cumulative (MAF < rare_maf, including
    singletons and doubletons)."""

    singleton: float = DEFAULT_SINGLETON
    doubleton: float = DEFAULT_DOUBLETON
    rare: float = DEFAULT_RARE
    rare_maf: float = 0.01

    def __post_init__(self):
        if min(self.singleton, self.doubleton) < 0:
            raise ConfigError("spectrum proportions must be non-negative")
        if self.singleton + self.doubleton > self.rare + 1e-12:
            raise ConfigError("cumulative rare proportion below singleton+doubleton")
        if self.rare > 1.0 + 1e-12:
            raise ConfigError("spectrum proportions exceed 1")
        if not 0.0 < self.rare_maf <= 0.5:
            raise ConfigError("rare_maf must be in (0, 0.5]")

    def class_counts(self, m):
        n_single = int(round(m * self.singleton))
        n_double = int(round(m * self.doubleton))
        n_rare = int(round(m * self.rare))
        n_other = n_rare - n_single - n_double
        n_common = m - n_rare
        if n_other < 0 or n_common < 0:
            raise ConfigError("rounded spectrum counts are inconsistent")
        return n_single, n_double, n_other, n_common


@dataclass(frozen=True)
class SimScenario:
    n: int
    m: int
    spectrum: SpectrumTarget = field(default_factory=SpectrumTarget)
    causal: dict = field(default_factory=dict)  # variant index -> effect size
    sigma_eps: float = 1.0
    n_covariates: int = 2
    covariate_effect: float = 0.5
    annotation_concordance: float = 0.0
    omics_concordance: float = 0.0
    background_annotation_rate: float = 0.3
    alpha: float = 0.05
    n_genes: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.m < 0:
            raise ConfigError("scenario needs n >= 1 and m >= 0")
        if self.sigma_eps <= 0:
            raise ConfigError("sigma_eps must be positive")
        for idx, eff in self.causal.items():
            if not 0 <= idx < self.m:
                raise ConfigError(f"causal index {idx} outside [0, {self.m})")
        if self.n_genes < 1:
            raise ConfigError("n_genes must be >= 1")

    @property
    def is_null(self):
        return all(eff == 0.0 for eff in self.causal.values())


def _rng(scenario, stream):
    """Independent deterministic stream per scenario component."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=scenario.seed, spawn_key=(stream,))
    )


def simulate_genotypes(scenario):
    """Dosage matrix with the exact target spectrum; deterministic per seed."""
    n, m = scenario.n, scenario.m
    sp = scenario.spectrum
    n_single, n_double, n_other, n_common = sp.class_counts(m)
    rng = _rng(scenario, 0)

    # per-class minor-allele-count ranges; MAC <= n keeps MAF <= 0.5
    mac_rare_hi = int(np.ceil(2 * n * sp.rare_maf)) - 1
    mac_common_lo = mac_rare_hi + 1
    macs = []
    if n_single:
        if n < 1:
            raise ConfigError("singletons need at least one sample")
        macs += [1] * n_single
    if n_double:
        if n < 2:
            raise ConfigError(f"doubletons are infeasible with n={n}")
        macs += [2] * n_double
    if n_other:
        if mac_rare_hi < 3:
            raise ConfigError(
                f"no room for non-singleton rare variants with n={n} and"
                f" rare_maf={sp.rare_maf}"
            )
        macs += list(rng.integers(3, mac_rare_hi + 1, size=n_other))
    if n_common:
        if mac_common_lo > n:
            raise ConfigError(
                f"common variants are infeasible with n={n} and rare_maf={sp.rare_maf}"
            )
        mafs = rng.uniform(sp.rare_maf, 0.5, size=n_common)
        macs += list(np.clip(np.round(mafs * 2 * n).astype(int), mac_common_lo, n))

    dosages = np.zeros((n, m))
    positions = np.sort(rng.choice(np.arange(1, m * 200 + 1), size=m, replace=False))
    variants = []
    for j, mac in enumerate(macs):
        hap = rng.choice(2 * n, size=int(mac), replace=False)
        np.add.at(dosages, (hap // 2, np.full(hap.size, j)), 1.0)
        variants.append(
            VariantInfo(
                vid=f"v{j:06d}",
                chrom="1",
                pos=int(positions[j]),
                ref="A",
                alt="C",
                maf=mac / (2 * n),
                mac=int(mac),
            )
        )
    samples = [f"s{i:06d}" for i in range(n)]
    return GenotypeMatrix(samples=samples, variants=variants, dosages=dosages)


def simulate_trait(g, scenario, trait_name="trait"):
    """Phenotype table with one trait and the scenario's covariates."""
    for idx in scenario.causal:
        if idx >= g.m:
            raise ConfigError(f"causal index {idx} outside the genotype matrix")
    rng = _rng(scenario, 1)
    n = g.n
    covs = rng.standard_normal((n, scenario.n_covariates))
    y = np.full(n, 1.0)  # intercept effect
    y = y + covs.sum(axis=1) * scenario.covariate_effect
    for idx, eff in scenario.causal.items():
        y = y + g.dosages[:, idx] * eff
    y = y + rng.standard_normal(n) * scenario.sigma_eps
    columns = {trait_name: y}
    for k in range(scenario.n_covariates):
        columns[f"cov{k + 1}"] = covs[:, k]
    return PhenotypeTable(samples=list(g.samples), columns=columns)


def simulate_annotations(g, scenario):
    """Annotation table with causal-concordant damaging labels plus random
    background annotations."""
    rng = _rng(scenario, 2)
    categories = {}
    background = ["benign", "possibly_damaging", "probably_damaging"]
    for j, v in enumerate(g.variants):
        if j in scenario.causal and scenario.causal[j] != 0.0:
            if rng.uniform() < scenario.annotation_concordance:
                categories[v.vid] = "probably_damaging"
            continue
        if rng.uniform() < scenario.background_annotation_rate:
            categories[v.vid] = background[rng.integers(0, len(background))]
    return AnnotationTable(categories=categories)


def simulate_omics(g, scenario):
    """Omics p-values: concordant causal variants get clearly significant
    p-values, everything else is uniform noise."""
    rng = _rng(scenario, 3)
    pvalues = {}
    for j, v in enumerate(g.variants):
        if (
            j in scenario.causal
            and scenario.causal[j] != 0.0
            and rng.uniform() < scenario.omics_concordance
        ):
            pvalues[v.vid] = max(rng.uniform(0.0, scenario.alpha / 10.0), 1e-12)
        else:
            pvalues[v.vid] = min(max(rng.uniform(), 1e-12), 1.0)
    return OmicsPValues(pvalues=pvalues)


@dataclass
class SimCohort:
    genotypes: GenotypeMatrix
    phenotypes: PhenotypeTable
    annotations: AnnotationTable
    omics: OmicsPValues
    scenario: SimScenario


def simulate_cohort(scenario):
    g = simulate_genotypes(scenario)
    return SimCohort(
        genotypes=g,
        phenotypes=simulate_trait(g, scenario),
        annotations=simulate_annotations(g, scenario),
        omics=simulate_omics(g, scenario),
        scenario=scenario,
    )


def gene_regions_for(g, n_genes):
    """Split the simulated variants into contiguous equal-width gene regions."""
    from .cohort import GeneRegion

    if g.m == 0:
        return [GeneRegion("GENE1", "1", 1, 1)]
    pos = g.positions()
    edges = np.linspace(0, g.m, n_genes + 1).astype(int)
    regions = []
    for k in range(n_genes):
        lo, hi = edges[k], edges[k + 1]
        if lo >= hi:
            continue
        regions.append(
            GeneRegion(f"GENE{k + 1}", "1", int(pos[lo]), int(pos[hi - 1]))
        )
    return regions


def _child_scenario(scenario, replicate):
    child = np.random.SeedSequence(
        entropy=scenario.seed, spawn_key=(1000 + replicate,)
    ).generate_state(1)[0]
    return dataclasses.replace(scenario, seed=int(child))


def _evaluate_replicate(args):
    scenario, replicate, method_specs, master_seed = args
    # local import: methods pulls in the kernel/score stack
    from .methods import evaluate_method
    from .nullmodel import fit_null_ols

    rep_scenario = _child_scenario(scenario, replicate)
    cohort = simulate_cohort(rep_scenario)
    pheno = cohort.phenotypes
    y = pheno.trait_vector("trait")
    covs = [c for c in pheno.columns if c.startswith("cov")]
    x, _ = pheno.covariate_matrix(covs)
    fit = fit_null_ols(y, x)
    out = []
    for spec in method_specs:
        res = evaluate_method(
            fit,
            cohort.genotypes,
            cohort.annotations,
            cohort.omics,
            spec,
            gene="SIM",
            trait="trait",
            seed=seed_for_replicate(master_seed, replicate, spec.name),
        )
        out.append(res.p_value)
    return out


def seed_for_replicate(master_seed, replicate, method_name):
    import hashlib

    digest = hashlib.sha256(f"{master_seed}:{replicate}:{method_name}".encode()).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFFFFFF


@dataclass
class RejectionReport:
    method: str
    alpha: float
    replicates: int
    rejections: int
    untestable: int

    @property
    def rate(self):
        return self.rejections / self.replicates

    def confidence_interval(self, z=2.576):
        """Normal-approximation 99% binomial interval by default."""
        se = np.sqrt(max(self.rate * (1.0 - self.rate), 1e-12) / self.replicates)
        return max(self.rate - z * se, 0.0), min(self.rate + z * se, 1.0)


def _run_rejections(scenario, method_specs, replicates, alpha, threads=1):
    if replicates < 1:
        raise ConfigError("need at least one replicate")
    if not 0.0 < alpha <= 1.0:
        raise ConfigError("alpha must be in (0, 1]")
    tasks = [(scenario, r, method_specs, scenario.seed) for r in range(replicates)]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_evaluate_replicate, tasks, chunksize=32))
    else:
        rows = [_evaluate_replicate(t) for t in tasks]
    reports = []
    pvalue_lists = []
    for k, spec in enumerate(method_specs):
        ps = [row[k] for row in rows]
        tested = [p for p in ps if p is not None]
        rej = sum(1 for p in tested if p <= alpha)
        reports.append(
            RejectionReport(
                method=spec.name,
                alpha=alpha,
                replicates=len(tested),
                rejections=rej,
                untestable=len(ps) - len(tested),
            )
        )
        pvalue_lists.append(np.array(tested))
    return reports, pvalue_lists


def run_calibration(scenario, method_specs, replicates, alpha=0.05, threads=1):
    """Empirical type-I error per method under a null scenario.

    Returns (reports, pvalue arrays); raises on non-null scenarios so power
    runs cannot masquerade as calibration.
    """
    if not scenario.is_null:
        raise ConfigError("calibration requires a null scenario (no causal effects)")
    return _run_rejections(scenario, method_specs, replicates, alpha, threads)


def run_power(scenario, method_specs, replicates, alpha=0.05, threads=1):
    """Empirical power per method under an alternative scenario."""
    if scenario.is_null:
        raise ConfigError("power runs need at least one nonzero causal effect")
    return _run_rejections(scenario, method_specs, replicates, alpha, threads)


def write_cohort(cohort, outdir, prefix="cohort"):
    """Write a simulated cohort in the ingestion file formats.

    Produces ``<prefix>.geno.tsv`` (+ variant sidecar), ``<prefix>.pheno.tsv``,
    ``<prefix>.genes.tsv``, ``<prefix>.annot.tsv`` and ``<prefix>.omics.tsv``
    inside ``outdir``; returns the path map.
    """
    import os

    os.makedirs(outdir, exist_ok=True)
    g = cohort.genotypes
    paths = {
        "genotypes": os.path.join(outdir, f"{prefix}.geno.tsv"),
        "variants": os.path.join(outdir, f"{prefix}.variants.tsv"),
        "phenotypes": os.path.join(outdir, f"{prefix}.pheno.tsv"),
        "regions": os.path.join(outdir, f"{prefix}.genes.tsv"),
        "annotations": os.path.join(outdir, f"{prefix}.annot.tsv"),
        "omics": os.path.join(outdir, f"{prefix}.omics.tsv"),
    }

    def dose_token(v):
        if np.isnan(v):
            return "NA"
        return str(int(round(v)))

    with open(paths["genotypes"], "wt", encoding="utf-8") as fh:
        fh.write("sample\t" + "\t".join(g.variant_ids()) + "\n")
        for i, sid in enumerate(g.samples):
            fh.write(sid + "\t" + "\t".join(dose_token(v) for v in g.dosages[i]) + "\n")
    with open(paths["variants"], "wt", encoding="utf-8") as fh:
        fh.write("id\tchrom\tpos\tref\talt\n")
        for v in g.variants:
            fh.write(f"{v.vid}\t{v.chrom}\t{v.pos}\t{v.ref}\t{v.alt}\n")
    pheno = cohort.phenotypes
    names = list(pheno.columns)
    with open(paths["phenotypes"], "wt", encoding="utf-8") as fh:
        fh.write("sample\t" + "\t".join(names) + "\n")
        for i, sid in enumerate(pheno.samples):
            cells = [format(float(pheno.columns[name][i]), ".10g") for name in names]
            fh.write(sid + "\t" + "\t".join(cells) + "\n")
    with open(paths["regions"], "wt", encoding="utf-8") as fh:
        fh.write("gene\tchrom\tstart\tend\n")
        for r in gene_regions_for(g, cohort.scenario.n_genes):
            fh.write(f"{r.gene}\t{r.chrom}\t{r.start}\t{r.end}\n")
    with open(paths["annotations"], "wt", encoding="utf-8") as fh:
        fh.write("variant\tcategory\n")
        for vid, cat in sorted(cohort.annotations.categories.items()):
            fh.write(f"{vid}\t{cat}\n")
    with open(paths["omics"], "wt", encoding="utf-8") as fh:
        fh.write("variant\tpvalue\n")
        for vid, p in sorted(cohort.omics.pvalues.items()):
            fh.write(f"{vid}\t{format(p, '.10g')}\n")
    return paths


def write_rejection_report(reports, path):
    lines = ["method\talpha\treplicates\trejections\trate\tci_low\tci_high\tuntestable"]
    for r in reports:
        lo, hi = r.confidence_interval()
        lines.append(
            "\t".join(
                [
                    r.method,
                    format(r.alpha, ".10g"),
                    str(r.replicates),
                    str(r.rejections),
                    format(r.rate, ".10g"),
                    format(lo, ".10g"),
                    format(hi, ".10g"),
                    str(r.untestable),
                ]
            )
        )
    with open(path, "wt", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
