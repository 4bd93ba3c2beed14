"""Flat key-value configuration files for the batch runner and simulator.

Syntax: one ``key = value`` pair per line, ``#`` starts a comment, blank
lines are ignored.  ``method`` is the only repeatable key; every other
duplicate is an error.  The same syntax family covers scan configs and
simulation scenario files.
"""

import os
from dataclasses import dataclass, field

from .exceptions import ConfigError
from .methods import MethodSpec, parse_method
from .simulate import SimScenario, SpectrumTarget


def parse_keyvalue(path):
    """Ordered (key, value) pairs from a flat config file."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    pairs = []
    with open(path, "rt", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip()
            value = value.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            pairs.append((key, value))
    return pairs


def _collect(pairs, path, repeatable=("method",)):
    values = {}
    repeated = {key: [] for key in repeatable}
    for key, value in pairs:
        if key in repeated:
            repeated[key].append(value)
        elif key in values:
            raise ConfigError(f"{path}: duplicate key {key!r}")
        else:
            values[key] = value
    return values, repeated


def _get_float(values, key, default, lo=None, hi=None):
    if key not in values:
        return default
    try:
        x = float(values.pop(key))
    except ValueError:
        raise ConfigError(f"bad numeric value for {key!r}") from None
    if lo is not None and x < lo or hi is not None and x > hi:
        raise ConfigError(f"{key} = {x} outside allowed range")
    return x


def _get_int(values, key, default):
    if key not in values:
        return default
    try:
        return int(values.pop(key))
    except ValueError:
        raise ConfigError(f"bad integer value for {key!r}") from None


def _get_list(values, key, default=()):
    if key not in values:
        return list(default)
    raw = values.pop(key)
    return [tok.strip() for tok in raw.split(",") if tok.strip()]


@dataclass
class RunConfig:
    """Validated scan configuration."""

    genotypes: str
    phenotypes: str
    regions: str
    traits: list
    methods: list
    covariates: list = field(default_factory=list)
    genotype_format: str = "dense-tsv"
    variants: str | None = None
    annotations: str | None = None
    vocabulary: str | None = None
    omics: str | None = None
    expression: str | None = None
    background: str | None = None
    alpha: float = 0.05
    beta_params: tuple = (1.0, 25.0)
    max_missing: float = 0.05
    family_size: int | None = None
    split_multiallelic: bool = False
    seed: int = 0
    threads: int = 1
    out: str = "."

    def __post_init__(self):
        if not self.traits:
            raise ConfigError("config selects no traits")
        if not self.methods:
            raise ConfigError("config selects no methods")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError(f"method names must be unique, got {names}")
        if self.genotype_format not in ("dense-tsv", "vcf-lite"):
            raise ConfigError(f"unknown genotype format {self.genotype_format!r}")
        if self.genotype_format == "dense-tsv" and not self.variants:
            raise ConfigError("dense-tsv genotypes need a 'variants' sidecar path")
        if self.omics and self.expression:
            raise ConfigError(
                "'omics' and 'expression' are mutually exclusive omics sources"
            )
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @classmethod
    def from_file(cls, path):
        values, repeated = _collect(parse_keyvalue(path), path)
        alpha = _get_float(values, "alpha", 0.05)
        beta_raw = _get_list(values, "beta_weights", ("1", "25"))
        if len(beta_raw) != 2:
            raise ConfigError("beta_weights needs two comma-separated values")
        try:
            beta_params = (float(beta_raw[0]), float(beta_raw[1]))
        except ValueError:
            raise ConfigError("bad beta_weights values") from None
        methods = [
            parse_method(text, alpha=alpha, beta_params=beta_params)
            for text in repeated["method"]
        ]
        required = {}
        for key in ("genotypes", "phenotypes", "regions"):
            if key not in values:
                raise ConfigError(f"{path}: missing required key {key!r}")
            required[key] = values.pop(key)
        family_raw = values.pop("family_size", None)
        try:
            family_size = int(family_raw) if family_raw else None
        except ValueError:
            raise ConfigError("bad integer value for 'family_size'") from None
        cfg = cls(
            genotypes=required["genotypes"],
            phenotypes=required["phenotypes"],
            regions=required["regions"],
            traits=_get_list(values, "traits"),
            covariates=_get_list(values, "covariates"),
            methods=methods,
            genotype_format=values.pop("genotype_format", "dense-tsv"),
            variants=values.pop("variants", None),
            annotations=values.pop("annotations", None),
            vocabulary=values.pop("vocabulary", None),
            omics=values.pop("omics", None),
            expression=values.pop("expression", None),
            background=values.pop("background", None),
            alpha=alpha,
            beta_params=beta_params,
            max_missing=_get_float(values, "max_missing", 0.05, lo=0.0),
            family_size=family_size,
            split_multiallelic=values.pop("split_multiallelic", "no").lower()
            in ("yes", "true", "1"),
            seed=_get_int(values, "seed", 0),
            threads=_get_int(values, "threads", 1),
            out=values.pop("out", "."),
        )
        if values:
            raise ConfigError(f"{path}: unknown keys {sorted(values)}")
        return cfg


def scenario_from_file(path):
    """SimScenario from a flat scenario config file."""
    values, _ = _collect(parse_keyvalue(path), path, repeatable=())
    n = _get_int(values, "n", None)
    m = _get_int(values, "m", None)
    if n is None or m is None:
        raise ConfigError(f"{path}: scenario needs 'n' and 'm'")
    spectrum = SpectrumTarget(
        singleton=_get_float(values, "spectrum_singleton", SpectrumTarget.singleton),
        doubleton=_get_float(values, "spectrum_doubleton", SpectrumTarget.doubleton),
        rare=_get_float(values, "spectrum_rare", SpectrumTarget.rare),
        rare_maf=_get_float(values, "rare_maf", SpectrumTarget.rare_maf),
    )
    causal = {}
    raw = values.pop("causal", "")
    if raw:
        for chunk in raw.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            if ":" not in chunk:
                raise ConfigError(
                    f"{path}: causal entries look like index:effect, got {chunk!r}"
                )
            idx, eff = chunk.split(":", 1)
            try:
                causal[int(idx)] = float(eff)
            except ValueError:
                raise ConfigError(f"{path}: bad causal entry {chunk!r}") from None
    scenario = SimScenario(
        n=n,
        m=m,
        spectrum=spectrum,
        causal=causal,
        sigma_eps=_get_float(values, "sigma_eps", 1.0),
        n_covariates=_get_int(values, "covariates", 2),
        covariate_effect=_get_float(values, "covariate_effect", 0.5),
        annotation_concordance=_get_float(values, "annotation_concordance", 0.0),
        omics_concordance=_get_float(values, "omics_concordance", 0.0),
        background_annotation_rate=_get_float(
            values, "background_annotation_rate", 0.3
        ),
        alpha=_get_float(values, "alpha", 0.05),
        n_genes=_get_int(values, "genes", 1),
        seed=_get_int(values, "seed", 0),
    )
    if values:
        raise ConfigError(f"{path}: unknown keys {sorted(values)}")
    return scenario
