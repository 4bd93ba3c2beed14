"""Association method specifications shared by the runner and the simulator.

A method line names one test per (gene, trait):

    skat [w=<weights>]                weighted linear kernel test
    skat-o [w=<weights>]              optimal linear/burden mixture
    new-kernel-1|2|3                  preset generalized kernels
    kernel name=<id> w=<expr> v=<expr>   custom generalized kernel

Weight/similarity expressions follow the kernel-builder grammar (sums of
products of weight atoms, products of similarity atoms).  SKAT and SKAT-O
default to the beta-density MAF weights; ``w=identity`` gives the unweighted
variants.
"""

from dataclasses import dataclass

from .exceptions import ConfigError
from .kernels import (
    PRESETS,
    KernelSpec,
    build_kernel,
    build_v,
    build_w,
    parse_v_expression,
    parse_w_expression,
)
from .scoretest import DEFAULT_RHO_GRID, TestResult, skat, skat_o, test_new_kernel


@dataclass(frozen=True)
class MethodSpec:
    name: str
    kind: str  # skat | skat-o | kernel
    w_expr: str = "beta_maf"
    v_expr: str = "identity"
    alpha: float = 0.05
    beta_params: tuple = (1.0, 25.0)
    rho_grid: tuple = DEFAULT_RHO_GRID

    def kernel_spec(self):
        return KernelSpec.from_strings(
            self.name,
            w=self.w_expr,
            v=self.v_expr,
            alpha=self.alpha,
            beta_params=self.beta_params,
        )


def parse_method(text, alpha=0.05, beta_params=(1.0, 25.0)):
    """Parse one ``method = ...`` config value into a MethodSpec."""
    tokens = text.split()
    if not tokens:
        raise ConfigError("empty method specification")
    head, opts = tokens[0], tokens[1:]
    options = {}
    for tok in opts:
        if "=" not in tok:
            raise ConfigError(f"malformed method option {tok!r} (expected key=value)")
        key, value = tok.split("=", 1)
        if key in options:
            raise ConfigError(f"duplicate method option {key!r}")
        options[key] = value

    def finish(name, kind, w, v):
        # validate the expressions eagerly so config errors surface early
        parse_w_expression(w)
        parse_v_expression(v)
        return MethodSpec(
            name=name,
            kind=kind,
            w_expr=w,
            v_expr=v,
            alpha=alpha,
            beta_params=beta_params,
        )

    if head in ("skat", "skat-o"):
        name = options.pop("name", head)
        w = options.pop("w", "beta_maf")
        if options:
            raise ConfigError(f"unknown method options {sorted(options)}")
        return finish(name, head, w, "identity")
    if head in PRESETS:
        name = options.pop("name", head)
        if options:
            raise ConfigError(f"unknown method options {sorted(options)}")
        w, v = PRESETS[head]
        return finish(name, "kernel", w, v)
    if head == "kernel":
        if "name" not in options:
            raise ConfigError("custom kernel methods need name=<id>")
        name = options.pop("name")
        w = options.pop("w", "identity")
        v = options.pop("v", "identity")
        if options:
            raise ConfigError(f"unknown method options {sorted(options)}")
        return finish(name, "kernel", w, v)
    raise ConfigError(f"unknown method {head!r}")


def evaluate_method(fit, g, annot, omics, spec, gene="", trait="", seed=0):
    """Run one method on one gene slice against a fitted null model."""
    if g.m == 0:
        return TestResult.untestable(gene, trait, spec.name, 0)
    kspec = spec.kernel_spec()
    w = build_w(g, annot, omics, kspec)
    if spec.kind == "skat":
        return skat(fit, g, w, gene=gene, trait=trait, method=spec.name, seed=seed)
    if spec.kind == "skat-o":
        return skat_o(
            fit,
            g,
            w,
            rho_grid=spec.rho_grid,
            gene=gene,
            trait=trait,
            method=spec.name,
            seed=seed,
        )
    if spec.kind == "kernel":
        v = build_v(g.variants, annot, omics, kspec)
        kern = build_kernel(g, w, v, spec=kspec, gene=gene)
        return test_new_kernel(fit, kern, trait=trait, method=spec.name, seed=seed)
    raise ConfigError(f"unknown method kind {spec.kind!r}")
