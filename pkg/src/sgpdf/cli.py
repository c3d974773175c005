"""Command-line front end: ``sgpdf {kl,moments,estimate,compare}``.

Settings come from a flat ``key = value`` file (``--config``, defaulting to
the shipped reference configuration) with per-key flag overrides.  Every
command writes UTF-8 CSV files with ``#`` metadata lines.

Exit codes: 0 success, 1 other library error, 2 configuration, 3 numerical,
4 input/output.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .density import DEFAULT_GRID, build_histogram, kde, select_order, standardize_samples
from .errors import ConfigurationError, DegenerateDistributionError, SGPDFError
from .fem import build_mesh
from .kl import CovarianceSpec, build_kl_field, eigenpair_cache_name
from .mc import mc_moments, run_mc, sample_parameters
from .series import MomentVector, build_series, cumulants_needed, moments_to_cumulants, series_orders, standardize_moments
from .sg import exact_moments, qoi_polynomial, run_sg, sample_qoi_polynomial

log = logging.getLogger("sgpdf")

MC_SIGMA_LIMIT = 0.1
N_MOMENTS = 6


@dataclass
class ExperimentConfig:
    refinement_level: int = 3
    sigma_gamma: float = 0.08
    L: float = 0.1
    N: int = 2
    a_min: float = 0.01
    mu_gamma: float = 0.0
    f: float = -1.0
    covariance_method: str = "gauss"
    p: int = 4
    q: int = 5
    projection: str = "quadrature"
    qoi_kind: str = "average"
    method: str = "sg"
    M: int = 100_000
    M_crude: int = 10_000
    seed: int = 0
    bins: int = 50
    bandwidth: str = "auto"
    series: str = "ED"
    order: str = "auto"
    tol: float = 1e-3
    kde: bool = False
    workers: int = 1
    output: str = "results"

    def validate(self) -> "ExperimentConfig":
        choices = {
            "method": ("sg", "mc"),
            "qoi_kind": ("average", "integral_square", "max"),
            "covariance_method": ("gauss", "separable"),
            "projection": ("quadrature", "closed_form"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigurationError(f"{key}={getattr(self, key)!r}; expected one of {allowed}")
        self.series = self.series.upper()
        if self.series not in ("GC", "ED"):
            raise ConfigurationError(f"series={self.series!r}; expected GC or ED")
        if self.order != "auto":
            try:
                o = int(self.order)
            except ValueError:
                raise ConfigurationError(f"order must be 'auto' or an integer, got {self.order!r}") from None
            if o not in series_orders(self.series):
                raise ConfigurationError(f"{self.series} order {o} outside {list(series_orders(self.series))}")
        if self.bandwidth != "auto" and not float(self.bandwidth) > 0:
            raise ConfigurationError(f"bandwidth must be 'auto' or positive, got {self.bandwidth!r}")
        for key in ("M", "M_crude", "bins", "workers", "N"):
            if getattr(self, key) < 1:
                raise ConfigurationError(f"{key} must be positive, got {getattr(self, key)}")
        if not self.tol > 0:
            raise ConfigurationError(f"tol must be positive, got {self.tol}")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _convert(key: str, text: str):
    kind = _FIELDS[key].type
    try:
        if kind == "int":
            return int(float(text)) if "e" in text.lower() else int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(text)
            return low in ("1", "true", "yes", "on")
    except ValueError:
        raise ConfigurationError(f"invalid value {text!r} for {key} ({kind})") from None
    return text.strip()


def read_config_file(path) -> dict:
    values = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{n}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigurationError(f"{path}:{n}: unknown key {key!r}")
        values[key] = _convert(key, val)
    return values


def default_config_path() -> Path:
    return Path(str(resources.files("sgpdf") / "data" / "defaults.cfg"))


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    values = read_config_file(path or default_config_path())
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = _convert(key, str(val)) if isinstance(val, str) else val
    return ExperimentConfig(**values).validate()


# ---------------------------------------------------------------- output


def fmt(x) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.5e}"


def _header(command: str, cfg: ExperimentConfig, extra: dict | None = None) -> str:
    lines = [f"# sgpdf {__version__}", f"# command={command}"]
    lines += [f"# {k}={v}" for k, v in dataclasses.asdict(cfg).items()]
    lines += [f"# {k}={v}" for k, v in (extra or {}).items()]
    return "\n".join(lines) + "\n"


def write_csv(path: Path, header: str, columns: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")
    return path


def _tag(cfg: ExperimentConfig) -> str:
    return f"{cfg.qoi_kind}_s{cfg.sigma_gamma:g}"


# ---------------------------------------------------------------- pipeline


def build_field(cfg: ExperimentConfig):
    mesh = build_mesh(cfg.refinement_level)
    spec = CovarianceSpec(cfg.sigma_gamma, cfg.L)
    cache = Path(cfg.output) / "cache"
    kl = build_kl_field(mesh, spec, cfg.N, cfg.a_min, cfg.mu_gamma, cache_dir=cache,
                        covariance_method=cfg.covariance_method)
    return mesh, kl


def _check_mc(cfg: ExperimentConfig, force: bool):
    if cfg.sigma_gamma > MC_SIGMA_LIMIT:
        if not force:
            raise ConfigurationError(
                f"Monte Carlo at sigma_gamma={cfg.sigma_gamma} > {MC_SIGMA_LIMIT} gives inaccurate "
                f"higher moments; use method=sg or pass --force"
            )
        log.warning("running Monte Carlo at sigma_gamma=%g above %g (forced)", cfg.sigma_gamma, MC_SIGMA_LIMIT)


def sg_qoi(cfg: ExperimentConfig, kl):
    sol = run_sg(kl, cfg.p, cfg.q, cfg.f, projection=cfg.projection)
    return qoi_polynomial(sol, cfg.qoi_kind)


def mc_samples(cfg: ExperimentConfig, mesh, kl, M: int, seed: int):
    eps = sample_parameters(M, kl.N, seed)
    return run_mc(mesh, kl, cfg.qoi_kind, eps, f=cfg.f, workers=cfg.workers, seed=seed)


def moment_table(m):
    """Rows ``(l, m_l, kappa_l, m_l std, kappa_l std)``; standardized columns are nan if degenerate."""
    kappa = moments_to_cumulants(m).kappa
    try:
        ms = standardize_moments(m)
        ks = moments_to_cumulants(ms).kappa
        ms = ms.m
    except DegenerateDistributionError as exc:
        log.warning("%s; standardized columns left empty", exc)
        ms = ks = np.full(m.L, np.nan)
    return [(str(l + 1), m.m[l], kappa[l], ms[l], ks[l]) for l in range(m.L)]


# ---------------------------------------------------------------- commands


def cmd_kl(cfg: ExperimentConfig, args) -> int:
    mesh, kl = build_field(cfg)
    cache = Path(cfg.output) / "cache" / eigenpair_cache_name(
        cfg.refinement_level, kl.spec, cfg.N, cfg.covariance_method)
    for n, lam in enumerate(kl.eigenvalues, 1):
        print(f"lambda_{n} = {fmt(lam)}")
    print(f"eigenpairs: {cache}")
    return 0


def cmd_moments(cfg: ExperimentConfig, args) -> int:
    mesh, kl = build_field(cfg)
    cols = ["l", "m", "kappa", "m_std", "kappa_std"]
    extra = {}
    if cfg.method == "sg":
        m = exact_moments(sg_qoi(cfg, kl), N_MOMENTS)
        rows = moment_table(m)
    else:
        _check_mc(cfg, args.force)
        samples = mc_samples(cfg, mesh, kl, cfg.M, cfg.seed)
        m = mc_moments(samples, N_MOMENTS)
        rows = [r + (se,) for r, se in zip(moment_table(m), m.stderr)]
        cols.append("m_stderr")
        extra["M_effective"] = samples.M
    path = write_csv(Path(cfg.output) / f"moments_{cfg.method}_{_tag(cfg)}.csv",
                     _header("moments", cfg, extra), cols, rows)
    for row in rows:
        print("  ".join(v if isinstance(v, str) else fmt(v) for v in row))
    print(f"written: {path}")
    return 0


def cmd_estimate(cfg: ExperimentConfig, args) -> int:
    mesh, kl = build_field(cfg)
    out = Path(cfg.output)
    tag = f"{cfg.method}_{_tag(cfg)}"
    if cfg.method == "sg":
        qoi = sg_qoi(cfg, kl)
        moments = exact_moments(qoi, N_MOMENTS)
        crude = sample_qoi_polynomial(qoi, cfg.M_crude, seed=cfg.seed)
    else:
        _check_mc(cfg, args.force)
        moments = mc_moments(mc_samples(cfg, mesh, kl, cfg.M, cfg.seed), N_MOMENTS)
        crude = mc_samples(cfg, mesh, kl, cfg.M_crude, cfg.seed + 1)
    standardize_moments(moments)  # raise early on degenerate input

    def provider(L):
        return MomentVector(moments.m[:L])

    crude.save(out / f"crude_samples_{tag}.csv")
    std = standardize_samples(crude)
    hist = build_histogram(std, cfg.bins)
    grid = np.linspace(std.min(), std.max(), DEFAULT_GRID)

    if cfg.order == "auto":
        report = select_order(provider, cfg.series, crude, tol=cfg.tol, bins=cfg.bins)
        (out / f"selection_{cfg.series}_{tag}.csv").write_text(report.to_csv(), encoding="utf-8")
        print(report.table())
        orders, chosen = report.orders, report.chosen_order
    else:
        orders = [int(cfg.order)]
        chosen = orders[0]
    header = _header("estimate", cfg, {"chosen_order": chosen})
    curves = []
    for o in orders:
        kappa = moments_to_cumulants(standardize_moments(provider(cumulants_needed(cfg.series, o))))
        curves.append(build_series(cfg.series, kappa, o)(grid))
    write_csv(out / f"series_{cfg.series}_{tag}.csv", header,
              ["x"] + [f"{cfg.series}{o}" for o in orders], zip(grid, *curves))
    write_csv(out / f"histogram_{tag}.csv", header, ["left", "right", "center", "density"],
              zip(hist.edges[:-1], hist.edges[1:], hist.centers, hist.densities))
    if cfg.kde:
        h = hist.bin_width if cfg.bandwidth == "auto" else float(cfg.bandwidth)
        write_csv(out / f"kde_{tag}.csv", _header("estimate", cfg, {"h": fmt(h)}), ["x", "kde"],
                  zip(grid, kde(std, h, grid)))
    print(f"chosen {cfg.series} order: {chosen}; curves written to {out}")
    return 0


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    _check_mc(cfg, args.force)
    mesh, kl = build_field(cfg)
    m_sg = exact_moments(sg_qoi(cfg, kl), N_MOMENTS)
    samples = mc_samples(cfg, mesh, kl, cfg.M, cfg.seed)
    m_mc = mc_moments(samples, N_MOMENTS)
    rows = []
    for l in range(N_MOMENTS):
        z = (m_mc.m[l] - m_sg.m[l]) / m_mc.stderr[l]
        rows.append((str(l + 1), m_sg.m[l], m_mc.m[l], m_mc.stderr[l], z, "yes" if abs(z) <= 3 else "no"))
    path = write_csv(Path(cfg.output) / f"compare_{_tag(cfg)}.csv", _header("compare", cfg),
                     ["l", "m_sg", "m_mc", "mc_stderr", "z", "within_3se"], rows)
    for row in rows:
        print("  ".join(v if isinstance(v, str) else fmt(v) for v in row))
    print(f"written: {path}")
    return 0


COMMANDS = {"kl": cmd_kl, "moments": cmd_moments, "estimate": cmd_estimate, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgpdf", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"sgpdf {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file (default: shipped reference config)")
    common.add_argument("--force", action="store_true", help="allow Monte Carlo above sigma_gamma=0.1")
    common.add_argument("-v", "--verbose", action="store_true")
    for name, f in _FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if f.type == "bool":
            common.add_argument(flag, dest=name, default=None, metavar="BOOL")
        else:
            common.add_argument(flag, dest=name, default=None)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "kl": "solve the covariance eigenproblem and cache the eigenpairs",
        "moments": "moments and cumulants of the QoI (SG or MC)",
        "estimate": "series density estimates, histogram, optional KDE and order selection",
        "compare": "SG exact moments against MC estimates with standard errors",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in _FIELDS}
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except SGPDFError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
