"""Command line front end.

Subcommands: ``fit-mle``, ``fit-tr``, ``test-null``, ``identify``,
``simulate`` and ``mc``.  Every run writes a JSON report (to ``--out`` or
stdout) and, where useful, a flat CSV table next to it for plotting.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .design import DataError, Dataset
from .glm import SeparationError
from .gop import NumericalFailure
from .identify import ModelViolationWarning, WeakQivError, np_identify, stratum_means
from .io import Report, Roles, dataset_info, load_csv, write_csv, write_report
from .mle import KAPPA_MIN, MleConfig, fit_mle, lr_test_null, marginal_att_plugin
from .sim import Scenario, ScenarioSpec, apply_misspec, run_mc, simulate_dataset, TRUE_ATT
from .tr import PositivityError, TrConfig, UnidentifiedError, dr_score_test, fit_nuisances, tr_estimate

log = logging.getLogger("qiv")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
COMMANDS = ("fit-mle", "fit-tr", "test-null", "identify", "simulate", "mc")
MAX_STRATA = 64


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    input: str | None = None
    outcome: str = "y"
    treatment: str = "a"
    qiv: tuple = ("z",)
    covariates: tuple | None = None
    method: str = "both"
    level: float = 0.95
    seed: int = 0
    scenario: str = "all-correct"
    reps: int = 200
    n: int = 20_000
    out: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown subcommand {self.command!r}")
        if not 0 < self.level < 1:
            raise ConfigError("--level must lie in (0, 1)")
        if self.method not in ("mle", "tr", "both"):
            raise ConfigError("--method must be one of mle, tr, both")
        try:
            Roles(self.outcome, self.treatment, tuple(self.qiv), self.covariates)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.command in ("fit-mle", "fit-tr", "test-null", "identify") and not self.input:
            raise ConfigError(f"{self.command} needs --input")
        if self.command == "simulate" and not self.out:
            raise ConfigError("simulate needs --out for the data file")
        if self.command in ("simulate", "mc"):
            try:
                Scenario.parse(self.scenario)
            except ValueError:
                raise ConfigError(f"unknown scenario {self.scenario!r}") from None
            if self.n < 100 or self.reps < 1:
                raise ConfigError("--n must be at least 100 and --reps positive")

    @property
    def roles(self) -> Roles:
        return Roles(self.outcome, self.treatment, tuple(self.qiv), self.covariates)

    def echo(self) -> dict:
        return asdict(self)


def _methods(cfg):
    return ("mle", "tr") if cfg.method == "both" else (cfg.method,)


def _kappa_warning(fit, where=""):
    if fit.kappa_hat <= KAPPA_MIN:
        return f"{where}weak identification: kappa_hat = {fit.kappa_hat:.4g} <= {KAPPA_MIN:g}"
    return None


def _mle_section(fit, d, level):
    est = marginal_att_plugin(fit, d, level)
    nm = fit.design.names
    names = [f"{blk}:{c}" for blk in ("beta", "theta", "gop") for c in nm[blk]]
    se = np.sqrt(np.diag(fit.covariance)) if fit.covariance is not None else np.full(len(names), np.nan)
    return {
        "att": est.as_dict(),
        "kappa_hat": fit.kappa_hat,
        "converged": fit.converged,
        "loglik": fit.loglik,
        "coefficients": {nm: {"estimate": v, "se": s}
                         for nm, v, s in zip(names, fit.phi_hat.to_array(), se)},
        "diagnostics": fit.diagnostics,
    }


def _cmd_fit_mle(cfg: RunConfig, d: Dataset):
    fit = fit_mle(d, MleConfig(level=cfg.level))
    sec = _mle_section(fit, d, cfg.level)
    warns = [w for w in [_kappa_warning(fit)] if w]
    if not fit.converged:
        warns.append("likelihood maximisation did not converge")
    table = [{"parameter": k, "estimate": v["estimate"], "se": v["se"]}
             for k, v in sec["coefficients"].items()]
    return {"mle": sec}, warns, table


def _cmd_fit_tr(cfg: RunConfig, d: Dataset):
    sections, warns, table = {}, [], []
    for name in d.z_names:
        dq = d.with_qiv(name)
        _check_relevance(dq)
        fit = fit_mle(dq, MleConfig(level=cfg.level))
        sec = {}
        w = _kappa_warning(fit, f"{name}: ")
        if w:
            warns.append(w)
        if "mle" in _methods(cfg):
            sec["mle"] = _mle_section(fit, dq, cfg.level)
        if "tr" in _methods(cfg):
            nf = fit_nuisances(dq, TrConfig(level=cfg.level), mle_fit=fit)
            sec["tr"] = tr_estimate(dq, nf, cfg.level).as_dict()
        for m in ("mle", "tr"):
            if m in sec:
                att = sec[m]["att"] if m == "mle" else sec[m]
                table.append({"qiv": name, "method": m, "estimate": att["gamma_hat"], "se": att["se"],
                              "ci_low": att["ci_low"], "ci_high": att["ci_high"]})
        sections[name] = sec
    return {"per_qiv": sections}, warns, table


def _check_relevance(dq: Dataset):
    z = dq.z[:, 0]
    if z.min() == z.max():
        raise WeakQivError(f"QIV column {dq.z_names[0]!r} is constant; it cannot predict the outcome")
    untreated = dq.a == 0
    if z[untreated].min() == z[untreated].max():
        raise WeakQivError(f"QIV column {dq.z_names[0]!r} does not vary among the untreated")


def _cmd_test_null(cfg: RunConfig, d: Dataset):
    res, warns = {}, []
    if "mle" in _methods(cfg):
        res["lr"] = lr_test_null(d, MleConfig(level=cfg.level)).as_dict()
    if "tr" in _methods(cfg):
        res["dr_score"] = {}
        for name in d.z_names:
            dq = d.with_qiv(name)
            _check_relevance(dq)
            nf = fit_nuisances(dq, TrConfig(null=True, refit_alpha=False, level=cfg.level))
            res["dr_score"][name] = dr_score_test(dq, nf).as_dict()
    return res, warns, None


def _cmd_identify(cfg: RunConfig, d: Dataset):
    import warnings

    x = d.x
    keys, inv = (np.unique(x, axis=0, return_inverse=True) if x.shape[1]
                 else (np.zeros((1, 0)), np.zeros(d.n, int)))
    inv = np.asarray(inv).ravel()
    if len(keys) > MAX_STRATA:
        raise ConfigError(f"identify needs discrete covariates; found {len(keys)} strata (limit {MAX_STRATA})")
    res, warns, table = {}, [], []
    for qi, name in enumerate(d.z_names):
        rows = []
        for s, key in enumerate(keys):
            cell = {nm: float(v) for nm, v in zip(d.x_names, key)}
            row = {"qiv": name, **cell, "n": int((inv == s).sum())}
            try:
                sm = stratum_means(d, inv == s, qiv=qi)
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always", ModelViolationWarning)
                    ident = np_identify(sm)
                row.update(alpha=ident.alpha_x, gamma=ident.gamma_x, status="ok")
                for c in caught:
                    warns.append(f"{name} stratum {cell}: {c.message}")
            except (WeakQivError, ValueError) as exc:
                row.update(alpha=float("nan"), gamma=float("nan"), status=str(exc))
            rows.append(row)
        res[name] = rows
        table.extend(rows)
    return {"strata": res}, warns, table


def _cmd_simulate(cfg: RunConfig):
    spec = ScenarioSpec(Scenario.parse(cfg.scenario), n=cfg.n, seed=cfg.seed, reps=1)
    d = simulate_dataset(spec)
    path = write_csv(d, cfg.out, cfg.outcome, cfg.treatment)
    ms = apply_misspec(d, spec.scenario)
    return d, {"data_file": str(path), "working_models": asdict(ms)}


def _cmd_mc(cfg: RunConfig):
    spec = ScenarioSpec(Scenario.parse(cfg.scenario), n=cfg.n, seed=cfg.seed, reps=cfg.reps)
    summ = run_mc(spec, _methods(cfg), level=cfg.level, truth=TRUE_ATT)
    warns = [f"{e}: {v['failures']} failed replicate(s)" for e, v in summ.estimators.items() if v["failures"]]
    return summ.as_dict(), warns, summ.records


def run_command(cfg: RunConfig, stream=None):
    """Execute one subcommand; returns ``(exit_status, written_paths)``."""
    stream = stream if stream is not None else sys.stdout
    try:
        dset = None
        if cfg.command == "simulate":
            d, res = _cmd_simulate(cfg)
            report = Report(cfg.command, cfg.echo(), res, dataset_info(d))
            out = Path(cfg.out).with_suffix(".json")
        elif cfg.command == "mc":
            res, warns, table = _cmd_mc(cfg)
            report = Report(cfg.command, cfg.echo(), res, None, warns, table)
            out = cfg.out
        else:
            dset = load_csv(cfg.input, cfg.roles)
            handler = {"fit-mle": _cmd_fit_mle, "fit-tr": _cmd_fit_tr,
                       "test-null": _cmd_test_null, "identify": _cmd_identify}[cfg.command]
            res, warns, table = handler(cfg, dset)
            report = Report(cfg.command, cfg.echo(), res, dataset_info(dset), warns, table)
            out = cfg.out
        for w in report.warnings:
            log.warning(w)
        return EXIT_OK, write_report(report, out, stream)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG, []
    except (DataError, WeakQivError, PositivityError, FileNotFoundError, KeyError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA, []
    except (NumericalFailure, SeparationError, UnidentifiedError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC, []
    except OSError as exc:
        log.error("cannot write report: %s", exc)
        return EXIT_CONFIG, []
    except ValueError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG, []


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qiv", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--input", help="CSV file with a header row")
    p.add_argument("--outcome", default="y")
    p.add_argument("--treatment", default="a")
    p.add_argument("--qiv", action="append", help="QIV column (repeatable; default z)")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    p.add_argument("--method", choices=("mle", "tr", "both"), default="both")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", default="all-correct")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--out", help="report path (JSON); a .csv table is written next to it")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="qiv: %(levelname)s: %(message)s")
    covs = None
    if args.covariates is not None:
        covs = tuple(c.strip() for c in args.covariates.split(",") if c.strip())
    try:
        cfg = RunConfig(args.command, args.input, args.outcome, args.treatment,
                        tuple(args.qiv or ("z",)), covs, args.method, args.level, args.seed,
                        args.scenario, args.reps, args.n, args.out)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    status, _ = run_command(cfg)
    return status


if __name__ == "__main__":
    sys.exit(main())
