"""Command-line entry point.

Every subcommand reads an optional JSON config (``--config``) and accepts
one inline flag per config field (``--n-draws 2000``, ``--k-max 8``); inline
values are parsed as JSON when possible and override the file. A
``report.json`` produced by a previous run is also accepted as a config.

Exit codes: 0 when every declared tolerance passes, 1 when one fails, 2 on
a configuration error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .flows import EXACT, LEAPFROG, Flow
from .gaussmodel import default_shell, make_target
from .hmc import HMCKernel, IntegrationTimeLaw
from .lab import experiments as ex
from .lab import predict as pr
from .lab.report import ExperimentReport, Table
from .nuts import STOP_REASONS, NUTSKernel, OrbitParams
from .rng import resolve_threads, substreams

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
SEED_MAX = 2**64 - 1


class ConfigError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@contextlib.contextmanager
def field_errors(name: str):
    """Re-raise precondition failures as `ConfigError` naming ``name``."""
    try:
        yield
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(name, str(exc)) from exc


TargetSpec = Union[str, dict, list]


class _Base(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, ge=0, le=SEED_MAX)
    threads: Optional[Union[int, Literal["auto"]]] = None
    output: Optional[str] = None


class _Sampler(_Base):
    kernel: Literal["nuts", "hmc"] = "nuts"
    h: Optional[float] = Field(None, gt=0)
    k_max: Optional[int] = Field(None, ge=0)
    flow: Literal["exact", "leapfrog"] = EXACT
    law: Optional[dict] = None


class PredictConfig(_Base):
    """Critical orbit length and the orbit-selection condition."""

    target: TargetSpec
    h: float = Field(gt=0)
    k_max: int = Field(ge=0)
    flow: Literal["exact", "leapfrog"] = EXACT
    hbar: Optional[float] = Field(None, ge=0)
    shell_c: float = Field(3.0, gt=0)
    empirical_draws: int = Field(0, ge=0)
    require_selection: bool = False


class PhaseConfig(_Base):
    """Accelerated-phase membership for (kappa, d2/d1)."""

    kappa: Union[float, list[float]]
    ratio: Union[float, list[float]]


class ConcentrationConfig(_Base):
    """U-turn diagnostic statistics over a time grid."""

    target: TargetSpec
    flow: Literal["exact", "leapfrog"] = EXACT
    h: Optional[float] = Field(None, gt=0)
    t_minus: list[float] = Field(default_factory=lambda: [-0.2 * k for k in range(20, 0, -1)])
    t_plus: list[float] = Field(default_factory=lambda: [0.2 * k for k in range(1, 21)])
    n_draws: int = Field(20000, ge=2)
    batch: int = Field(1000, ge=1)


class OrbitsConfig(_Base):
    """Selected orbit lengths and placement uniformity."""

    target: TargetSpec
    h: float = Field(gt=0)
    k_max: int = Field(ge=0)
    flow: Literal["exact", "leapfrog"] = EXACT
    n_transitions: int = Field(10000, ge=1)
    batch: int = Field(500, ge=1)
    min_fraction: float = Field(0.99, ge=0, le=1)
    p_min: float = Field(1e-3, ge=0, le=1)
    index_draws: int = Field(0, ge=0)


class ContractionConfig(_Base):
    """Synchronous-coupling contraction of HMC."""

    target: TargetSpec
    law: dict
    flow: Literal["exact", "leapfrog"] = EXACT
    h: Optional[float] = Field(None, gt=0)
    n_pairs: int = Field(10000, ge=2)
    n_steps: int = Field(1, ge=1)
    batch: int = Field(1000, ge=1)


class MixingConfig(_Sampler):
    """Radial-KS mixing estimate over replica chains."""

    target: TargetSpec
    n_replicas: int = Field(200, ge=2)
    horizon: int = Field(100, ge=0)
    checkpoints: Union[int, list[int]] = 1
    start: Literal["point", "overdispersed", "stationary"] = "point"
    point: Optional[list[float]] = None
    eps: float = Field(0.05, gt=0, lt=1)
    max_estimate: Optional[float] = None
    shell_c: float = Field(3.0, gt=0)


class SampleConfig(_Sampler):
    """Run replica chains and write traces."""

    target: TargetSpec
    n_replicas: int = Field(100, ge=1)
    n_transitions: int = Field(100, ge=0)
    start: Literal["point", "overdispersed", "stationary"] = "stationary"
    point: Optional[list[float]] = None
    trace: bool = True
    eps: Optional[float] = Field(None, gt=0, lt=1)


SCHEMAS: dict[str, type[_Base]] = {
    "predict": PredictConfig,
    "phase": PhaseConfig,
    "concentration": ConcentrationConfig,
    "orbits": OrbitsConfig,
    "contraction": ContractionConfig,
    "mixing": MixingConfig,
    "sample": SampleConfig,
}

# fields that describe the run environment, not the experiment
_RUNTIME_FIELDS = {"threads", "output"}
_ALIASES = {"k_max": ["--kmax"], "output": ["--out"]}


def _flow(name: str, h: Optional[float], field: str = "flow") -> Flow:
    with field_errors(field):
        if name == LEAPFROG:
            if h is None:
                raise ValueError("leapfrog flow needs h")
            return Flow.leapfrog(h)
        return Flow.exact(h)


def _target(spec):
    with field_errors("target"):
        return make_target(spec)


def _orbit_params(cfg) -> OrbitParams:
    if cfg.h is None:
        raise ConfigError("h", "required for NUTS")
    if cfg.k_max is None:
        raise ConfigError("k_max", "required for NUTS")
    with field_errors("k_max"):
        return OrbitParams(cfg.h, cfg.k_max, cfg.flow)


def _law(obj) -> IntegrationTimeLaw:
    if obj is None:
        raise ConfigError("law", "required for HMC")
    with field_errors("law"):
        return IntegrationTimeLaw.from_json(obj)


def _kernel(cfg, target):
    if cfg.kernel == "nuts":
        params = _orbit_params(cfg)
        with field_errors("h"):
            return NUTSKernel(target, params)
    law = _law(cfg.law)
    flow = _flow(cfg.flow, cfg.h)
    with field_errors("law"):
        return HMCKernel(target, law, flow)


def _echo(cfg: _Base, experiment: str) -> dict:
    out = cfg.model_dump(exclude=_RUNTIME_FIELDS)
    out["experiment"] = experiment
    return out


# -- subcommands ------------------------------------------------------------------------------

def run_predict(cfg: PredictConfig, threads: int) -> ExperimentReport:
    target = _target(cfg.target)
    with field_errors("k_max"):
        params = OrbitParams(cfg.h, cfg.k_max, cfg.flow)
    with field_errors("flow"):
        params.flow_obj.check_target(target)
    with field_errors("hbar"):
        pred = pr.predict_t_star(target, params, cfg.hbar)
        shell = default_shell(target, cfg.shell_c)
        sel = pr.check_selection_condition(target, params, cfg.hbar, shell)
    report = ExperimentReport("predict", _echo(cfg, "predict"), cfg.seed)
    report.summary = {
        "t_star": pred.t_star,
        "k_star": pred.k_star,
        "capped": pred.capped,
        "selection_ok": sel.ok,
        "offenders": sel.offenders,
        "delta": float(sel.delta[0]) if sel.delta.size else 0.0,
    }
    table = Table(["seed", "k", "length", "f_unif", "delta"])
    for k, (t, f) in enumerate(zip(sel.lengths, sel.f_unif), start=1):
        table.add(cfg.seed, k, float(t), float(f), float(sel.delta[k - 1]))
    if cfg.empirical_draws:
        dhat = pr.empirical_deviation(target, params, cfg.empirical_draws, substreams(cfg.seed, "draw", 1)[0])
        emp = pr.check_selection_condition(target, params, cfg.hbar, delta=dhat)
        report.summary["empirical_selection_ok"] = emp.ok
        report.summary["empirical_offenders"] = emp.offenders
        table = Table(["seed", "k", "length", "f_unif", "delta", "delta_empirical"])
        for k, (t, f) in enumerate(zip(sel.lengths, sel.f_unif), start=1):
            table.add(cfg.seed, k, float(t), float(f), float(sel.delta[k - 1]), float(dhat[k - 1]))
    report.tables["menu"] = table
    if cfg.require_selection:
        ok = report.summary.get("empirical_selection_ok", sel.ok)
        report.check("selection_condition", float(ok), 1.0, ">=", "no menu length in the forbidden band")
    report.headline = f"t* = {pred.t_star:.4g}, k* = {pred.k_star}, capped = {str(pred.capped).lower()}"
    return report


def run_phase(cfg: PhaseConfig, threads: int) -> ExperimentReport:
    kappas = cfg.kappa if isinstance(cfg.kappa, list) else [cfg.kappa]
    ratios = cfg.ratio if isinstance(cfg.ratio, list) else [cfg.ratio]
    report = ExperimentReport("phase", _echo(cfg, "phase"), cfg.seed)
    table = Table(["seed", "kappa", "ratio", "accelerated", "boundary", "min_g", "t_min"])
    results = []
    for k in kappas:
        for r in ratios:
            with field_errors("kappa/ratio"):
                res = pr.phase_membership(pr.PhasePointQuery(k, r))
            results.append(res)
            table.add(cfg.seed, k, r, res.accelerated, res.boundary, res.min_value, res.t_min)
    report.tables["phase"] = table
    a, t_hat = pr.phase_boundary_constant()
    report.summary = {"boundary_constant": a, "boundary_t": t_hat,
                      "accelerated": [r.accelerated for r in results]}
    if len(results) == 1:
        report.headline = f"accelerated: {str(results[0].accelerated).lower()}"
    else:
        report.headline = f"accelerated: {sum(r.accelerated for r in results)}/{len(results)} points"
    return report


def run_concentration(cfg: ConcentrationConfig, threads: int) -> ExperimentReport:
    target = _target(cfg.target)
    flow = _flow(cfg.flow, cfg.h)
    if flow.kind == LEAPFROG:
        with field_errors("t_minus/t_plus"):
            flow.to_index(cfg.t_minus + cfg.t_plus)
    with field_errors("t_minus/t_plus"):
        if max(cfg.t_minus) > min(cfg.t_plus):
            raise ValueError("every t_minus must be <= every t_plus")
    with field_errors("h"):
        flow.check_target(target)
    return ex.concentration_experiment(target, flow, cfg.t_minus, cfg.t_plus, cfg.n_draws, cfg.seed, threads,
                                       cfg.batch, _echo(cfg, "concentration"))


def run_orbits(cfg: OrbitsConfig, threads: int) -> ExperimentReport:
    target = _target(cfg.target)
    with field_errors("k_max"):
        params = OrbitParams(cfg.h, cfg.k_max, cfg.flow)
    with field_errors("h"):
        params.flow_obj.check_target(target)
    report = ex.orbit_statistics_experiment(target, params, cfg.n_transitions, cfg.seed, threads, cfg.batch,
                                            cfg.min_fraction, cfg.p_min, _echo(cfg, "orbits"))
    if cfg.index_draws:
        idx = ex.index_selection_experiment(target, params, cfg.index_draws, cfg.seed, cfg.p_min)
        report.checks.update(idx.checks)
        report.tables.update(idx.tables)
        report.summary["index_selection"] = idx.summary
    return report


def run_contraction(cfg: ContractionConfig, threads: int) -> ExperimentReport:
    target = _target(cfg.target)
    law = _law(cfg.law)
    if law.variant == "exponential":
        raise ConfigError("law", "contraction needs a point or triangular law")
    flow = _flow(cfg.flow, cfg.h)
    with field_errors("law"):
        law.check_flow(flow)
        flow.check_target(target)
    return ex.contraction_experiment(target, law, flow, cfg.n_pairs, cfg.n_steps, cfg.seed, threads, cfg.batch,
                                     _echo(cfg, "contraction"))


def _checkpoints(cfg: MixingConfig) -> list[int]:
    if isinstance(cfg.checkpoints, int):
        if cfg.checkpoints < 1:
            raise ConfigError("checkpoints", "spacing must be >= 1")
        return list(range(0, cfg.horizon + 1, cfg.checkpoints))
    if any(c < 0 or c > cfg.horizon for c in cfg.checkpoints):
        raise ConfigError("checkpoints", f"must lie in [0, horizon={cfg.horizon}]")
    return list(cfg.checkpoints)


def _point(cfg, target):
    if cfg.start == "point" and cfg.point is not None:
        with field_errors("point"):
            return target.check_dim(np.asarray(cfg.point, dtype=float))
    return None


def run_mixing(cfg: MixingConfig, threads: int) -> ExperimentReport:
    target = _target(cfg.target)
    kernel = _kernel(cfg, target)
    checkpoints = _checkpoints(cfg)
    point = _point(cfg, target)
    return ex.mixing_experiment(target, kernel, cfg.n_replicas, cfg.horizon, checkpoints, cfg.start, cfg.seed,
                                cfg.eps, threads, cfg.shell_c, point, cfg.max_estimate, _echo(cfg, "mixing"))


def run_sample(cfg: SampleConfig, threads: int) -> ExperimentReport:
    """Independent chains; writes final radii and, for NUTS, per-transition orbit traces."""
    target = _target(cfg.target)
    kernel = _kernel(cfg, target)
    point = _point(cfg, target)
    x = ex.start_positions(target, cfg.start, cfg.n_replicas, cfg.seed, point)
    gens = substreams(cfg.seed, "replica", cfg.n_replicas)
    report = ExperimentReport("sample", _echo(cfg, "sample"), cfg.seed)
    nuts = isinstance(kernel, NUTSKernel)
    trace = Table(["seed", "replica", "step", "orbit_len", "min_index", "stop_reason", "iota", "delta_h"])
    for step in range(1, cfg.n_transitions + 1):
        if nuts:
            x, info = kernel.step(x, gens, return_info=True)
            if cfg.trace:
                for r in range(cfg.n_replicas):
                    trace.add(cfg.seed, r, step, int(info.orbit_len[r]), int(info.min_index[r]),
                              STOP_REASONS[info.stop_code[r]], int(info.iota[r]), float(info.delta_h[r]))
        else:
            x = kernel.step(x, gens)
    if nuts and cfg.trace:
        report.tables["trace"] = trace
    radii = target.whitened_sq_radii(x)
    final = Table(["seed", "replica"] + [f"radius_block{b}" for b in range(target.n_blocks)])
    for r in range(cfg.n_replicas):
        final.add(cfg.seed, r, *[float(v) for v in radii[r]])
    report.tables["final"] = final
    ks = ex.radial_ks(target, x) if cfg.n_replicas > 1 else np.full(target.n_blocks, np.nan)
    report.summary = {"final_ks": ks, "mean_radii": radii.mean(axis=0)}
    if cfg.eps is not None:
        report.check("final_ks", float(np.max(ks)), cfg.eps, "<", "largest per-block radial KS at the end")
    return report


RUNNERS = {
    "predict": run_predict,
    "phase": run_phase,
    "concentration": run_concentration,
    "orbits": run_orbits,
    "contraction": run_contraction,
    "mixing": run_mixing,
    "sample": run_sample,
}


# -- argument handling --------------------------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uturnlab", description="NUTS/HMC experiments on Gaussian targets.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name, help=(schema.__doc__ or name).strip().splitlines()[0])
        p.add_argument("--config", help="JSON config file (or a previous report.json)")
        for field in schema.model_fields:
            flags = ["--" + field.replace("_", "-")] + _ALIASES.get(field, [])
            p.add_argument(*flags, dest=field, default=None, metavar="VALUE",
                           help=f"override config field {field!r}")
    return parser


def load_config(command: str, args: argparse.Namespace) -> _Base:
    data: dict = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"malformed JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be an object")
        if "rng_scheme" in raw and isinstance(raw.get("config"), dict):
            raw = raw["config"]
        raw = dict(raw)
        exp = raw.pop("experiment", command)
        if exp != command:
            raise ConfigError("experiment", f"config is for {exp!r}, not {command!r}")
        data.update(raw)
    schema = SCHEMAS[command]
    for field in schema.model_fields:
        value = getattr(args, field, None)
        if value is not None:
            data[field] = _parse_value(value)
    try:
        return schema.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = ".".join(str(p) for p in err["loc"]) or "config"
        raise ConfigError(loc, err["msg"]) from exc


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command
    try:
        cfg = load_config(command, args)
        with field_errors("threads"):
            threads = resolve_threads(cfg.threads)
        report = RUNNERS[command](cfg, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report.threads = threads
    outdir = Path(cfg.output or Path("uturnlab-out") / command)
    report.write(outdir)
    if report.headline:
        print(report.headline)
    for line in report.lines():
        print(line)
    status = "passed" if report.passed else "FAILED"
    print(f"{command}: {status} ({len(report.checks)} checks), report in {outdir / 'report.json'}")
    return EXIT_OK if report.passed else EXIT_FAIL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
