"""Command-line pipeline: simulate | morphometrics | calibrate | sensitivity
| pair | wasserstein-study.

Each run takes a JSON config (plus overriding flags), writes its outputs
into one directory together with the fully-resolved config and a manifest,
and is deterministic in (config, seed) for any fixed worker count (and
trace-equivalent across worker counts).  Exit codes: 0 success, 1 validation
error, 2 runtime failure, 3 partial (resumable) stop.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .distances import DistanceSpec, wasserstein_error_study
from .growth import ConfigurationError, GuidanceField, SomaSpec
from .models import GrowthModel, ToyGaussianModel, default_soma
from .morphometrics import (
    MORPHOMETRIC_IDS,
    MorphometricsError,
    extract,
    read_qoi_csv,
    write_qoi_csv,
)
from .parallel import default_workers
from .posterior import kde_marginals, pair_neurons, predictive_check
from .rng import spawn_seed
from .sensitivity import ISHIGAMI_SPACE, ParamSpace, ishigami, run_sa
from .smcabc import Prior, SmcConfig, run_smcabc
from .swc import parse_swc_file, select_subtree, write_swc

log = logging.getLogger("arborabc")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


class ConfigError(ValueError):
    pass


# -- config schema ----------------------------------------------------------

_PARAM_KEYS = {
    "p_bra", "R", "v", "r_min", "r0", "w1", "w2", "w3", "dt", "T",
    "L_max", "bifurcation_angle", "stub_length", "diameter", "max_agents",
}
_SOMA_KEYS = {"position", "radius", "neurites"}
_FIELD_KEYS = {"kind", "direction", "source", "amplitude"}
_DISTANCE_KEYS = {"kind", "p", "n_projections", "k_neighbors", "gamma",
                  "projection_seed"}
_SMC_KEYS = {"n_particles", "alpha", "m_prime", "budget", "distance", "r_hits",
             "ess_resample_fraction", "epsilon_target", "wall_clock_cap",
             "race_cap", "max_iterations"}
_MODEL_KEYS = {"model", "params", "soma", "field", "selection", "theta_names"}

_SCHEMA = {
    "seed": None,
    "workers": None,
    "out": None,
    "simulate": _MODEL_KEYS | {"n_neurons", "type_code", "write_swc"},
    "morphometrics": {"paths", "selection", "subtree_codes"},
    "calibrate": _MODEL_KEYS | {
        "toy", "observed", "prior", "smc", "predictive_m_prime",
        "kde_resolution", "resume",
    },
    "sensitivity": {"model", "params", "soma", "field", "selection",
                    "theta_names", "target", "space", "n_base", "m_prime"},
    "pair": {"data", "sim"},
    "wasserstein_study": {"dims", "sizes", "n_reps"},
}


def _check_keys(section: str, cfg: dict, allowed):
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys("config", cfg, _SCHEMA.keys())
    for section, allowed in _SCHEMA.items():
        if allowed is not None and section in cfg:
            if not isinstance(cfg[section], dict):
                raise ConfigError(f"section {section!r} must be an object")
            _check_keys(section, cfg[section], allowed)
    sub = cfg.get("calibrate", {})
    if "smc" in sub:
        _check_keys("calibrate.smc", sub["smc"], _SMC_KEYS)
        if "distance" in sub["smc"]:
            _check_keys("calibrate.smc.distance", sub["smc"]["distance"],
                        _DISTANCE_KEYS)
    for section in ("simulate", "calibrate", "sensitivity"):
        s = cfg.get(section, {})
        if "params" in s:
            _check_keys(f"{section}.params", s["params"], _PARAM_KEYS)
        if "soma" in s and s["soma"] is not None:
            _check_keys(f"{section}.soma", s["soma"], _SOMA_KEYS)
        if "field" in s and s["field"] is not None:
            _check_keys(f"{section}.field", s["field"], _FIELD_KEYS)
    return cfg


def _soma_from_cfg(cfg: dict | None, model: str) -> SomaSpec:
    if not cfg:
        return default_soma(model)
    neurites = tuple(
        (tuple(n["direction"]), float(n.get("resource", 1.0)))
        for n in cfg.get("neurites", [{"direction": [0, 0, 1], "resource": 1.0}])
    )
    return SomaSpec(
        position=tuple(cfg.get("position", (0.0, 0.0, 0.0))),
        radius=float(cfg.get("radius", 10.0)),
        neurites=neurites,
    )


def _field_from_cfg(cfg: dict | None) -> GuidanceField:
    if not cfg:
        return GuidanceField()
    return GuidanceField(
        kind=cfg.get("kind", "constant-gradient"),
        direction=tuple(cfg.get("direction", (0.0, 0.0, 1.0))),
        source=tuple(cfg.get("source", (0.0, 0.0, 0.0))),
        amplitude=float(cfg.get("amplitude", 1.0)),
    )


def _growth_model_from_cfg(cfg: dict) -> GrowthModel:
    model = cfg.get("model", "model2")
    from .models import model1_defaults, model2_defaults

    params = model1_defaults() if model == "model1" else model2_defaults()
    if cfg.get("params"):
        import dataclasses

        params = dataclasses.replace(
            params, **{k: v for k, v in cfg["params"].items()}
        )
    return GrowthModel(
        model=model,
        params=params,
        soma=_soma_from_cfg(cfg.get("soma"), model),
        guidance=_field_from_cfg(cfg.get("field")),
        selection=tuple(cfg.get("selection", MORPHOMETRIC_IDS)),
        theta_names=tuple(cfg.get("theta_names", ("p_bra", "R", "v"))),
    )


def _write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out: Path, command: str, seed: int, workers: int,
                    resolved: dict, outputs: list[str], extra: dict | None = None):
    manifest = {
        "command": command,
        "package": "arborabc",
        "version": __version__,
        "seed": seed,
        "workers": workers,
        "outputs": sorted(outputs),
    }
    if extra:
        manifest.update(extra)
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "resolved_config.json", resolved)


def _summary_table(path: Path, matrix: np.ndarray, names):
    qs = np.percentile(matrix, [25, 50, 75], axis=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["qoi", "mean", "std", "min", "q25", "median", "q75", "max"])
        for j, name in enumerate(names):
            col = matrix[:, j]
            w.writerow([
                name, repr(float(col.mean())), repr(float(col.std())),
                repr(float(col.min())), repr(float(qs[0, j])),
                repr(float(qs[1, j])), repr(float(qs[2, j])),
                repr(float(col.max())),
            ])


# -- subcommands ------------------------------------------------------------


def cmd_simulate(cfg: dict, out: Path, seed: int, workers: int) -> int:
    sub = cfg.get("simulate", {})
    model = _growth_model_from_cfg(sub)
    n_neurons = int(sub.get("n_neurons", 10))
    type_code = int(sub.get("type_code", 4 if model.model == "model2" else 3))
    write_files = bool(sub.get("write_swc", True))
    theta = [getattr(model.params, name) for name in model.theta_names]
    outputs = []
    rows = np.empty((n_neurons, model.n_qoi))
    for i in range(n_neurons):
        tree = model.simulate_neuron(theta, spawn_seed(seed, i))
        rows[i] = extract(tree, model.selection)
        if write_files:
            name = f"neuron_{i:05d}.swc"
            (out / name).write_text(write_swc(tree, type_code=type_code))
            outputs.append(name)
    write_qoi_csv(out / "qoi.csv", rows, model.selection)
    _summary_table(out / "qoi_summary.csv", rows, model.selection)
    outputs += ["qoi.csv", "qoi_summary.csv"]
    _write_manifest(out, "simulate", seed, workers, cfg, outputs,
                    {"n_neurons": n_neurons, "model": model.model})
    log.info("simulated %d neurons -> %s", n_neurons, out)
    return EXIT_OK


def cmd_morphometrics(cfg: dict, out: Path, seed: int, workers: int) -> int:
    sub = cfg.get("morphometrics", {})
    paths = [Path(p) for p in sub.get("paths", [])]
    if not paths:
        raise ConfigError("morphometrics.paths must list at least one SWC file")
    expanded: list[Path] = []
    for p in paths:
        if p.is_dir():
            expanded.extend(sorted(p.glob("*.swc")))
        else:
            expanded.append(p)
    selection = tuple(sub.get("selection", MORPHOMETRIC_IDS))
    codes = sub.get("subtree_codes")
    rows = []
    row_sources = []
    report_lines = []
    n_failed = 0
    for p in expanded:
        try:
            trees, report = parse_swc_file(p)
        except OSError as e:
            report_lines.append(f"{p}: unreadable ({e})")
            n_failed += 1
            continue
        if not report.ok:
            for v in report.violations:
                report_lines.append(f"{p}: {v}")
            n_failed += 1
            continue
        if not trees:
            report_lines.append(f"{p}: no trees")
            n_failed += 1
            continue
        for t_idx, tree in enumerate(trees):
            try:
                if codes:
                    tree = select_subtree(tree, codes)
                rows.append(extract(tree, selection))
                row_sources.append(f"{p}[{t_idx}]")
            except (ValueError, MorphometricsError) as e:
                report_lines.append(f"{p}[{t_idx}]: {e}")
                n_failed += 1
        report_lines.append(f"{p}: ok ({report.n_trees} trees, "
                            f"{report.n_records} records)")
    (out / "validation_report.txt").write_text("\n".join(report_lines) + "\n")
    outputs = ["validation_report.txt"]
    if rows:
        write_qoi_csv(out / "qoi.csv", np.vstack(rows), selection)
        with open(out / "sources.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "source"])
            for i, s in enumerate(row_sources):
                w.writerow([i, s])
        outputs += ["qoi.csv", "sources.csv"]
    _write_manifest(out, "morphometrics", seed, workers, cfg, outputs,
                    {"n_rows": len(rows), "n_failed": n_failed})
    if not rows:
        log.error("all input files failed validation")
        return EXIT_VALIDATION
    return EXIT_OK


def _write_kde_csv(path: Path, marginal):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if marginal.degenerate:
            w.writerow(["degenerate_at"])
            w.writerow([repr(marginal.location)])
            return
        w.writerow(["grid", "density"])
        for g, d in zip(marginal.grid, marginal.density):
            w.writerow([repr(float(g)), repr(float(d))])


def cmd_calibrate(cfg: dict, out: Path, seed: int, workers: int) -> int:
    sub = cfg.get("calibrate", {})
    if "toy" in sub and sub["toy"]:
        toy = sub["toy"]
        model = ToyGaussianModel(dim=int(toy.get("dim", 2)),
                                 off_diagonal=float(toy.get("off_diagonal", 0.2)))
        qoi_names = model.selection
    else:
        gmodel = _growth_model_from_cfg(sub)
        model = gmodel
        qoi_names = gmodel.selection
    if "observed" not in sub:
        raise ConfigError("calibrate.observed (QoI csv path) is required")
    observed, header = read_qoi_csv(sub["observed"])
    if tuple(header) != tuple(qoi_names):
        raise ConfigError(
            f"observed columns {header} do not match model QoIs {tuple(qoi_names)}"
        )
    prior_cfg = sub.get("prior")
    if not prior_cfg:
        raise ConfigError("calibrate.prior is required")
    prior = Prior(names=tuple(prior_cfg["names"]),
                  lo=tuple(float(v) for v in prior_cfg["lo"]),
                  hi=tuple(float(v) for v in prior_cfg["hi"]))
    smc_cfg = dict(sub.get("smc", {}))
    dist_cfg = smc_cfg.pop("distance", {})
    config = SmcConfig(distance=DistanceSpec(**dist_cfg), workers=workers,
                       **smc_cfg)
    trace = run_smcabc(prior, model, observed, config, seed,
                       checkpoint_dir=out, resume=bool(sub.get("resume", False)))
    trace.write_jsonl(out / "trace.jsonl")
    trace.write_particles_csv(out / "particles.csv")
    outputs = ["trace.jsonl", "particles.csv", "state.npz"]
    for marg in kde_marginals(trace.theta, trace.weights, names=prior.names,
                              grid_resolution=int(sub.get("kde_resolution", 512))):
        name = f"kde_{marg.name}.csv"
        _write_kde_csv(out / name, marg)
        outputs.append(name)
    pm = int(sub.get("predictive_m_prime", config.m_prime))
    check = predictive_check(trace.theta, trace.weights, model, observed,
                             pm, spawn_seed(seed, 23), qoi_names=qoi_names,
                             workers=workers)
    with open(out / "predictive_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["qoi", "data_mean", "data_std", "sim_mean", "sim_std"])
        s = check["summary"]
        for j, q in enumerate(s["qoi"]):
            w.writerow([q, repr(float(s["data_mean"][j])),
                        repr(float(s["data_std"][j])),
                        repr(float(s["sim_mean"][j])),
                        repr(float(s["sim_std"][j]))])
    outputs.append("predictive_summary.csv")
    for q, tables in check["marginals"].items():
        name = f"predictive_{q}.csv"
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["hist_center", "hist_density"])
            for c, dns in zip(tables["hist_centers"], tables["hist_density"]):
                w.writerow([repr(float(c)), repr(float(dns))])
        _write_kde_csv(out / f"predictive_{q}_data_kde.csv", tables["data_kde"])
        _write_kde_csv(out / f"predictive_{q}_sim_kde.csv", tables["sim_kde"])
        outputs += [name, f"predictive_{q}_data_kde.csv", f"predictive_{q}_sim_kde.csv"]
    _write_manifest(out, "calibrate", seed, workers, cfg, outputs, {
        "stop_reason": trace.stop_reason,
        "iterations": trace.n_iterations,
        "total_sims": trace.total_sims,
        "final_epsilon": None if np.isinf(trace.epsilon) else trace.epsilon,
    })
    log.info("calibration stopped (%s) after %d iterations, %d simulations",
             trace.stop_reason, trace.n_iterations, trace.total_sims)
    if trace.stop_reason in ("wall_clock", "max_iterations"):
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_sensitivity(cfg: dict, out: Path, seed: int, workers: int) -> int:
    sub = cfg.get("sensitivity", {})
    target = sub.get("target", "growth")
    if target == "ishigami":
        model = ishigami()
        space = ISHIGAMI_SPACE
    elif target == "growth":
        model = _growth_model_from_cfg(sub)
        space_cfg = sub.get("space")
        if space_cfg:
            space = ParamSpace(names=tuple(space_cfg["names"]),
                               lo=tuple(float(v) for v in space_cfg["lo"]),
                               hi=tuple(float(v) for v in space_cfg["hi"]))
        else:
            from .sensitivity import growth_param_space

            space = growth_param_space()
    else:
        raise ConfigError(f"unknown sensitivity target {target!r}")
    n_base = int(sub.get("n_base", 256))
    m_prime = int(sub.get("m_prime", 10))
    result, X, Y = run_sa(model, space, n_base, m_prime, seed, workers=workers)
    np.savetxt(out / "design.csv", X, delimiter=",",
               header=",".join(space.names), comments="")
    np.savetxt(out / "raw_expectations.csv", Y, delimiter=",",
               header=",".join(result.output_names), comments="")
    with open(out / "sobol_indices.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "output", "s1", "s1_ci95", "s_tot", "s_tot_ci95"])
        for i, pname in enumerate(result.param_names):
            for j, oname in enumerate(result.output_names):
                w.writerow([pname, oname,
                            repr(float(result.s1[i, j])),
                            repr(float(result.s1_ci[i, j])),
                            repr(float(result.s_tot[i, j])),
                            repr(float(result.s_tot_ci[i, j]))])
    _write_manifest(out, "sensitivity", seed, workers, cfg,
                    ["design.csv", "raw_expectations.csv", "sobol_indices.csv"],
                    {"n_base": result.meta["n_base"], "m_prime": m_prime,
                     "undefined_outputs": list(result.undefined_outputs)})
    return EXIT_OK


def cmd_pair(cfg: dict, out: Path, seed: int, workers: int) -> int:
    sub = cfg.get("pair", {})
    for key in ("data", "sim"):
        if key not in sub:
            raise ConfigError(f"pair.{key} (QoI csv path) is required")
    data, dh = read_qoi_csv(sub["data"])
    sim, sh = read_qoi_csv(sub["sim"])
    if tuple(dh) != tuple(sh):
        raise ConfigError(f"column mismatch: data {dh} vs sim {sh}")
    pairs = pair_neurons(data, sim)
    with open(out / "pairs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["data_index", "sim_index", "distance"])
        for i, j, dist in pairs:
            w.writerow([i, j, repr(dist)])
    _write_manifest(out, "pair", seed, workers, cfg, ["pairs.csv"],
                    {"n_pairs": len(pairs)})
    return EXIT_OK


def cmd_wasserstein_study(cfg: dict, out: Path, seed: int, workers: int) -> int:
    sub = cfg.get("wasserstein_study", {})
    dims = tuple(sub.get("dims", (1, 2, 4)))
    sizes = tuple(tuple(s) for s in sub.get("sizes", ((100, 100), (1000, 1000))))
    n_reps = int(sub.get("n_reps", 100))
    rows = wasserstein_error_study(dims=dims, sizes=sizes, n_reps=n_reps, seed=seed)
    with open(out / "wasserstein_error.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "n", "m", "rep", "w_true", "w_est", "rel_error"])
        for r in rows:
            w.writerow([r["dim"], r["n"], r["m"], r["rep"],
                        repr(r["w_true"]), repr(r["w_est"]), repr(r["rel_error"])])
    with open(out / "wasserstein_error_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "n", "m", "median_rel_error", "q25", "q75"])
        for d in dims:
            for n, m in sizes:
                errs = np.array([r["rel_error"] for r in rows
                                 if r["dim"] == d and r["n"] == n and r["m"] == m])
                q25, med, q75 = np.percentile(errs, [25, 50, 75])
                w.writerow([d, n, m, repr(float(med)), repr(float(q25)),
                            repr(float(q75))])
    _write_manifest(out, "wasserstein-study", seed, workers, cfg,
                    ["wasserstein_error.csv", "wasserstein_error_summary.csv"])
    return EXIT_OK


# -- entry point -------------------------------------------------------------

_COMMANDS = {
    "simulate": cmd_simulate,
    "morphometrics": cmd_morphometrics,
    "calibrate": cmd_calibrate,
    "sensitivity": cmd_sensitivity,
    "pair": cmd_pair,
    "wasserstein-study": cmd_wasserstein_study,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arborabc",
        description="Stochastic neuron growth simulation and SMC-ABC calibration.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", type=str, default=None, help="output directory")
    sub.choices["simulate"].add_argument("--n-neurons", type=int, default=None)
    sub.choices["simulate"].add_argument("--model", type=str, default=None,
                                         choices=["model1", "model2"])
    sub.choices["morphometrics"].add_argument("paths", nargs="*", default=[])
    sub.choices["morphometrics"].add_argument("--subtree-codes", type=int,
                                              nargs="*", default=None)
    sub.choices["calibrate"].add_argument("--observed", type=str, default=None)
    sub.choices["calibrate"].add_argument("--resume", action="store_true")
    sub.choices["sensitivity"].add_argument("--target", type=str, default=None,
                                            choices=["growth", "ishigami"])
    sub.choices["sensitivity"].add_argument("--model", type=str, default=None,
                                            choices=["model1", "model2"])
    sub.choices["sensitivity"].add_argument("--n-base", type=int, default=None)
    sub.choices["sensitivity"].add_argument("--m-prime", type=int, default=None)
    sub.choices["pair"].add_argument("--data", type=str, default=None)
    sub.choices["pair"].add_argument("--sim", type=str, default=None)
    sub.choices["wasserstein-study"].add_argument("--n-reps", type=int,
                                                  default=None)
    return parser


def _apply_overrides(cfg: dict, args) -> dict:
    cmd = args.command.replace("-", "_")
    section = dict(cfg.get(cmd, {}))
    if getattr(args, "n_neurons", None) is not None:
        section["n_neurons"] = args.n_neurons
    if getattr(args, "model", None) is not None:
        section["model"] = args.model
    if getattr(args, "paths", None):
        section["paths"] = list(args.paths)
    if getattr(args, "subtree_codes", None) is not None:
        section["subtree_codes"] = args.subtree_codes
    if getattr(args, "observed", None) is not None:
        section["observed"] = args.observed
    if getattr(args, "resume", False):
        section["resume"] = True
    if getattr(args, "target", None) is not None:
        section["target"] = args.target
    if getattr(args, "n_base", None) is not None:
        section["n_base"] = args.n_base
    if getattr(args, "m_prime", None) is not None:
        section["m_prime"] = args.m_prime
    if getattr(args, "data", None) is not None:
        section["data"] = args.data
    if getattr(args, "sim", None) is not None:
        section["sim"] = args.sim
    if getattr(args, "n_reps", None) is not None:
        section["n_reps"] = args.n_reps
    out = dict(cfg)
    out[cmd] = section
    return out


def main(argv=None) -> int:
    level = os.environ.get("ARBORABC_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        workers = (args.workers if args.workers is not None
                   else int(cfg.get("workers", default_workers())))
        out = Path(args.out if args.out is not None else cfg.get("out", "."))
        out.mkdir(parents=True, exist_ok=True)
        cfg["seed"] = seed
        cfg["workers"] = workers
        cfg["out"] = str(out)
        return _COMMANDS[args.command](cfg, out, seed, workers)
    except (ConfigError, ConfigurationError, ValueError) as e:
        log.error("%s", e)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001 - CLI boundary
        log.exception("run failed: %s", e)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
