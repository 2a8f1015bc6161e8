"""Command-line front end: one JSON job in, one JSON report out.

A job looks like ``{"command": "synthesize", "parameters": {...}}``. Complex
numbers are written as ``[re, im]`` pairs (plain reals are accepted too).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np
from scipy.stats import binomtest

from . import __version__, plotting
from .beamsplitter import BeamSplitterParams, bs_element, bs_unitary_block
from .cats import (
    CatParams,
    cat_fidelity,
    cat_like_state,
    cat_norm_numerical,
    cat_normalization_closed_form,
    cat_probability_asymptotic,
    cat_probability_exact,
    coherent_superposition,
    default_cutoff,
    limit_phase,
)
from .errors import NullStateError, ZeroProbabilityError
from .fock import DensityMatrix, make_state, fidelity
from .overlap import (
    joint_probability,
    measure_overlap,
    measurement_fidelity,
    measurement_fidelity_closed_form,
    plan_measurement,
    sample_outcomes,
    scheme_from_roots,
)
from .synthesis import (
    generation_probability_closed_form,
    plan_from_roots,
    plan_synthesis,
    run_generation,
    state_from_roots,
)

EXIT_SCHEMA = 2
EXIT_NUMERIC = 3
CUTOFF_ENV = "BSARRAY_CUTOFF"
NORM_SLACK = 1e-9

_COMPLEX = {
    "oneOf": [
        {"type": "number"},
        {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
    ]
}
_COMPLEX_LIST = {"type": "array", "items": _COMPLEX, "minItems": 1}
_BEAM_SPLITTER = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"T": _COMPLEX, "R": _COMPLEX},
            "required": ["T", "R"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "transmissivity": {"type": "number", "minimum": 0, "maximum": 1},
                "phase_T": {"type": "number"},
                "phase_R": {"type": "number"},
            },
            "required": ["transmissivity"],
            "additionalProperties": False,
        },
    ]
}
_TARGET = {"target": _COMPLEX_LIST, "roots": {"type": "array", "items": _COMPLEX}}
_SIGNAL = {
    "type": "object",
    "properties": {
        "state": _COMPLEX_LIST,
        "populations": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "matrix": {"type": "array", "items": _COMPLEX_LIST, "minItems": 1},
    },
    "minProperties": 1,
    "maxProperties": 1,
    "additionalProperties": False,
}
_GROUPING = {"group_equal_roots": {"type": "boolean"}}
_COUNTS = {"type": "integer", "minimum": 0}


def _command(properties: dict, required: list, one_of_target: bool = False) -> dict:
    schema = {
        "type": "object",
        "properties": properties,
        "required": required,
        "additionalProperties": False,
    }
    if one_of_target:
        schema["oneOf"] = [{"required": ["target"]}, {"required": ["roots"]}]
    return schema


PARAMETER_SCHEMAS = {
    "synthesize": _command(
        {"beam_splitter": _BEAM_SPLITTER, **_TARGET, **_GROUPING,
         "root_order": {"enum": ["magnitude", "probability"]}},
        ["beam_splitter"], one_of_target=True),
    "overlap": _command(
        {"beam_splitter": _BEAM_SPLITTER, **_TARGET, **_GROUPING, "signal": _SIGNAL},
        ["beam_splitter", "signal"], one_of_target=True),
    "sample": _command(
        {"beam_splitter": _BEAM_SPLITTER, **_TARGET, **_GROUPING, "signal": _SIGNAL,
         "shots": {"type": "integer", "minimum": 1}, "seed": {"type": "integer"}},
        ["beam_splitter", "signal"], one_of_target=True),
    "cat": _command(
        {"n": {"type": "integer", "minimum": 0}, "alpha": _COMPLEX, "beta": _COMPLEX,
         "beam_splitter": _BEAM_SPLITTER,
         "sweep_n": {"type": "array", "items": {"type": "integer", "minimum": 1}}},
        ["n", "alpha", "beta"]),
    "bs-element": _command(
        {"beam_splitter": _BEAM_SPLITTER,
         "elements": {"type": "array", "minItems": 1,
                      "items": {"type": "array", "items": _COUNTS, "minItems": 4, "maxItems": 4}}},
        ["beam_splitter", "elements"]),
}
JOB_SCHEMA = {
    "type": "object",
    "properties": {"command": {"enum": sorted(PARAMETER_SCHEMAS)}, "parameters": {"type": "object"}},
    "required": ["command", "parameters"],
    "additionalProperties": False,
}


class JobError(ValueError):
    """The job is malformed or physically inconsistent."""


# ----------------------------------------------------------------- input


def validate_job(job) -> None:
    try:
        jsonschema.validate(job, JOB_SCHEMA)
        jsonschema.validate(job["parameters"], PARAMETER_SCHEMAS[job["command"]])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise JobError(f"{where}: {exc.message}") from None


def _complex(value) -> complex:
    if isinstance(value, list):
        return complex(value[0], value[1])
    return complex(value)


def _complex_list(values) -> list[complex]:
    return [_complex(v) for v in values]


def beam_splitter(spec: dict) -> BeamSplitterParams:
    """Parameters from a job; ``|T|^2 + |R|^2`` must be 1 within 1e-9 and is then renormalized."""
    if "transmissivity" in spec:
        return BeamSplitterParams.from_transmissivity(
            spec["transmissivity"], spec.get("phase_T", 0.0), spec.get("phase_R", 0.0))
    T, R = _complex(spec["T"]), _complex(spec["R"])
    total = abs(T) ** 2 + abs(R) ** 2
    if abs(total - 1.0) > NORM_SLACK:
        raise JobError(f"|T|^2 + |R|^2 = {total!r}, expected 1")
    scale = math.sqrt(total)
    return BeamSplitterParams(T / scale, R / scale)


def _target(params: dict, cutoff: int | None):
    """Normalized target state and its roots, when given explicitly."""
    if "roots" in params:
        roots = _complex_list(params["roots"])
        size = len(roots) if cutoff is None else max(cutoff, len(roots))
        return state_from_roots(roots, size), roots
    return make_state(_complex_list(params["target"]), normalize=True), None


def _signal(spec: dict) -> DensityMatrix:
    if "state" in spec:
        return DensityMatrix.from_pure(make_state(_complex_list(spec["state"]), normalize=True))
    if "populations" in spec:
        pops = np.asarray(spec["populations"], dtype=float)
        if pops.sum() <= 0:
            raise JobError("signal populations sum to zero")
        return DensityMatrix.from_diagonal(pops / pops.sum())
    rows = [_complex_list(r) for r in spec["matrix"]]
    if any(len(r) != len(rows) for r in rows):
        raise JobError("signal matrix must be square")
    return DensityMatrix(np.array(rows))


# ---------------------------------------------------------------- output


def _pair(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


def _pairs(values) -> list[list[float]]:
    return [_pair(complex(z)) for z in values]


def _format_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    text = format(x, ".17g")
    return text if any(c in text for c in ".en") else text + ".0"


def dumps(obj, indent: int = 2, level: int = 0) -> str:
    """JSON with sorted keys and every float at 17 significant digits."""
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(obj[k], indent, level + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _format_float(float(obj))
    if isinstance(obj, complex):
        return dumps(_pair(obj), indent, level)
    return json.dumps(str(obj))


# --------------------------------------------------------------- commands


def _synthesize(params: dict, opts) -> tuple[dict, list, dict]:
    bs = beam_splitter(params["beam_splitter"])
    target, roots = _target(params, None)
    grouped = params.get("group_equal_roots", False)
    if roots is not None and not grouped:
        plan = plan_from_roots(roots, bs)
    else:
        plan = plan_synthesis(target, bs, grouped, opts.tolerance, params.get("root_order", "magnitude"))
    cutoff = opts.cutoff if opts.cutoff is not None else plan.photons + 10
    state, probability, report = run_generation(plan, cutoff)
    closed = generation_probability_closed_form(plan.roots, plan.leading_amplitude, bs, plan.multiplicities)
    result = {
        "roots": _pairs(plan.roots),
        "multiplicities": list(plan.multiplicities),
        "alphas": _pairs(plan.displacements),
        "leading_amplitude": _pair(plan.leading_amplitude),
        "probability_brute_force": probability,
        "probability_closed_form": closed,
        "closed_form_relative_deviation": abs(closed - probability) / probability if probability else None,
        "fidelity": report.fidelity,
        "leakage": report.leakage,
        "cutoff": cutoff,
        "final_displacement": _pair(report.final_displacement),
    }
    rows = [["stage", "root_re", "root_im", "multiplicity", "alpha_re", "alpha_im"]]
    for k, (r, d, a) in enumerate(zip(plan.stage_roots, plan.multiplicities, plan.displacements), start=1):
        rows.append([k, r.real, r.imag, d, a.real, a.imag])
    last = plan.displacements[-1]
    rows.append([len(plan.multiplicities) + 1, "", "", 0, last.real, last.imag])
    figures = {
        "photon_numbers.png": lambda p: plotting.photon_distributions(
            p, {"target": target.resized(cutoff).photon_distribution(), "generated": state.photon_distribution()},
            "synthesis output"),
        "amplitudes.png": lambda p: plotting.complex_points(
            p, {"stage roots": plan.stage_roots, "displacements": plan.displacements}, "synthesis plan"),
    }
    return result, rows, figures


def _measurement(params: dict, opts):
    bs = beam_splitter(params["beam_splitter"])
    target, roots = _target(params, None)
    grouped = params.get("group_equal_roots", False)
    if roots is not None and not grouped:
        scheme = scheme_from_roots(roots, bs, paper_literal=opts.paper_literal)
    else:
        scheme = plan_measurement(target, bs, grouped, opts.tolerance, opts.paper_literal)
    rho = _signal(params["signal"])
    cutoff = max(rho.cutoff, len(scheme.target_roots))
    if opts.cutoff is not None:
        cutoff = max(cutoff, opts.cutoff)
    return bs, target, scheme, rho, cutoff


def _overlap(params: dict, opts):
    bs, target, scheme, rho, cutoff = _measurement(params, opts)
    estimate = measure_overlap(rho, scheme, cutoff)
    joint = joint_probability(rho, scheme, cutoff)
    fid = measurement_fidelity(scheme, cutoff)
    closed = measurement_fidelity_closed_form(scheme)
    direct = fidelity(target.resized(cutoff), rho.resized(cutoff))
    result = {
        "roots": _pairs(scheme.target_roots),
        "multiplicities": list(scheme.multiplicities),
        "alphas": _pairs(scheme.alphas),
        "constructor_fidelity": scheme.constructor_fidelity,
        "joint_probability": joint,
        "measurement_fidelity": fid,
        "measurement_fidelity_closed_form": closed,
        "closed_form_relative_deviation": abs(closed - fid) / fid,
        "overlap_estimate": estimate,
        "overlap_direct": direct,
        "cutoff": cutoff,
    }
    rows = [["stage", "alpha_re", "alpha_im", "multiplicity"]]
    rows += [[k, a.real, a.imag, d] for k, (a, d) in enumerate(zip(scheme.alphas, scheme.multiplicities), start=1)]
    figures = {
        "references.png": lambda p: plotting.complex_points(
            p, {"roots": scheme.stage_roots, "reference amplitudes": scheme.alphas}, "overlap scheme"),
        "photon_numbers.png": lambda p: plotting.photon_distributions(
            p, {"target": target.resized(cutoff).photon_distribution(),
                "signal": np.clip(np.diag(rho.resized(cutoff).elements).real, 0, None)}, "overlap inputs"),
    }
    return result, rows, figures


def _sample(params: dict, opts):
    bs, target, scheme, rho, cutoff = _measurement(params, opts)
    shots = opts.shots if opts.shots is not None else params.get("shots", 100_000)
    seed = opts.seed if opts.seed is not None else params.get("seed", 0)
    counts = sample_outcomes(rho, scheme, shots, seed, cutoff, opts.workers)
    exact = joint_probability(rho, scheme, cutoff)
    ci = binomtest(counts.coincidence_count, shots).proportion_ci(0.95, method="wilson")
    result = {
        "alphas": _pairs(scheme.alphas),
        "multiplicities": list(scheme.multiplicities),
        "pattern": list(counts.pattern),
        "shots": shots,
        "seed": seed,
        "coincidence_count": counts.coincidence_count,
        "frequency": counts.frequency,
        "joint_probability": exact,
        "confidence_interval_95": [float(ci.low), float(ci.high)],
        "sigma": math.sqrt(exact * (1 - exact) / shots),
        "histograms": [_trim(h) for h in counts.histograms],
        "cutoff": cutoff,
    }
    rows = [["detector", "count", "shots"]]
    for k, hist in enumerate(result["histograms"], start=1):
        rows += [[k, q, c] for q, c in enumerate(hist)]
    figures = {
        "detectors.png": lambda p: plotting.detector_histograms(p, result["histograms"], counts.pattern),
    }
    return result, rows, figures


def _trim(hist) -> list[int]:
    values = list(hist)
    while len(values) > 1 and values[-1] == 0:
        values.pop()
    return values


def _rescaled_pair(alpha: complex, beta: complex, n: int) -> tuple[complex, complex]:
    # keep centre and direction, set |alpha - beta|^2 = 4n
    centre, diff = (alpha + beta) / 2, alpha - beta
    unit = diff / abs(diff) if diff != 0 else 1.0
    half = math.sqrt(n) * unit
    return centre + half, centre - half


def _cat(params: dict, opts):
    n = params["n"]
    alpha, beta = _complex(params["alpha"]), _complex(params["beta"])
    p = CatParams(n, alpha, beta)
    cutoff = opts.cutoff if opts.cutoff is not None else default_cutoff(p)
    state = cat_like_state(p, cutoff)
    numerical = cat_norm_numerical(p, cutoff)
    closed = cat_normalization_closed_form(p)
    result = {
        "gammas": _pairs(p.gammas),
        "amplitudes": _pairs(state.amplitudes),
        "leakage": state.leakage,
        "normalization_closed_form": closed,
        "normalization_numerical": numerical,
        "normalization_relative_deviation": abs(closed - numerical) / numerical,
        "fidelity": cat_fidelity(n, alpha, beta, cutoff),
        "fidelity_phase_matched": cat_fidelity(n, alpha, beta, cutoff, phase_matched=True),
        "limit_phase": limit_phase(alpha, beta),
        "cutoff": cutoff,
    }
    rows, sweep = [], None
    if "beam_splitter" in params and n >= 1:
        bs = beam_splitter(params["beam_splitter"])
        exact = cat_probability_exact(n, alpha, beta, bs, cutoff)
        asym = cat_probability_asymptotic(n, bs)
        result.update(probability_exact=exact, probability_asymptotic=asym, probability_ratio=exact / asym)
        if params.get("sweep_n"):
            rows.append(["n", "fidelity", "probability_exact", "probability_asymptotic", "ratio"])
            sweep = {"n": [], "fidelity": [], "ratio": []}
            for m in params["sweep_n"]:
                a, b = _rescaled_pair(alpha, beta, m)
                pe = cat_probability_exact(m, a, b, bs)
                pa = cat_probability_asymptotic(m, bs)
                f = cat_fidelity(m, a, b)
                rows.append([m, f, pe, pa, pe / pa])
                sweep["n"].append(m)
                sweep["fidelity"].append(f)
                sweep["ratio"].append(pe / pa)
            result["sweep"] = [dict(zip(rows[0], r)) for r in rows[1:]]
    superposition = coherent_superposition(alpha, beta, cutoff)
    figures = {
        "photon_numbers.png": lambda path: plotting.photon_distributions(
            path, {"cat-like": state.photon_distribution(), "|alpha>+|beta>": superposition.photon_distribution()},
            f"n = {n}"),
    }
    if sweep:
        figures["sweep.png"] = lambda path: plotting.cat_sweep(path, sweep["n"], sweep["fidelity"], sweep["ratio"])
    return result, rows, figures


def _bs_element(params: dict, opts):
    bs = beam_splitter(params["beam_splitter"])
    values, rows = [], [["m", "q", "n", "p", "re", "im"]]
    for m, q, n, p in params["elements"]:
        z = bs_element(bs, m, q, n, p)
        values.append({"m": m, "q": q, "n": n, "p": p, "value": _pair(z)})
        rows.append([m, q, n, p, z.real, z.imag])
    top = max(n + p for _, _, n, p in params["elements"])
    block = bs_unitary_block(bs, top).elements
    figures = {"block.png": lambda path: plotting.block_magnitudes(path, block, top)}
    return {"elements": values, "T": _pair(bs.T), "R": _pair(bs.R)}, rows, figures


COMMANDS = {
    "synthesize": _synthesize,
    "overlap": _overlap,
    "sample": _sample,
    "cat": _cat,
    "bs-element": _bs_element,
}


def run_job(job: dict, opts) -> tuple[dict, list, dict]:
    """Validate and execute ``job``; returns (report, csv rows, figure writers)."""
    validate_job(job)
    result, rows, figures = COMMANDS[job["command"]](job["parameters"], opts)
    options = {
        "cutoff": opts.cutoff,
        "seed": opts.seed,
        "shots": opts.shots,
        "tolerance": opts.tolerance,
        "paper_literal": opts.paper_literal,
    }
    report = {"version": __version__, "input": job, "options": options, "command": job["command"],
              "result": result}
    return report, rows, figures


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bsarray", description="Simulate conditional state engineering at beam splitter arrays.")
    parser.add_argument("job", help="JSON job file, or - for standard input")
    parser.add_argument("--cutoff", type=int, help=f"Fock cutoff (default: ${CUTOFF_ENV} or per command)")
    parser.add_argument("--seed", type=int, help="random seed for sampling")
    parser.add_argument("--shots", type=int, help="number of Monte Carlo shots")
    parser.add_argument("--tolerance", type=float, default=1e-8, help="root clustering tolerance")
    parser.add_argument("--paper-literal", action="store_true",
                        help="use the literal reference-amplitude weights |T|^(2l-1)")
    parser.add_argument("--csv", type=Path, metavar="PATH", help="also write a table of per-stage or sweep rows")
    parser.add_argument("--figures", type=Path, metavar="DIR", help="write PNG figures into DIR")
    parser.add_argument("--workers", type=int, default=1, help="threads for sampling (result is unchanged)")
    return parser


def _load(source: str):
    text = sys.stdin.read() if source == "-" else Path(source).read_text()
    return json.loads(text)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    opts = parser.parse_args(argv)
    if opts.cutoff is None and os.environ.get(CUTOFF_ENV):
        try:
            opts.cutoff = int(os.environ[CUTOFF_ENV])
        except ValueError:
            parser.error(f"${CUTOFF_ENV} must be an integer")
    if opts.cutoff is not None and opts.cutoff < 0:
        parser.error("--cutoff must be nonnegative")
    if opts.shots is not None and opts.shots < 1:
        parser.error("--shots must be positive")
    if opts.workers < 1:
        parser.error("--workers must be positive")
    try:
        job = _load(opts.job)
        report, rows, figures = run_job(job, opts)
    except (OSError, json.JSONDecodeError, JobError, NullStateError) as exc:
        print(f"bsarray: invalid job: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ZeroProbabilityError, ArithmeticError) as exc:
        print(f"bsarray: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"bsarray: invalid job: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    if opts.figures is not None:
        report["figures"] = sorted(write(opts.figures / name) for name, write in figures.items())
    if opts.csv is not None and rows:
        opts.csv.parent.mkdir(parents=True, exist_ok=True)
        with opts.csv.open("w", newline="") as fh:
            csv.writer(fh).writerows([[_format_float(v) if isinstance(v, float) else v for v in r] for r in rows])
    sys.stdout.write(dumps(report) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
