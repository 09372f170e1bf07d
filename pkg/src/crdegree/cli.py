"""Command-line entry point: K ingestion, pipelines and JSON reports."""

import argparse
from dataclasses import dataclass, field, asdict
from decimal import Decimal, InvalidOperation
import hashlib
import math
import os
import sys

import numpy as np

from . import __version__
from .errors import CRDegreeError, FormatError, HypothesisError
from .heisenberg import QuadratureSpec

COMMANDS = ("verify-integrals", "bubbles", "degree", "reduce", "solve", "spectrum")
SCHEMA = 1


class DegreeOverflowError(FormatError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    k_file: str = None
    quadrature: QuadratureSpec = QuadratureSpec(rel_tol=1e-5)
    schedule: tuple = None
    tau: float = 1e-2
    grid: tuple = None
    box: tuple = None
    lambda0: float = 2.0
    output: str = None
    snapshot_dir: str = None
    seed: int = 0

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if self.k_file is not None and not os.path.isfile(self.k_file):
            raise FileNotFoundError(f"K file {self.k_file!r} does not exist")
        if not 0 < self.tau <= 0.5:
            raise ValueError("tau must lie in (0, 0.5]")
        if self.grid is not None and (len(self.grid) != 3 or min(self.grid) < 3):
            raise ValueError("grid needs three node counts >= 3")
        if self.box is not None and (len(self.box) != 3 or min(self.box) <= 0):
            raise ValueError("box needs three positive half extents")
        if self.lambda0 <= 0:
            raise ValueError("lambda0 must be positive")


# ---- K specification ----

def parse_k_text(text, cap=None):
    """Monomial list 'c i j k l' (c x1^i x2^j x3^k x4^l), '#' comments."""
    from .sphere import DEGREE_CAP

    cap = DEGREE_CAP if cap is None else cap
    coeffs = {}
    for n, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 5:
            raise FormatError(f"line {n}: expected 'c i j k l', got {line.strip()!r}")
        try:
            c = Decimal(parts[0])
        except InvalidOperation:
            raise FormatError(f"line {n}: coefficient {parts[0]!r} is not a decimal number") from None
        if not c.is_finite():
            raise FormatError(f"line {n}: coefficient must be finite")
        try:
            e = tuple(int(s, 10) for s in parts[1:])
        except ValueError:
            raise FormatError(f"line {n}: exponents must be nonnegative integers") from None
        if min(e) < 0:
            raise FormatError(f"line {n}: exponents must be nonnegative integers")
        if sum(e) > cap:
            raise DegreeOverflowError(f"line {n}: monomial degree {sum(e)} exceeds the cap {cap}")
        coeffs[e] = coeffs.get(e, Decimal(0)) + c
    return {e: float(c) for e, c in coeffs.items()}


def parse_k_spec(path, cap=None, check=True):
    from .morse import check_positive
    from .sphere import DEGREE_CAP, ManifoldFn

    with open(path, encoding="utf-8") as fh:
        coeffs = parse_k_text(fh.read(), cap)
    K = ManifoldFn(coeffs, DEGREE_CAP if cap is None else cap)
    if check:
        check_positive(K)
    return K


def format_k(K):
    lines = [f"{_num(c)} {' '.join(str(v) for v in e)}" for e, c in K.coefficients.items()]
    return "\n".join(lines) + "\n"


# ---- deterministic JSON ----

def _num(x):
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return "null"
    s = format(x, ".17g")
    return s if any(ch in s for ch in ".en") else s + ".0"


def dumps(obj, indent=0):
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, str):
        import json
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def config_hash(cfg: RunConfig):
    d = asdict(cfg)
    d.pop("output")
    d.pop("snapshot_dir")
    if cfg.k_file is not None:
        with open(cfg.k_file, "rb") as fh:
            d["k_file"] = hashlib.sha256(fh.read()).hexdigest()
    return hashlib.sha256(dumps(d).encode()).hexdigest()


# ---- pipelines ----

def _load_k(cfg):
    if cfg.k_file is None:
        raise ValueError(f"{cfg.command} needs --k")
    return parse_k_spec(cfg.k_file)


def _verify_integrals(cfg):
    from .bubble import bubble_integrals

    exact = {"int_U3": 2 * np.pi, "int_U4": np.pi ** 2 / 4, "int_r2_U4": np.pi ** 2 / 4}
    vals = dict(zip(exact, bubble_integrals(cfg.quadrature)))
    out = {}
    for k, v in vals.items():
        dev = abs(v - exact[k]) / exact[k]
        out[k] = {"value": v, "exact": exact[k], "rel_error": dev, "pass": dev <= 1e-4}
    return {"integrals": out}


def _bubbles(cfg):
    from .bubble import Bubble, calibrate_kappa, moment_scaling, pde_residuals
    from .heisenberg import HPoint
    from .sphere import green_constant, mass_constant, random_points, SpherePoint

    rng = np.random.default_rng(cfg.seed)
    x, y, t = rng.uniform(-2, 2, (3, 100))
    base = float(np.max(pde_residuals(Bubble(), x, y, t)))
    conj = []
    for _ in range(10):
        c = HPoint(*rng.uniform(-1, 1, 3))
        lam = float(np.exp(rng.uniform(np.log(0.5), np.log(4.0))))
        conj.append(float(np.max(pde_residuals(Bubble(center=c, lam=lam), x, y, t))))
    moments = {str(a): moment_scaling(a) for a in (0.5, 1.0, 2.0, 3.0)}
    pts = [SpherePoint.from_real(v) for v in random_points(3, rng)]
    masses = [mass_constant(p) for p in pts]
    return {
        "kappa": calibrate_kappa(),
        "identity_residual": base,
        "conjugated_residuals": conj,
        "moment_exponents": moments,
        "green_constant": green_constant(),
        "green_leading_coeffs": [m.leading_coeff for m in masses],
        "mass_constants": [m.constant_term for m in masses],
    }


def _crit_json(cp):
    return {
        "location": cp.location.real(),
        "k_value": cp.k_value,
        "morse_index": cp.morse_index,
        "hessian_eigs": list(cp.hessian_eigs),
        "delta_b_k": cp.delta_b_k,
        "mass": cp.mass,
        "grad_residual": cp.grad_residual,
    }


def degree_report_json(rep):
    from .morse import condition_one

    return {
        "critical_points": [dict(_crit_json(c), condition_one=condition_one(c)) for c in rep.critical_points],
        "admissible_subsets": [
            {"indices": list(s.indices), "mu": s.mu, "cluster_sign": s.cluster_sign} for s in rep.admissible_subsets
        ],
        "total_degree": rep.total_degree,
        "existence": rep.existence,
    }


def _degree(cfg):
    from .interaction import total_degree

    K = _load_k(cfg)
    return {"k": format_k(K), "degree": degree_report_json(total_degree(K, seed=cfg.seed))}


def _reduce(cfg):
    from .interaction import build_matrix, total_degree
    from .reduction import ReducedProblem, amplitude_estimate, reduced_hessian, solve_reduced

    K = _load_k(cfg)
    rep = total_degree(K, seed=cfg.seed)
    taus = [cfg.tau, cfg.tau / 2, cfg.tau / 4]
    runs = []
    for s in rep.admissible_subsets:
        if s.mu <= 0:
            continue
        m = build_matrix([rep.critical_points[i] for i in s.indices])
        steps = []
        for tau in taus:
            prob = ReducedProblem.from_subset(m, tau)
            sol = solve_reduced(prob)
            amp = amplitude_estimate(prob)
            steps.append({
                "tau": tau,
                "lambdas": sol.lambdas,
                "scaled_lambdas": sol.scaled_lambdas,
                "hessian_eigs": np.linalg.eigvalsh(reduced_hessian(sol.lambdas, prob)),
                "in_box": sol.in_box,
                "amplitudes": amp.values,
                "amplitude_band": amp.band,
            })
        sc = np.array([st["scaled_lambdas"] for st in steps])
        drift = float(np.max(np.abs(np.diff(sc, axis=0)) / np.abs(sc[1:])))
        runs.append({"indices": list(s.indices), "mu": s.mu, "steps": steps, "scaled_drift": drift})
    return {"total_degree": rep.total_degree, "reduced_runs": runs}


def _flat_k(K):
    if K is None:
        return 1.0
    from .sphere import NORTH, inverse_chart_xyt

    def Kf(x, y, t):
        q = inverse_chart_xyt(NORTH, x, y, t)
        return K(*q)
    return Kf


def _solve(cfg):
    from .bubble import U_xyt, exact_amplitude
    from .fd_solver import DEFAULT_SCHEDULE, Field, Grid, blowup_diagnostics, continuation, step_records, write_snapshot

    K = parse_k_spec(cfg.k_file) if cfg.k_file else None
    Kf = _flat_k(K)
    grid = Grid(cfg.box or (1.0, 1.0, 1.0), *(cfg.grid or (33, 33, 33)))
    k0 = float(Kf(np.zeros(1), np.zeros(1), np.zeros(1))[0]) if callable(Kf) else Kf
    lam, a = cfg.lambda0, exact_amplitude(k0)
    bd = Field.from_function(grid, lambda x, y, t: a * lam * U_xyt(lam * x, lam * y, lam * lam * t))
    schedule = cfg.schedule or DEFAULT_SCHEDULE
    sols = continuation(Kf, grid, bd, schedule=schedule, initial=bd)
    diag = blowup_diagnostics(sols, Kf)
    if cfg.snapshot_dir:
        os.makedirs(cfg.snapshot_dir, exist_ok=True)
        for n, (u, tau) in enumerate(sols):
            write_snapshot(os.path.join(cfg.snapshot_dir, f"step_{n:02d}.hfld"), u, 3.0 - tau)
    return {
        "grid": {"box": list(grid.box), "shape": list(grid.shape), "spacing": list(grid.spacing)},
        "schedule": list(schedule),
        "steps": step_records(sols, diag),
        "growth_exponent": diag.growth_exponent,
    }


def _spectrum(cfg):
    from .fd_solver import Grid, conformal_operator, linearized_spectrum_check

    grid = Grid(cfg.box or (1.0, 1.0, 1.0), *(cfg.grid or (32, 32, 32)))
    vals, vecs, lam1, psi = linearized_spectrum_check(grid)
    _, _, I, _ = conformal_operator(grid)
    q = psi.values.ravel()[I]
    v = vecs[:, 0]
    overlap = abs(v @ q) / (np.linalg.norm(v) * np.linalg.norm(q))
    return {
        "grid": {"box": list(grid.box), "shape": list(grid.shape)},
        "lambda_1": lam1,
        "eigenvalues": vals,
        "negative_count": int(np.sum(vals < 0)),
        "overlap_with_psi1": overlap,
        "local_degree": -1 if int(np.sum(vals < 0)) % 2 else 1,
    }


PIPELINES = {
    "verify-integrals": _verify_integrals,
    "bubbles": _bubbles,
    "degree": _degree,
    "reduce": _reduce,
    "solve": _solve,
    "spectrum": _spectrum,
}


def report(cfg: RunConfig):
    body = PIPELINES[cfg.command](cfg)
    return {"schema": SCHEMA, "command": cfg.command, "version": __version__, "config_hash": config_hash(cfg),
            "seed": cfg.seed, "result": body}


def run(cfg: RunConfig, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        text = dumps(report(cfg)) + "\n"
    except HypothesisError as e:
        print(f"hypothesis failure: {e}", file=stderr)
        return 2
    except (CRDegreeError, ValueError, OSError, np.linalg.LinAlgError) as e:
        print(f"error: {e}", file=stderr)
        return 1
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    return 0


def _floats(s, n=None):
    v = tuple(float(x) for x in s.split(","))
    if n is not None and len(v) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated values")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="crdegree", description="Degree counting for prescribed Webster curvature on S^3.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--k", dest="k_file", help="K specification (monomial list)")
    ap.add_argument("--rel-tol", type=float, default=1e-5)
    ap.add_argument("--tau", type=float, default=1e-2)
    ap.add_argument("--grid", type=lambda s: tuple(int(x) for x in s.split(",")))
    ap.add_argument("--box", type=lambda s: _floats(s, 3))
    ap.add_argument("--schedule", type=_floats)
    ap.add_argument("--lambda0", type=float, default=2.0)
    ap.add_argument("--out")
    ap.add_argument("--snapshot-dir")
    ap.add_argument("--seed", type=int, default=0)
    return ap


def config_from_args(args):
    return RunConfig(
        command=args.command, k_file=args.k_file, quadrature=QuadratureSpec(rel_tol=args.rel_tol),
        schedule=args.schedule, tau=args.tau, grid=args.grid, box=args.box, lambda0=args.lambda0,
        output=args.out, snapshot_dir=args.snapshot_dir, seed=args.seed,
    )


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
