"""Config-driven experiment runner.

Subcommands ``spark``, ``identify``, ``necessity`` and ``cover`` read an
INI file (one section per subcommand; command-line flags override it),
write CSV files to ``--out`` and print a short summary. Every random draw
derives from ``--seed`` through keyed Philox streams, so reruns are
byte-identical.

Exit codes: 0 success, 1 criterion not met, 2 config error,
3 budget exceeded, 4 rank deficient, 5 plan not overspread,
6 no cover found, 7 packing failed.
"""
import argparse
import configparser
import csv
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import (BudgetExceeded, NoCoverFound, PackingFailed,
                     PlanNotOverspread, RankDeficient)
from .geometry import (best_cover, format_supports, measure, pack_offsets,
                       parse_rect_unions, parse_supports)
from .identification import (PilotSet, random_channel, recover, relative_error,
                             simulate_output, stability_bounds)
from .necessity import (SlantedMatrixSpec, kernel_tail_bound, composition_instability,
                        composition_setup, kernel_vector, tail_sum)
from .spark import DEFAULT_BUDGET, IdentifierSequence, full_spark_check, search_identifier
from .util import complex_gaussian, is_prime, make_rng

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
EXIT_BUDGET, EXIT_RANK, EXIT_NOT_OVERSPREAD = 3, 4, 5
EXIT_NO_COVER, EXIT_PACKING = 6, 7

# stream keys below the seed, one per kind of draw
_PILOT, _CHANNEL, _NOISE = 0, 1, 2


class ConfigError(Exception):
    pass


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


class Params:
    """Flag values layered over one config section."""

    def __init__(self, args, section):
        self.args, self.section = args, section

    def _raw(self, key):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        return self.section.get(key)

    def get(self, key, kind=str, default=None, required=False):
        raw = self._raw(key)
        if raw is None:
            if required:
                raise ConfigError(f"missing required parameter {key!r}")
            return default
        try:
            if kind is bool:
                return raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes", "on")
            return kind(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc

    def ints(self, key, default):
        raw = self._raw(key)
        if raw is None:
            return list(default)
        try:
            return [int(v) for v in str(raw).replace(",", " ").split()]
        except ValueError as exc:
            raise ConfigError(f"bad integer list for {key!r}: {raw!r}") from exc

    def path(self, key, required=True):
        raw = self.get(key, required=required)
        if raw is None:
            return None
        p = Path(raw)
        if not p.is_absolute() and self.args.config:
            p = Path(self.args.config).parent / p
        if not p.exists():
            raise ConfigError(f"{key} file {str(p)!r} not found")
        return p


def load_section(args):
    if not args.config:
        return {}
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys such as L and K are case sensitive
    try:
        with open(args.config) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return dict(parser[args.command]) if parser.has_section(args.command) else {}


def _out_dir(args):
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _warn_not_prime(L):
    if not is_prime(L):
        print(f"warning: L not prime (L={L}); full spark is not guaranteed",
              file=sys.stderr)


def _pilot(L, seed):
    return IdentifierSequence(complex_gaussian(make_rng(seed, _PILOT), L))


# -- subcommands ------------------------------------------------------------------

def run_spark(args, prm):
    L = prm.get("L", int, required=True)
    K = prm.get("K", int, 1)
    mode = prm.get("mode", str, "exhaustive")
    budget = prm.get("budget", int, DEFAULT_BUDGET)
    trials = prm.get("trials", int, 10)
    seed = prm.get("seed", int, 0)
    if L < 1 or K < 1 or trials < 1 or mode not in ("exhaustive", "sampled"):
        raise ConfigError("need L, K, trials >= 1 and mode exhaustive|sampled")
    _warn_not_prime(L)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        c, rep = search_identifier(L, K, trials=trials, rng_seed=seed,
                                   mode=mode, budget=budget)
    out = _out_dir(args)
    write_csv(out / "spark_summary.csv",
              ["L", "K", "mode", "subsets_checked", "min_sigma_min", "threshold",
               "norm_A", "full_spark", "witness"],
              [[L, K, mode, rep.subsets_checked, rep.min_sigma_min, rep.threshold,
                rep.norm_A, int(rep.full_spark), rep.witness]])
    write_csv(out / "spark_pilot.csv", ["index", "re", "im"],
              [[i, float(z.real), float(z.imag)] for i, z in enumerate(c.c)])
    if mode == "exhaustive":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            full = full_spark_check(c, K, budget=budget, keep_sigmas=True)
        write_csv(out / "spark_subsets.csv", ["subset", "sigma_min"],
                  zip(map(tuple, full.subsets.tolist()), full.sigmas.tolist()))
    verdict = "full spark" if rep.full_spark else "NOT full spark"
    print(f"spark L={L} K={K} {mode}: {rep.subsets_checked} subsets, "
          f"min sigma_min={rep.min_sigma_min:.4e} (threshold {rep.threshold:.1e}): {verdict}")
    return EXIT_OK if rep.full_spark else EXIT_FAIL


def _load_plan(prm):
    rows = parse_supports(prm.path("plan").read_text())
    return pack_offsets(rows)


def run_identify(args, prm):
    plan = _load_plan(prm)
    trials = prm.get("trials", int, 100)
    noise = prm.get("noise", float, 0.0)
    seed = prm.get("seed", int, 0)
    _warn_not_prime(plan.L)
    c = _pilot(plan.L, seed)
    pilots = PilotSet.for_plan(plan, c)
    A_est, B_est = stability_bounds(plan, c)
    rows, coeff_rows, worst = [], [], 0.0
    for t in range(trials):
        ch = random_channel(plan, make_rng(seed, _CHANNEL, t))
        y = simulate_output(ch, pilots, noise, make_rng(seed, _NOISE, t))
        res = recover(y, plan, c)
        err = relative_error(ch, res.recovered)
        norm_y = float(np.sqrt(sum(np.linalg.norm(v) ** 2 for v in y)))
        worst = max(worst, err, float(res.residual.max()))
        rows.append([t, err, float(res.residual.max()), ch.hs_norm(), norm_y,
                     res.A_est, res.B_est])
        for (m, n), vec in sorted(res.recovered.items()):
            for (mu, nu), z in zip(plan.supports[m][n].sorted_cells(), vec):
                coeff_rows.append([t, m, n, mu, nu, float(z.real), float(z.imag),
                                   float(res.residual[m])])
    out = _out_dir(args)
    write_csv(out / "identify_trials.csv",
              ["trial", "relative_error", "residual", "norm_H", "norm_y", "A_est", "B_est"],
              rows)
    write_csv(out / "identify_coeffs.csv",
              ["trial", "m", "n", "cell_m", "cell_n", "re", "im", "residual"], coeff_rows)
    write_csv(out / "identify_plan.csv", ["input", "offset"], enumerate(plan.offsets))
    errs = np.array([r[1] for r in rows])
    print(f"identify: {plan.M}x{plan.N} plan K={plan.K} L={plan.L}, offsets {plan.offsets}, "
          f"A_est={A_est:.4f} B_est={B_est:.4f}")
    print(f"  {trials} trials, noise={noise}: relative error mean {errs.mean():.3e}, "
          f"max {errs.max():.3e}")
    if noise == 0 and worst > 1e-10:
        return EXIT_FAIL
    return EXIT_OK


def run_necessity(args, prm):
    lam = prm.get("lam", float, 2.0)
    Lp = prm.get("poly_degree", int, 1)
    dp = prm.get("decay_power", int, Lp + 3)
    K1s = prm.ints("K1", [1, 2, 3, 4])
    tail_K1 = prm.ints("tail_K1", [2, 4, 8, 16])
    seed = prm.get("seed", int, 0)
    plan, row = None, prm.get("row", int, 0)
    cells = prm.get("cell_samples", int, 15)
    plan_path = prm.path("plan", required=False)
    if plan_path is not None:
        plan = pack_offsets(parse_supports(plan_path.read_text()))
        if plan.row_count(row) <= plan.L:
            raise PlanNotOverspread(
                f"row {row} has {plan.row_count(row)} cells <= L={plan.L}")
    out = _out_dir(args)
    ok = True

    rows, norms = [], []
    for K1 in K1s:
        spec = SlantedMatrixSpec(lam, Lp, dp, K1)
        _, nm = kernel_vector(spec)
        bound = kernel_tail_bound(spec)
        norms.append(nm)
        ok &= nm**2 <= bound
        rows.append([K1, spec.N, spec.N_tilde, nm, nm**2, bound])
    ok &= all(b < a for a, b in zip(norms, norms[1:]))
    write_csv(out / "slanted.csv",
              ["K1", "N", "N_tilde", "norm_Mx", "norm_Mx_sq", "tail_bound"], rows)
    print(f"slanted lam={lam} Lp={Lp} decay={dp}: norm_Mx "
          + ", ".join(f"{v:.3e}" for v in norms))

    w = lambda k: (1.0 + k) ** (-dp)
    tails = tail_sum(w, Lp, tail_K1)
    write_csv(out / "tail_sum.csv", ["K1", "tail"], zip(tail_K1, tails.tolist()))
    print("tail sums " + ", ".join(f"{v:.3e}" for v in tails))

    if plan is not None:
        proto, gabor = composition_setup(plan, row, cells)
        rep = composition_instability(plan, PilotSet.for_plan(plan, _pilot(plan.L, seed)),
                                      proto, gabor, row=row)
        write_csv(out / "composition.csv",
                  ["section_size", "sigma_min", "sigma_max", "bound_rhs"],
                  [[s.section_size, s.sigma_min, s.sigma_max, s.bound_rhs]
                   for s in rep.sections])
        write_csv(out / "composition_meta.csv", ["key", "value"],
                  sorted(rep.metadata.items()))
        ok &= rep.decreasing and rep.unstable
        print(f"composition J={rep.cells} L={rep.L}: sigma_min/sigma_max "
              + ", ".join(f"{s.ratio:.3e}" for s in rep.sections)
              + (" (unstable)" if rep.unstable else " (stable)"))
    return EXIT_OK if ok else EXIT_FAIL


def run_cover(args, prm):
    K_max = prm.get("K_max", int, 10)
    L_max = prm.get("L_max", int, 101)
    margin = prm.get("margin", float, 0.0)
    rect_path = prm.path("rects", required=False)
    if rect_path is not None:
        K, L, covers = best_cover(parse_rect_unions(rect_path.read_text()),
                                  K_max, L_max, margin)
    else:
        covers = parse_supports(prm.path("supports").read_text())
        K, L = covers[0][0].K, covers[0][0].L
    _warn_not_prime(L)
    plan = pack_offsets(covers)
    out = _out_dir(args)
    write_csv(out / "cover_rows.csv", ["row", "cells", "measure"],
              [[m, plan.row_count(m), sum(measure(S) for S in row)]
               for m, row in enumerate(covers)])
    write_csv(out / "cover_offsets.csv", ["input", "offset"], enumerate(plan.offsets))
    (out / "cover_supports.txt").write_text(format_supports(covers))
    print(f"cover K={K} L={L}: row measures "
          + ", ".join(f"{sum(measure(S) for S in row):.4f}" for row in covers)
          + f"; offsets {plan.offsets}")
    return EXIT_OK


COMMANDS = {"spark": run_spark, "identify": run_identify,
            "necessity": run_necessity, "cover": run_cover}


def build_parser():
    ap = argparse.ArgumentParser(prog="mimo-ident", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI file with a [%s] section" % name)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory for CSV files (default .)")
        p.add_argument("--trials", type=int)
        p.add_argument("--noise", type=float)
        if name == "spark":
            p.add_argument("--L", type=int)
            p.add_argument("--K", type=int)
            p.add_argument("--mode", choices=("exhaustive", "sampled"))
            p.add_argument("--budget", type=int)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        prm = Params(args, load_section(args))
        if prm.get("seed", int, 0) < 0 or prm.get("seed", int, 0) >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return COMMANDS[args.command](args, prm)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except RankDeficient as exc:
        print(f"rank deficient: row {exc.row} ({exc})", file=sys.stderr)
        return EXIT_RANK
    except PlanNotOverspread as exc:
        print(f"plan not overspread: {exc}", file=sys.stderr)
        return EXIT_NOT_OVERSPREAD
    except NoCoverFound as exc:
        print(f"no cover found: {exc}", file=sys.stderr)
        return EXIT_NO_COVER
    except PackingFailed as exc:
        print(f"packing failed: {exc}", file=sys.stderr)
        return EXIT_PACKING
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
