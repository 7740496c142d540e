"""Command-line driver for multi-species Fokker-Planck relaxation runs.

    kingfp run CONFIG [--out DIR] [--dt X | --adaptive] [--no-enforce] [--t-end T]
    kingfp study CONFIG --axis {dt,n2,NK} --levels L1 L2 ... [--out DIR]

Configurations are INI files; see ``configs/two_species.cfg`` for a worked example.
Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

import argparse
import configparser
from dataclasses import dataclass, replace
from pathlib import Path
import sys
import warnings

import numpy as np

from . import fprs
from .diagnostics import (RunRecord, convergence_order, equilibrium_targets, fitted_slope, l2_relative,
                          relaxation_rate)
from .kfe import KfeControls, KingComponent
from .moments import SpeciesState, entropy
from .timeint import (MOMENT_SET, CollisionModel, StepFailure, TimeControls, advance, block_grids)

CONFIG_DIR = Path(__file__).parent / "configs"
MOMENT_KEYS = [(j, l) for j, l in MOMENT_SET if (l == 0 and j >= 4) or (l == 1 and j >= 3)]

PLOT_SCRIPT = """\
# Plot temperatures and conservation errors from {csv}.
import matplotlib.pyplot as plt
from kingfp.diagnostics import read_csv

d = read_csv("{csv}")
fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True)
for name in {names!r}:
    ax1.plot(d["t"], d["T_" + name], label=name)
ax1.set_ylabel("T (keV)")
ax1.legend()
for col in ("dn_s", "dI_s", "dK_s"):
    ax2.semilogy(d["t"], abs(d[col]) + 1e-300, label=col)
ax2.set_xlabel("t / tau0")
ax2.legend()
fig.savefig("{png}")
"""


class ConfigError(ValueError):
    pass


@dataclass
class SpeciesSpec:
    name: str
    m: float
    Z: float
    n: float
    T: float
    uhat: float = 0.0
    king: tuple = ()

    def state(self):
        king = self.king or None
        return SpeciesState.from_temperature(self.m, self.Z, self.n, self.T, self.uhat, self.name, king)


@dataclass
class RunConfig:
    species: list
    ln_lambda: np.ndarray
    model_grid: dict
    kfe: KfeControls
    time: TimeControls
    t_end: float
    stop_ds: float = 0.0
    tau0: float = 0.0
    tau_pair: tuple = (0, 1)
    source: str = ""

    def tau0_seconds(self):
        """tau0 from the config or the initial relaxation time of tau_pair."""
        if self.tau0 > 0:
            return self.tau0
        a, b = self.tau_pair
        sa, sb = self.species[a], self.species[b]
        nu = relaxation_rate(sa.m, sa.Z, sa.T, sb.m, sb.Z, sb.n, sb.T, self.ln_lambda[a][b])
        return 1.0 / nu

    def model(self):
        return CollisionModel(self.ln_lambda, fprs.gamma_constant(self.tau0_seconds()), **self.model_grid)


def _get(section, key, kind, default=None, where=""):
    if key not in section:
        if default is None:
            raise ConfigError(f"{where}: missing key '{key}' in [{section.name}]")
        return default
    raw = section[key]
    try:
        if kind is bool:
            return section.getboolean(key)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: [{section.name}] {key} = {raw!r} is not a valid {kind.__name__}") from exc


def _parse_king(text, where):
    comps = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            nh, uh, sg = (float(x) for x in part.split(":"))
            comps.append(KingComponent(nh, uh, sg))
        except ValueError as exc:
            raise ConfigError(f"{where}: bad King component {part!r}; expected nhat:uhat:sigma") from exc
    return tuple(comps)


def parse_config(text, source="<string>"):
    """RunConfig from INI text; errors name the section and key at fault."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    species = []
    for sec in cp.sections():
        if not sec.startswith("species."):
            continue
        s = cp[sec]
        name = sec.split(".", 1)[1]
        spec = SpeciesSpec(name, _get(s, "m", float, where=source), _get(s, "Z", float, where=source),
                           _get(s, "n", float, where=source), _get(s, "T", float, where=source),
                           _get(s, "uhat", float, 0.0, source),
                           _parse_king(s.get("king", ""), source))
        if not (spec.m > 0 and spec.n > 0 and spec.T > 0):
            raise ConfigError(f"{source}: [{sec}] needs m, n and T positive")
        species.append(spec)
    if not species:
        raise ConfigError(f"{source}: no [species.*] sections")
    names = [s.name for s in species]
    ns = len(species)

    lnl = np.full((ns, ns), 10.0)
    if cp.has_section("lnlambda"):
        sec = cp["lnlambda"]
        lnl[:] = _get(sec, "default", float, 10.0, source)
        for key in sec:
            if key == "default":
                continue
            pair = key.split("-")
            if len(pair) != 2 or any(p not in names for p in pair):
                raise ConfigError(f"{source}: [lnlambda] key {key!r} is not 'a-b' with known species")
            a, b = names.index(pair[0]), names.index(pair[1])
            lnl[a, b] = lnl[b, a] = _get(sec, key, float, where=source)

    g = cp["grid"] if cp.has_section("grid") else cp["DEFAULT"]
    model_grid = dict(n2=_get(g, "n2", int, 7, source), N0=_get(g, "N0", int, 7, source),
                      vhat_max=_get(g, "vhat_max", float, 10.0, source))

    k = cp["kfe"] if cp.has_section("kfe") else cp["DEFAULT"]
    try:
        nk = _get(k, "NK", int, 1, source)
        kfe = KfeControls(NK_init=nk, NK_min=1, NK_max=_get(k, "NK_max", int, nk, source),
                          scheme=_get(k, "scheme", str, "L01jd2NK", source),
                          rtol_n=_get(k, "rtol_n", float, 0.1, source))
    except ValueError as exc:
        raise ConfigError(f"{source}: [kfe] {exc}") from exc

    t = cp["time"] if cp.has_section("time") else cp["DEFAULT"]
    try:
        time = TimeControls(dt_init=_get(t, "dt", float, 2.0**-5, source),
                            mode=_get(t, "mode", str, "fixed", source),
                            enforce_conservation=_get(t, "enforce", bool, True, source),
                            N_in=_get(t, "N_in", int, 10, source),
                            ratio_dtk=_get(t, "ratio_dtk", float, 1.1, source),
                            ratio_Mj=_get(t, "ratio_Mj", float, 0.01, source),
                            adapt_grid=_get(t, "adapt_grid", bool, True, source))
    except ValueError as exc:
        raise ConfigError(f"{source}: [time] {exc}") from exc

    r = cp["run"] if cp.has_section("run") else cp["DEFAULT"]
    t_end = _get(r, "t_end", float, where=source)
    if not t_end > 0:
        raise ConfigError(f"{source}: [run] t_end must be positive")
    pair = r.get("tau_pair", f"{names[0]}-{names[min(1, ns - 1)]}").split("-")
    if len(pair) != 2 or any(p not in names for p in pair):
        raise ConfigError(f"{source}: [run] tau_pair must name two species as 'a-b'")
    return RunConfig(species, lnl, model_grid, kfe, time, t_end,
                     stop_ds=_get(r, "stop_ds", float, 0.0, source),
                     tau0=_get(r, "tau0", float, 0.0, source),
                     tau_pair=(names.index(pair[0]), names.index(pair[1])), source=source)


def load_config(path):
    p = Path(path)
    if not p.exists() and (CONFIG_DIR / p.name).exists():
        p = CONFIG_DIR / p.name
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, str(p))


def total_entropy(states, grids):
    return sum(entropy(s, grid=g) for s, g in zip(states, grids))


@dataclass
class RunOutcome:
    record: RunRecord
    states: list
    steps: list
    failure: str = ""


def simulate(cfg, keep_steps=False):
    """Run one configuration; returns a RunOutcome (failure text set on solver failure)."""
    model = cfg.model()
    states = [s.state() for s in cfg.species]
    initial = list(states)
    record = RunRecord([s.name for s in cfg.species], MOMENT_KEYS)
    grids0 = block_grids(states, model, cfg.time)
    record.append(0.0, 0.0, states, initial, total_entropy(states, grids0))
    steps = []
    last = {"states": states}

    def on_step(k, t, step):
        last["states"] = step.states
        res = [fit.residual for fit, _ in step.fits]
        record.append(t, step.dt, step.states, initial, total_entropy(step.states, step.rates.grids),
                      step.iterations, res, step.moment_errors)
        if keep_steps:
            steps.append(step)
        if cfg.stop_ds > 0 and k >= 2:
            return abs(record.ds[-1]) <= cfg.stop_ds
        return False

    failure = ""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            advance(states, model, cfg.time, cfg.kfe, cfg.t_end, on_step)
        except StepFailure as exc:
            failure = str(exc)
    return RunOutcome(record, last["states"], steps, failure)


def _header(cfg):
    u_inf, T_inf = equilibrium_targets([s.state() for s in cfg.species])
    return (f"config: {cfg.source}\n"
            f"tau0 = {cfg.tau0_seconds():.17g} s; times in units of tau0\n"
            f"units: n in 1e20 m^-3, u and vth in c, T in keV\n"
            f"equilibrium: u_inf = {u_inf:.17g}, T_inf = {T_inf:.17g}")


def write_outputs(outcome, cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "record.csv"
    outcome.record.write_csv(csv_path, _header(cfg))
    (out / "plot_record.py").write_text(PLOT_SCRIPT.format(csv=csv_path.name, names=outcome.record.names,
                                                           png="record.png"))
    if outcome.failure:
        (out / "failure.txt").write_text(outcome.failure + "\n")
    return csv_path


def _apply_overrides(cfg, args):
    tc = cfg.time
    if getattr(args, "dt", None) is not None:
        tc = replace(tc, dt_init=args.dt, mode="fixed")
    if getattr(args, "adaptive", False):
        tc = replace(tc, mode="adaptive")
    if getattr(args, "no_enforce", False):
        tc = replace(tc, enforce_conservation=False)
    cfg.time = tc
    if getattr(args, "t_end", None) is not None:
        cfg.t_end = args.t_end
    return cfg


def cmd_run(args):
    cfg = _apply_overrides(load_config(args.config), args)
    outcome = simulate(cfg)
    csv_path = write_outputs(outcome, cfg, args.out)
    rec = outcome.record
    print(f"levels: {len(rec.t) - 1}, t = {rec.t[-1]:.6g}")
    for a, name in enumerate(rec.names):
        print(f"  {name}: T = {rec.T[-1][a]:.10g} keV, u = {rec.u[-1][a]:.6g} c")
    print(f"  max dn {max(rec.dn):.3e}, dI {max(rec.dI):.3e}, dK {max(rec.dK):.3e}, "
          f"min ds {min(rec.ds):.3e}")
    print(f"wrote {csv_path}")
    if outcome.failure:
        print(f"solver failure: {outcome.failure}", file=sys.stderr)
        return 3
    return 0


def parse_level(text):
    """Float level; '2^-5' style powers are accepted."""
    if "^" in text:
        base, exp = text.split("^")
        return float(base) ** float(exp)
    return float(text)


def study_table(cfg, axis, levels):
    """Rows (level, error, extra) for one convergence study.

    dt: relative temperature deviation of the first species and L2 of f_0
    at t_end against the last (finest) level. n2: final energy error.
    NK: largest j whose moment error stays <= rtol_NK over the run.
    """
    rows = []
    if axis == "dt":
        runs = []
        for dt in levels:
            c = replace(cfg, time=replace(cfg.time, dt_init=dt, mode="fixed"))
            out = simulate(c)
            runs.append(out)
        ref = runs[-1]
        for dt, out in zip(levels[:-1], runs[:-1]):
            if out.failure:
                rows.append((dt, float("nan"), float("nan"), out.failure))
                continue
            rdt = abs(out.record.T[-1][0] / ref.record.T[-1][0] - 1.0)
            model = cfg.model()
            g = block_grids(ref.states, model, cfg.time)[0]
            f = out.states[0].amplitudes(g.field_nodes * ref.states[0].vth / out.states[0].vth, 0)[0][0]
            f *= (out.states[0].n / out.states[0].vth**3) / (ref.states[0].n / ref.states[0].vth**3)
            fr = ref.states[0].amplitudes(g, 0)[0][0]
            rows.append((dt, rdt, l2_relative(f, fr), ""))
    elif axis == "n2":
        for n2 in levels:
            c = replace(cfg, model_grid=dict(cfg.model_grid, n2=int(n2), N0=int(n2)))
            out = simulate(c)
            rows.append((int(n2), max(out.record.dK), float("nan"), out.failure))
    elif axis == "NK":
        for nk in levels:
            c = replace(cfg, kfe=replace(cfg.kfe, NK_init=int(nk), NK_max=int(nk)))
            out = simulate(c)
            errs = np.array(out.record.moment_error[1:]) if len(out.record.t) > 1 else np.zeros((1, 1, 1))
            worst = errs.max(axis=(0, 1)) if errs.size else np.zeros(len(MOMENT_KEYS))
            conv = 2
            for (j, l), e in zip(MOMENT_KEYS, worst):
                if l == 0 and e <= cfg.kfe.rtol_NK:
                    conv = max(conv, j)
            rows.append((int(nk), float(conv), float(worst[0]) if worst.size else 0.0, out.failure))
    else:
        raise ConfigError(f"unknown study axis {axis!r}")
    return rows


def cmd_study(args):
    cfg = _apply_overrides(load_config(args.config), args)
    levels = [parse_level(x) for x in args.levels]
    if args.axis == "dt" and len(levels) < 3:
        raise ConfigError("a dt study needs at least two levels plus the reference (last)")
    rows = study_table(cfg, args.axis, levels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"study_{args.axis}.csv"
    with open(path, "w") as fh:
        fh.write(f"# study of {cfg.source} along {args.axis}\n")
        fh.write("# columns: level error extra failure\n")
        fh.write("level,error,extra,failure\n")
        for lv, e, x, fail in rows:
            fh.write(f"{lv:.17g},{e:.17g},{x:.17g},{fail}\n")
    for lv, e, x, fail in rows:
        print(f"{lv:>12.6g}  {e:.6e}  {x:.6e}  {fail}")
    good = [(lv, e) for lv, e, _, fail in rows if not fail and e == e]
    if args.axis == "dt" and len(good) >= 2:
        orders, mean = convergence_order([e for _, e in good])
        print(f"pairwise orders {['%.3f' % o for o in orders]}, mean {mean:.3f}, "
              f"fitted slope {fitted_slope([lv for lv, _ in good], [e for _, e in good]):.3f}")
    if args.axis == "n2" and len(good) >= 2:
        orders, mean = convergence_order([e for _, e in good])
        print(f"pairwise orders {['%.3f' % o for o in orders]}, mean {mean:.3f}")
    print(f"wrote {path}")
    return 3 if any(fail for *_, fail in rows) else 0


def build_parser():
    p = argparse.ArgumentParser(prog="kingfp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one configuration")
    r.add_argument("config")
    r.add_argument("--out", default="kingfp_out")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--dt", type=parse_level)
    g.add_argument("--adaptive", action="store_true")
    r.add_argument("--no-enforce", action="store_true")
    r.add_argument("--t-end", type=float)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("study", help="convergence study along one axis")
    s.add_argument("config")
    s.add_argument("--axis", choices=("dt", "n2", "NK"), required=True)
    s.add_argument("--levels", nargs="+", required=True)
    s.add_argument("--out", default="kingfp_out")
    s.add_argument("--no-enforce", action="store_true")
    s.add_argument("--t-end", type=float)
    s.set_defaults(func=cmd_study)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
