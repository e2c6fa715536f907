"""Batch command-line front end.

Every command reads an optional INI-style config (sections ``[process]``,
``[train]``, ``[sample]``, ``[data]``, ``[model]``), writes machine-readable
artifacts under ``--out`` and exits with 0 on success, 1 when a check or run
fails and 2 on usage, config or checkpoint errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments as ex
from .analytic import GMMParams
from .approximator import (
    LOSS_HEADS,
    MLPApproximator,
    TabularApproximator,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .distributions import DiscreteDistribution, compare, discretize_gmm, load_letter_e
from .ehrenfest import EhrenfestSpec
from .errors import CheckpointError, DomainError, NumericError, TrainingError
from .jump_core import RateSchedule
from .reversal import score_to_ratio
from .sampler import AnalyticScoreSource, ExactRateSource, ModelRateSource, SamplerConfig, tau_leap_sample

log = logging.getLogger("ehrenfest_mjp")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    pass


# --- config ----------------------------------------------------------------


class Settings:
    """Typed view on a ConfigParser with per-key fallbacks."""

    def __init__(self, cp: configparser.ConfigParser, seed: int | None):
        self.cp = cp
        self.seed_override = seed

    def get(self, section, key, fallback, kind=str):
        if not self.cp.has_option(section, key):
            return fallback
        raw = self.cp.get(section, key).strip()
        try:
            if kind is bool:
                return self.cp.getboolean(section, key)
            if kind is tuple:
                return tuple(int(v) for v in raw.replace(",", " ").split())
            if kind is list:
                return [v.strip() for v in raw.split(",") if v.strip()]
            return kind(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None

    def seed(self, section="train") -> int:
        if self.seed_override is not None:
            return self.seed_override
        return self.get(section, "seed", 0, int)

    def schedule(self) -> RateSchedule:
        kind = self.get("process", "schedule", "constant")
        if kind == "constant":
            return RateSchedule.constant(self.get("process", "rate", 1.0, float))
        if kind == "ddpm":
            return RateSchedule.ddpm(self.get("process", "beta_min", 0.1, float), self.get("process", "beta_max", 20.0, float))
        if kind == "cosine":
            return RateSchedule.cosine(self.get("process", "cap", 500.0, float))
        raise ConfigError(f"unknown schedule {kind!r}")

    def spec(self, S=16, T=1.0, t_min=0.01) -> EhrenfestSpec:
        return EhrenfestSpec(
            self.get("process", "S", S, int),
            self.get("process", "T", T, float),
            self.schedule(),
            self.get("process", "t_min", t_min, float),
        )

    def target(self, S: int):
        """Data distribution from ``[data]``; returns (DiscreteDistribution, GMMParams or None)."""
        kind = self.get("data", "target", "uniform")
        if kind == "letter_e":
            if S != 32:
                raise ConfigError("letter_e needs S = 32")
            return load_letter_e(), None
        if kind == "gmm":
            gmm = GMMParams.bimodal(self.get("data", "separation", 1.5, float), self.get("data", "variance", 0.25, float))
            return discretize_gmm(gmm, S), gmm
        if kind == "uniform":
            return DiscreteDistribution.uniform(S, self.get("data", "d", 1, int)), None
        if kind == "binomial":
            return DiscreteDistribution.binomial(S), None
        if kind == "point_mass":
            return DiscreteDistribution.point_mass(S, self.get("data", "x0", S // 2, int)), None
        raise ConfigError(f"unknown data target {kind!r}")


def read_settings(path: str | None, seed: int | None) -> Settings:
    cp = configparser.ConfigParser()
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"config parse error: {exc}") from None
    return Settings(cp, seed)


# --- artifact writers ------------------------------------------------------


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=float) + "\n")


def write_histograms(path: Path, snapshots: dict, S: int, d: int) -> None:
    """Rows (t, state[, state2], count) for every visited cell, descending t."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "state", "count"] if d == 1 else ["t", "state", "state2", "count"])
        for t in sorted(snapshots, reverse=True):
            states = np.asarray(snapshots[t]).reshape(len(snapshots[t]), -1)
            counts = np.zeros((S + 1,) * d, dtype=np.int64)
            np.add.at(counts, tuple(states.T), 1)
            for idx in zip(*np.nonzero(counts)):
                w.writerow([repr(float(t)), *map(int, idx), int(counts[idx])])


def write_loss_trace(path: Path, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


# --- commands --------------------------------------------------------------


def cmd_validate(args, st: Settings, out: Path) -> int:
    S = st.spec(S=16).S  # also rejects a malformed [process] section
    quick = st.get("validate", "quick", False, bool)
    bridge = score_to_ratio
    if args.mutate == "bridge-sign":

        def bridge(score, S):
            return score_to_ratio(-np.asarray(score), S)

    results = ex.run_validation(S, bridge=bridge, quick=quick)
    write_json(out / "validation.json", ex.report_dicts(results))
    for r in results:
        print(f"{r.status.upper():4s} {r.check}: {r.metric:.3g} (tol {r.tolerance:g}) {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_gmm_demo(args, st: Settings, out: Path) -> int:
    gmm = GMMParams.bimodal(st.get("data", "separation", 1.5, float), st.get("data", "variance", 0.25, float))
    S = st.get("process", "S", 100, int)
    T = st.get("process", "T", 2.0, float)
    t_min = st.get("process", "t_min", 0.01, float)
    record = tuple(t for t in (T, T / 2, T / 4, T / 8, T / 20) if t >= t_min)
    res = ex.gmm_demo(
        S=S,
        T=T,
        t_min=t_min,
        tau=st.get("sample", "tau", 1e-3, float),
        n=st.get("sample", "n", 100_000, int),
        seed=st.seed("sample"),
        gmm=gmm,
        record=record,
        workers=args.threads,
    )
    snaps = dict(res.snapshots)
    write_histograms(out / "gmm_histograms.csv", snaps, S, 1)
    res.target.to_csv(out / "gmm_target.csv")
    ok = res.tv < 0.05 and res.prior_tv < 0.02
    metrics = {"tv": res.tv, "ks": res.ks, "prior_tv": res.prior_tv, "seconds": res.seconds, "status": "pass" if ok else "fail"}
    write_json(out / "gmm_metrics.json", metrics)
    print(json.dumps(metrics))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_letter_e(args, st: Settings, out: Path) -> int:
    base = ex.LetterEConfig()
    losses = st.get("train", "losses", ["gauss", "taylor", "ou"], list)
    summary = []
    for loss in losses:
        if loss not in LOSS_HEADS:
            raise ConfigError(f"unknown loss {loss!r}")
        cfg = ex.LetterEConfig(
            T=st.get("process", "T", base.T, float),
            t_min=st.get(f"train.{loss}", "t_min", st.get("process", "t_min", ex.default_letter_e_t_min(loss), float), float),
            schedule=st.get("process", "schedule", base.schedule),
            steps=st.get("train", "steps", base.steps, int),
            batch=st.get("train", "batch", base.batch, int),
            lr=st.get("train", "lr", base.lr, float),
            lr_final=st.get("train", "lr_final", base.lr_final, float),
            hidden=st.get("model", "hidden", base.hidden, tuple),
            tau=st.get("sample", "tau", base.tau, float),
            n_samples=st.get("sample", "n", base.n_samples, int),
            seed=st.seed(),
            workers=args.threads,
        )
        res = ex.run_letter_e(loss, cfg)
        save_checkpoint(out / f"letter_e_{loss}.ckpt", res.approximator, {"loss": loss, "S": 32, "T": cfg.T, "t_min": cfg.t_min, "schedule": cfg.schedule})
        write_loss_trace(out / f"letter_e_{loss}_loss.csv", res.losses)
        write_histograms(out / f"letter_e_{loss}_samples.csv", {cfg.t_min: res.samples}, 32, 2)
        row = {
            "loss": loss,
            "tv": res.tv,
            "ks": res.ks,
            "t_min": cfg.t_min,
            "train_seconds": res.train_seconds,
            "sample_seconds": res.sample_seconds,
            "status": "pass" if res.tv < 0.15 else "fail",
        }
        print(json.dumps(row), flush=True)
        summary.append(row)
    write_json(out / "letter_e_metrics.json", summary)
    return EXIT_OK if all(r["status"] == "pass" for r in summary) else EXIT_FAIL


def _build_approximator(st: Settings, loss: str, spec: EhrenfestSpec, d: int, seed: int):
    kind = st.get("model", "kind", "mlp")
    heads = LOSS_HEADS[loss]
    if kind == "tabular":
        return TabularApproximator(spec.S, heads, d, st.get("model", "time_bins", 16, int), spec.t_min, spec.T)
    if kind == "mlp":
        return MLPApproximator(
            heads,
            d,
            st.get("model", "hidden", (64, 64), tuple),
            st.get("model", "emb_dim", 32, int),
            1000.0 / spec.T,
            1.0 / spec.sqrt_S,
            seed=seed,
        )
    raise ConfigError(f"unknown model kind {kind!r}")


def _spec_metadata(spec: EhrenfestSpec) -> dict:
    s = spec.schedule
    return {"S": spec.S, "T": spec.T, "t_min": spec.t_min, "schedule": s.kind, "rate": s.rate, "beta_min": s.beta_min, "beta_max": s.beta_max, "cap": s.cap}


def _spec_from_metadata(meta: dict) -> EhrenfestSpec:
    try:
        sched = RateSchedule(meta["schedule"], float(meta["rate"]), float(meta["beta_min"]), float(meta["beta_max"]), float(meta["cap"]))
        return EhrenfestSpec(int(meta["S"]), float(meta["T"]), sched, float(meta["t_min"]))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint metadata incomplete: {exc}") from None


def cmd_train(args, st: Settings, out: Path) -> int:
    spec = st.spec()
    target, _ = st.target(spec.S)
    loss = st.get("train", "loss", "cond_exp")
    if loss not in LOSS_HEADS:
        raise ConfigError(f"unknown loss {loss!r}")
    seed = st.seed()
    approx = _build_approximator(st, loss, spec, target.d, seed)
    tc = TrainConfig(
        loss=loss,
        batch_size=st.get("train", "batch", 256, int),
        steps=st.get("train", "steps", 1000, int),
        lr=st.get("train", "lr", 1e-3, float),
        lr_final=st.get("train", "lr_final", None, float),
        seed=seed,
        ratio_source=st.get("train", "ratio_source", "exact"),
    )
    start = time.perf_counter()
    res = train(approx, tc, spec, target.sampler())
    meta = {"loss": loss, "d": target.d, "steps": tc.steps, "seed": seed, **_spec_metadata(spec)}
    save_checkpoint(out / "model.ckpt", res.approximator, meta)
    write_loss_trace(out / "loss_trace.csv", res.losses)
    tail = float(np.mean(res.losses[-100:])) if tc.steps else float("nan")
    write_json(out / "train_metrics.json", {"loss": loss, "final_loss": tail, "n_excluded": res.n_excluded, "seconds": time.perf_counter() - start})
    print(f"wrote {out / 'model.ckpt'} (final loss {tail:.4g})")
    return EXIT_OK


def cmd_sample(args, st: Settings, out: Path) -> int:
    source_kind = st.get("sample", "source", "model")
    seed = st.seed("sample")
    if source_kind == "model":
        ckpt = args.checkpoint or st.get("sample", "checkpoint", None)
        if ckpt is None:
            raise ConfigError("sampling from a model needs --checkpoint or [sample] checkpoint")
        approx, meta = load_checkpoint(ckpt)
        spec = _spec_from_metadata(meta)
        loss = meta.get("loss", "")
        if loss not in LOSS_HEADS:
            raise CheckpointError(f"checkpoint names unknown loss {loss!r}")
        d = int(meta.get("d", approx.d))
        source = ModelRateSource(approx, loss, spec)
        target = st.target(spec.S)[0] if st.cp.has_section("data") else None
    else:
        spec = st.spec()
        target, gmm = st.target(spec.S)
        d = target.d
        if source_kind == "exact":
            source = ExactRateSource(target, spec, factorized=st.get("sample", "factorized", False, bool))
        elif source_kind == "analytic":
            if gmm is None:
                raise ConfigError("the analytic source needs [data] target = gmm")
            source = AnalyticScoreSource(gmm, spec)
        else:
            raise ConfigError(f"unknown sample source {source_kind!r}")
    cfg = SamplerConfig(tau=st.get("sample", "tau", 1e-3, float), seed=seed, workers=args.threads)
    n = st.get("sample", "n", 10_000, int)
    start = time.perf_counter()
    res = tau_leap_sample(source, spec, n, cfg, d=d)
    write_histograms(out / "samples.csv", {res.t: res.states}, spec.S, d)
    metrics = {"n": n, "t_end": res.t, "seconds": time.perf_counter() - start}
    if target is not None and target.d == d:
        m = compare(res.states, target)
        metrics.update(tv=m.tv, ks=m.ks)
    write_json(out / "sample_metrics.json", metrics)
    print(json.dumps(metrics))
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "gmm-demo": cmd_gmm_demo,
    "letter-e": cmd_letter_e,
    "train": cmd_train,
    "sample": cmd_sample,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config file")
    common.add_argument("--seed", type=int, metavar="U64", help="overrides every seed in the config")
    common.add_argument("--out", metavar="DIR", default=".", help="artifact directory (created if missing)")
    common.add_argument("--threads", type=int, default=1, metavar="N", help="worker threads for sampling")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="ehrenfest", description="Ehrenfest jump-process generative modelling")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="oracle and invariant checks").add_argument(
        "--mutate", choices=["bridge-sign"], help=argparse.SUPPRESS
    )
    sub.add_parser("gmm-demo", parents=[common], help="analytic-score reverse sampling at S=100")
    sub.add_parser("letter-e", parents=[common], help="train and sample the 33x33 letter E")
    sub.add_parser("train", parents=[common], help="train an approximator, write a checkpoint")
    sub.add_parser("sample", parents=[common], help="tau-leaping sampling").add_argument("--checkpoint", metavar="PATH")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        settings = read_settings(args.config, args.seed)
        return COMMANDS[args.command](args, settings, out)
    except (ConfigError, DomainError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, TrainingError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
