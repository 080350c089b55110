"""Staged inversion pipeline (data, naive chain, error statistics, corrected chain) with a run manifest.

Stages write under one output directory::

    data/      y_obs.csv, y_clean.csv, truth.json
    naive/     chain_NN.csv, chain_meta.json, diagnostics.json
    errors/    epsilon_mean.csv, epsilon_cov.csv, error_meta.json, failures.csv, qq.csv, normality.json
    bae/       chain_NN.csv, chain_meta.json, diagnostics.json (+ recheck_* files)
    predict/   naive_quantiles.csv, bae_quantiles.csv
    oracle/    oracle.json (+ comparison.json)
    report/    report.json, histograms.csv, feasibility.csv, timings.json
    manifest.json

``manifest.json`` records the config hash, per-stage seeds, timestamps,
wall-clock, model-failure counts and a SHA-256 for every file. A completed
stage is skipped when rerun with the same config hash; an output directory
created under a different hash is refused. Files listed as ``volatile``
(only ``report/timings.json``) carry wall-clock data and are excluded from
reproducibility comparisons.
"""

from __future__ import annotations

import contextlib
import functools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import io
from .bae import (build_error_ensemble, chain_source, error_statistics, normality_diagnostics, prior_source,
                  total_error_model, ErrorStatistics)
from .config import config_hash
from .forward.external import ExternalModel
from .forward.polynomial import LinearModel, coarse_projection, poly_design_matrix
from .forward.slice import SliceConfig, SliceModel, parameter_names
from .oracle import LinearProblem, analytic_posteriors, map_estimates, multilevel_noise_cov, projection_identity_error
from .posterior import (GaussianPrior, InverseProblem, UniformPrior, ball_init, bae_log_posterior, feasibility_summary,
                        find_mode, naive_log_posterior, posterior_predictive, synthesize_data)
from .probability import GaussianModel, derive_seed, make_rng
from .sampler import Chain, ChainTooShortError, SamplerConfig, combine_ensembles, diagnostics, run_ensemble

__all__ = ["Pipeline", "StageError", "STAGES"]

log = logging.getLogger(__name__)

STAGES = ("synthesize", "naive", "errors", "bae", "predict", "oracle", "report")
VOLATILE = ("report/timings.json",)
PROJECTION_TOL = 1e-10


class StageError(RuntimeError):
    """A stage cannot run: missing prerequisite, wrong model kind or conflicting output."""


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Pipeline:
    """Run pipeline stages for one resolved config into ``output``."""

    def __init__(self, cfg: dict, output, profile: str | None = None):
        self.cfg = cfg
        self.root = Path(output)
        self.hash = config_hash(cfg)
        self.profile = profile
        self._models = None
        self.manifest_path = self.root / "manifest.json"
        if self.manifest_path.exists():
            self.manifest = io.read_json(self.manifest_path)
            if self.manifest.get("config_hash") != self.hash:
                raise StageError(
                    f"{self.root} holds outputs of a different config (hash {self.manifest.get('config_hash', '?')[:12]}"
                    f" vs {self.hash[:12]}); choose a new output directory"
                )
        else:
            self.manifest = {"config_hash": self.hash, "config": cfg, "profile": profile,
                             "root_seed": int(cfg["seed"]), "stages": {}}

    # -- problem assembly -----------------------------------------------------
    @property
    def kind(self) -> str:
        return self.cfg["model"]["kind"]

    def models(self):
        """``(fine, coarse)`` forward models."""
        if self._models is None:
            self._models = self._build_models()
        return self._models

    def _build_models(self):
        m = self.cfg["model"]
        if self.kind == "polynomial":
            poly = m["polynomial"]
            t = np.linspace(poly["t_min"], poly["t_max"], poly["m"])
            F = poly_design_matrix(t, poly["n"])
            G = F.copy() if poly["identical"] else coarse_projection(F, poly["p"])
            fine = LinearModel(F)
            return fine, (fine if poly["identical"] else LinearModel(G))
        if self.kind == "slice":
            phys = dict(m.get("slice", {}))
            if "source_interval" in phys:
                phys["source_interval"] = tuple(phys["source_interval"])
            base = SliceConfig(**phys)
            fine = SliceModel(base.with_grid(m["fine"]["nz"], m["fine"]["nx"]))
            coarse = SliceModel(base.with_grid(m["coarse"]["nz"], m["coarse"]["nx"]))
            return fine, coarse
        ext = m["external"]
        kw = dict(input_dim=ext["input_dim"], output_dim=ext["output_dim"], timeout=ext["timeout"])
        fine = ExternalModel(m["fine"]["command"], **kw)
        coarse = fine if m["coarse"]["command"] == m["fine"]["command"] else ExternalModel(m["coarse"]["command"], **kw)
        return fine, coarse

    @property
    def dim(self) -> int:
        return self.models()[1].input_dim

    @property
    def n_obs(self) -> int:
        return self.models()[1].output_dim

    def parameter_names(self):
        if self.kind == "slice":
            return parameter_names(self.models()[1].cfg.layout)
        return [f"k_{i + 1}" for i in range(self.dim)]

    @staticmethod
    def _broadcast(value, n, what):
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        if arr.size == 1:
            return np.full(n, float(arr[0]))
        if arr.size != n:
            raise StageError(f"{what} has length {arr.size}, expected {n}")
        return arr

    def prior(self):
        p, d = self.cfg["prior"], self.dim
        if p["kind"] == "uniform":
            return UniformPrior(self._broadcast(p["lower"], d, "prior.lower"), self._broadcast(p["upper"], d, "prior.upper"))
        mean = self._broadcast(p.get("mean", 0.0), d, "prior.mean")
        if "cov" in p:
            return GaussianPrior(mean, np.asarray(p["cov"], dtype=float))
        return GaussianPrior(mean, np.diag(self._broadcast(p["sd"], d, "prior.sd") ** 2))

    def noise(self) -> GaussianModel:
        nz, m = self.cfg["noise"], self.n_obs
        mean = self._broadcast(nz.get("mean", 0.0), m, "noise.mean")
        if "sd" in nz:
            cov = np.diag(self._broadcast(nz["sd"], m, "noise.sd") ** 2)
        elif "cov_file" in nz:
            cov = io.read_matrix(nz["cov_file"])
            if cov.shape != (m, m):
                raise StageError(f"noise covariance is {cov.shape}, expected ({m}, {m})")
        else:
            ml = nz["multilevel"]
            delta = ml["delta_e"]
            if "noise_fraction" in ml:
                truth = self.truth()
                if truth is None:
                    raise StageError("noise.multilevel.noise_fraction needs a known truth")
                delta = ml["noise_fraction"] * float(np.max(self.models()[0].evaluate(truth)))
            cov = multilevel_noise_cov(m, ml["blocks"], delta, ml["c"])
        return GaussianModel(mean, cov)

    def truth(self):
        t = self.cfg["data"].get("truth")
        return None if t is None else self._broadcast(t, self.dim, "data.truth")

    def observations(self):
        path = self.root / "data" / "y_obs.csv"
        if self._complete("synthesize"):
            y = io.read_vector(path)
        elif "path" in self.cfg["data"]:
            y = io.read_vector(self.cfg["data"]["path"])
        else:
            raise StageError("no observations: run the synthesize stage first")
        if y.size != self.n_obs:
            raise StageError(f"observation vector has length {y.size}, model output_dim is {self.n_obs}")
        return y

    # -- manifest ---------------------------------------------------------------
    def _complete(self, stage) -> bool:
        return self.manifest["stages"].get(stage, {}).get("status") == "complete"

    def _require(self, stage, why):
        if not self._complete(stage):
            raise StageError(f"{why}: run the {stage} stage first")

    def _save_manifest(self):
        io.write_json(self.manifest_path, self.manifest)

    def run(self, stage: str, which: str | None = None):
        """Run ``stage`` unless it already completed under this config hash.

        ``predict`` runs once per completed chain (or only for ``which``) and
        records ``predict-naive`` / ``predict-bae`` entries.
        """
        if stage not in STAGES:
            raise StageError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
        if stage == "predict":
            names = [w for w in ("naive", "bae") if self._complete(w)] if which is None else [which]
            if not names:
                raise StageError("no chain to predict from: run naive or bae first")
            return {n: self._run_one(f"predict-{n}", lambda rec, n=n: self._stage_predict(rec, n)) for n in names}
        return self._run_one(stage, getattr(self, f"_stage_{stage}"))

    def run_all(self):
        """Every stage in order; the oracle only for polynomial models."""
        for stage in STAGES:
            if stage == "oracle" and self.kind != "polynomial":
                continue
            self.run(stage)

    def _run_one(self, key, func):
        if self._complete(key):
            entry = self.manifest["stages"][key]
            self._verify(entry)
            log.info("stage %s already complete for config %s; skipping", key, self.hash[:12])
            return entry
        start_wall, started = time.perf_counter(), _now()
        record = {"seeds": {}, "failures": {}}
        files = list(func(record))
        entry = {
            "status": "complete",
            "started": started,
            "finished": _now(),
            "wall_clock_s": time.perf_counter() - start_wall,
            "seeds": record["seeds"],
            "failures": record["failures"],
            "files": {},
        }
        self.manifest["stages"][key] = entry
        if key == "report":
            files.append(self._write_timings())
        for f in files:
            rel = Path(f).relative_to(self.root).as_posix()
            entry["files"][rel] = io.sha256_file(f)
        entry["volatile"] = [f for f in entry["files"] if f in VOLATILE]
        self._save_manifest()
        log.info("stage %s complete in %.1f s", key, entry["wall_clock_s"])
        return entry

    def _verify(self, entry):
        for rel, digest in entry["files"].items():
            path = self.root / rel
            if not path.exists():
                raise StageError(f"{rel} listed in the manifest is missing")
            if rel not in VOLATILE and io.sha256_file(path) != digest:
                raise StageError(f"{rel} was modified after the stage completed")

    def checksums(self, include_volatile=False) -> dict:
        """All recorded ``{relative path: sha256}`` pairs."""
        out = {}
        for entry in self.manifest["stages"].values():
            for rel, digest in entry["files"].items():
                if include_volatile or rel not in VOLATILE:
                    out[rel] = digest
        return dict(sorted(out.items()))

    @contextlib.contextmanager
    def _executor(self):
        workers = int(self.cfg.get("workers", 1))
        if workers <= 1:
            yield None
            return
        with ProcessPoolExecutor(max_workers=workers) as pool:
            yield pool

    # -- sampling helpers -------------------------------------------------------
    def _sample(self, stage, logpost, record):
        mc = self.cfg["mcmc"]
        coarse = self.models()[1]
        chains, metas = [], []
        prior = self.prior()
        with self._executor() as pool:
            vectorize = coarse.batched
            map_fn = None
            if pool is not None and not vectorize:
                chunk = max(1, mc["walkers"] // (8 * int(self.cfg["workers"])))
                map_fn = functools.partial(_pool_map, pool, chunksize=chunk)
            for i in range(mc["ensembles"]):
                seed = derive_seed(self.cfg["seed"], stage, i)
                record["seeds"][f"ensemble_{i + 1:02d}"] = seed
                meta = {"seed": seed}
                if mc["init"] == "mode":
                    mode_seed = derive_seed(self.cfg["seed"], stage, "mode", i)
                    record["seeds"][f"mode_{i + 1:02d}"] = mode_seed
                    center, lp_center = find_mode(logpost, prior, make_rng(mode_seed), n_starts=mc["mode_starts"])
                    init = ball_init(center, mc["init_radius"], prior)
                    meta.update(init="mode", mode=center.tolist(), mode_logpost=lp_center)
                else:
                    init = prior.sample
                    meta["init"] = "prior"
                scfg = SamplerConfig(mc["walkers"], mc["steps"], mc["burn_in"], mc["stretch_a"], seed, mc["thin"])
                chain = run_ensemble(logpost, scfg, init, vectorize=vectorize, map_fn=map_fn)
                meta.update(acceptance_rate=chain.acceptance_rate, n_nonfinite=chain.n_nonfinite)
                chains.append(chain)
                metas.append(meta)
        record["failures"]["model_runs"] = int(logpost.n_failures)
        return chains, metas

    def _write_chains(self, stage, chains, metas, extra=None):
        d = self.root / stage
        names = [f"k_{j + 1}" for j in range(self.dim)]
        files = []
        for i, chain in enumerate(chains):
            path = d / f"chain_{i + 1:02d}.csv"
            steps = chain.burn_in + chain.thin * np.arange(chain.n_steps)
            rows = (
                [w, int(steps[s]), *chain.values[s, w].tolist(), float(chain.logpost[s, w]), bool(chain.accepted[s, w])]
                for s in range(chain.n_steps) for w in range(chain.n_walkers)
            )
            io.write_csv(path, ["walker", "step", *names, "logpost", "accepted"], rows)
            files.append(path)
        mc = self.cfg["mcmc"]
        meta = {
            "config_hash": self.hash,
            "ensembles": metas,
            "n_walkers": mc["walkers"],
            "n_steps": mc["steps"],
            "burn_in": mc["burn_in"],
            "thin": mc["thin"],
            "stretch_a": mc["stretch_a"],
            "acceptance_rate": float(np.mean([c.acceptance_rate for c in chains])),
            "parameter_names": self.parameter_names(),
            **(extra or {}),
        }
        io.write_json(d / "chain_meta.json", meta)
        files.append(d / "chain_meta.json")
        try:
            diag = diagnostics(chains)
        except ChainTooShortError as exc:
            diag = {"error": str(exc)}
        io.write_json(d / "diagnostics.json", diag)
        files.append(d / "diagnostics.json")
        return files

    def load_chain(self, stage) -> Chain:
        """Combined chain of a completed sampling stage, reread from its CSV files."""
        self._require(stage, f"no {stage} chain")
        meta = io.read_json(self.root / stage / "chain_meta.json")
        chains = []
        for i, ens in enumerate(meta["ensembles"]):
            header, rows = io.read_csv(self.root / stage / f"chain_{i + 1:02d}.csv")
            arr = np.array([[float(c) for c in r] for r in rows])
            W = meta["n_walkers"]
            S = arr.shape[0] // W
            d = len(header) - 4
            chains.append(Chain(arr[:, 2:2 + d].reshape(S, W, d), arr[:, 2 + d].reshape(S, W),
                                arr[:, 3 + d].reshape(S, W) > 0.5, seeds=(ens["seed"],),
                                burn_in=meta["burn_in"], thin=meta["thin"]))
        return combine_ensembles(chains)

    def load_error_statistics(self) -> ErrorStatistics:
        self._require("errors", "no error statistics")
        d = self.root / "errors"
        meta = io.read_json(d / "error_meta.json")
        _, rows = io.read_csv(d / "epsilon_mean.csv")
        mean = np.array([float(c) for c in rows[0]])
        cov = io.read_matrix(d / "epsilon_cov.csv")
        return ErrorStatistics(mean, cov, meta["q_requested"], meta["q_succeeded"], meta["q_failed"],
                               meta["source"], meta["seed"])

    def problem(self, with_total_error=False) -> InverseProblem:
        noise = self.noise()
        total = total_error_model(noise, self.load_error_statistics()) if with_total_error else None
        return InverseProblem(self.models()[1], self.prior(), noise, self.observations(), total)

    # -- stages -----------------------------------------------------------------
    def _stage_synthesize(self, record):
        d = self.root / "data"
        files = []
        if self.cfg["data"].get("synthesize"):
            seed = derive_seed(self.cfg["seed"], "synthesize")
            record["seeds"]["noise"] = seed
            truth = self.truth()
            data = synthesize_data(truth, self.models()[0], self.noise(), make_rng(seed))
            io.write_vector(d / "y_obs.csv", data.y_obs)
            io.write_vector(d / "y_clean.csv", data.y_clean)
            io.write_json(d / "truth.json", {"truth": truth, "parameter_names": self.parameter_names()})
            files = [d / "y_obs.csv", d / "y_clean.csv", d / "truth.json"]
        else:
            y = io.read_vector(self.cfg["data"]["path"])
            if y.size != self.n_obs:
                raise StageError(f"observation vector has length {y.size}, model output_dim is {self.n_obs}")
            io.write_vector(d / "y_obs.csv", y)
            files = [d / "y_obs.csv"]
            if self.truth() is not None:
                io.write_json(d / "truth.json", {"truth": self.truth(), "parameter_names": self.parameter_names()})
                files.append(d / "truth.json")
        return files

    def _stage_naive(self, record):
        lp = naive_log_posterior(self.problem())
        chains, metas = self._sample("naive", lp, record)
        return self._write_chains("naive", chains, metas)

    def _error_ensemble(self, source_name, source, seed, record):
        fine, coarse = self.models()
        bae = self.cfg["bae"]
        with self._executor() as pool:
            map_fn = None if pool is None else (lambda f, items: pool.map(f, items, chunksize=8))
            ens = build_error_ensemble(source, fine, coarse, bae["q"], make_rng(seed), bae["policy"], map_fn=map_fn)
        record["failures"]["error_ensemble"] = ens.q_failed
        return ens, error_statistics(ens, source_name, seed)

    def _write_error_files(self, d: Path, prefix: str, ens, stats):
        m = stats.dim
        files = [d / f"{prefix}epsilon_mean.csv", d / f"{prefix}epsilon_cov.csv", d / f"{prefix}error_meta.json",
                 d / f"{prefix}failures.csv"]
        io.write_csv(files[0], [f"eps_{i + 1}" for i in range(m)], [stats.epsilon_mean.tolist()])
        io.write_matrix(files[1], stats.epsilon_cov)
        meta = {**stats.to_meta(), "config_hash": self.hash, "failure_log": files[3].name}
        io.write_json(files[2], meta)
        io.write_csv(files[3], ["attempt", "reason"], list(ens.failures))
        if ens.q_succeeded >= 8:
            diag = normality_diagnostics(ens.errors)
            rows = []
            for comp in diag["components"]:
                if comp["degenerate"]:
                    continue
                for r, (th, em) in enumerate(zip(diag["qq_theoretical"], comp["qq_empirical"])):
                    rows.append([comp["index"] + 1, r + 1, float(th), float(em)])
            io.write_csv(d / f"{prefix}qq.csv", ["component", "rank", "theoretical", "empirical"], rows)
            summary = [{k: v for k, v in c.items() if k != "qq_empirical"} for c in diag["components"]]
            io.write_json(d / f"{prefix}normality.json", {"components": summary})
            files += [d / f"{prefix}qq.csv", d / f"{prefix}normality.json"]
        return files

    def _stage_errors(self, record):
        bae = self.cfg["bae"]
        seed = derive_seed(self.cfg["seed"], "errors")
        record["seeds"]["errors"] = seed
        if bae["source"] == "posterior-informed":
            source = chain_source(self.load_chain("naive"))
        else:
            source = prior_source(self.prior())
        ens, stats = self._error_ensemble(bae["source"], source, seed, record)
        return self._write_error_files(self.root / "errors", "", ens, stats)

    def _stage_bae(self, record):
        self._require("errors", "BAE posterior needs error statistics")
        lp = bae_log_posterior(self.problem(with_total_error=True))
        chains, metas = self._sample("bae", lp, record)
        files = self._write_chains("bae", chains, metas)
        if self.cfg["bae"]["recheck"]:
            # error statistics recomputed under the corrected posterior, for comparison only
            seed = derive_seed(self.cfg["seed"], "recheck")
            record["seeds"]["recheck"] = seed
            source = chain_source(combine_ensembles(chains))
            ens, stats = self._error_ensemble("posterior-informed", source, seed, record)
            files += self._write_error_files(self.root / "bae", "recheck_", ens, stats)
        return files

    def _obs_labels(self):
        if self.kind != "slice":
            return [("", "")] * self.n_obs
        cfg = self.models()[1].cfg
        return [(x, dep) for x, depths in sorted(cfg.wells, key=lambda w: w[0]) for dep in sorted(depths)]

    def _stage_predict(self, record, name):
        if name not in ("naive", "bae"):
            raise StageError(f"predict needs 'naive' or 'bae', not {name!r}")
        self._require(name, f"{name} predictive check")
        pr = self.cfg["predict"]
        y = self.observations()
        labels = self._obs_labels()
        seed = derive_seed(self.cfg["seed"], "predict", name)
        record["seeds"][name] = seed
        noise, offset = self.noise(), None
        if name == "bae":
            # the BAE likelihood centres the coarse model output on g(k) + eps*
            stats = self.load_error_statistics()
            if pr["noisy"]:
                noise = total_error_model(noise, stats)
            else:
                offset = stats.epsilon_mean
        chain = self.load_chain(name)
        n = min(pr["draws"], chain.count)
        out = posterior_predictive(chain, self.models()[1], n, make_rng(seed), tuple(pr["quantiles"]),
                                   noise=noise if pr["noisy"] else None, offset=offset)
        record["failures"]["model_runs"] = int(out["n_failed"])
        header = ["obs_index", "well", "depth", *[f"q_{q:g}" for q in pr["quantiles"]], "observed"]
        rows = [[i, labels[i][0], labels[i][1], *out["table"][i].tolist(), float(y[i])] for i in range(self.n_obs)]
        path = self.root / "predict" / f"{name}_quantiles.csv"
        io.write_csv(path, header, rows)
        return [path]

    def linear_problem(self) -> LinearProblem:
        if self.kind != "polynomial":
            raise StageError(f"the oracle needs a polynomial model, not {self.kind!r}")
        fine, coarse = self.models()
        prior = self.prior()
        if not isinstance(prior, GaussianPrior):
            raise StageError("the oracle needs a Gaussian prior")
        return LinearProblem(fine.matrix, coarse.matrix, prior.model, self.noise(), self.observations())

    def _stage_oracle(self, record):
        problem = self.linear_problem()
        post = analytic_posteriors(problem)
        literal = analytic_posteriors(problem, include_noise=False)
        p = self.cfg["model"]["polynomial"]["p"] if not self.cfg["model"]["polynomial"]["identical"] else self.dim
        proj = projection_identity_error(post, min(p, self.dim))
        out = {
            "config_hash": self.hash,
            **post.as_dict(),
            "map": {v: map_estimates(problem, v) for v in ("naive", "bae", "true")},
            "bae_without_noise_term": {"mean": literal.bae.mean, "cov": literal.bae.covariance},
            "projection_identity": {"p": p, "max_abs_error": proj, "tolerance": PROJECTION_TOL,
                                    "pass": bool(proj <= PROJECTION_TOL)},
        }
        files = [self.root / "oracle" / "oracle.json"]
        io.write_json(files[0], out)
        comparison = {}
        for name in ("naive", "bae"):
            if self._complete(name):
                comparison[name] = compare_moments(self.load_chain(name).flat(), getattr(post, name))
        if comparison:
            files.append(self.root / "oracle" / "comparison.json")
            io.write_json(files[-1], comparison)
        return files

    def _stage_report(self, record):
        chains = {s: self.load_chain(s) for s in ("naive", "bae") if self._complete(s)}
        if not chains:
            raise StageError("report needs at least one chain: run naive or bae first")
        names = self.parameter_names()
        truth = self.truth()
        prior = self.prior()
        seed = derive_seed(self.cfg["seed"], "report")
        record["seeds"]["prior_draws"] = seed
        prior_draws = prior.sample(make_rng(seed), self.cfg["report"]["prior_draws"])
        summary = {"config_hash": self.hash, "parameter_names": names, "prior": self.cfg["prior"],
                   "truth": truth, "posteriors": {}}
        for s in ("naive", "bae"):
            if s not in chains:
                summary["posteriors"][s] = None
                continue
            flat = chains[s].flat()
            entry = {"n_samples": flat.shape[0], "mean": flat.mean(axis=0),
                     "sd": flat.std(axis=0, ddof=1), "acceptance_rate": chains[s].acceptance_rate}
            if truth is not None:
                entry["feasibility"] = feasibility_summary(flat, truth, names=names)
            summary["posteriors"][s] = entry
        summary["phenomenon"] = _phenomenon(summary["posteriors"]) if truth is not None else None
        summary["failures"] = {k: v.get("failures", {}) for k, v in self.manifest["stages"].items()}
        d = self.root / "report"
        io.write_json(d / "report.json", summary)
        rows = []
        bins = self.cfg["report"]["bins"]
        for j, name in enumerate(names):
            cols = [prior_draws[:, j]] + [chains[s].flat()[:, j] for s in chains]
            if isinstance(prior, UniformPrior):
                lo, hi = prior.lower[j], prior.upper[j]
            else:
                lo = min(c.min() for c in cols)
                hi = max(c.max() for c in cols)
            if hi <= lo:
                hi = lo + 1.0
            edges = np.linspace(lo, hi, bins + 1)
            counts = {"prior": np.histogram(prior_draws[:, j], edges)[0]}
            for s in chains:
                counts[s] = np.histogram(chains[s].flat()[:, j], edges)[0]
            for b in range(bins):
                rows.append([name, float(edges[b]), float(edges[b + 1]), int(counts["prior"][b]),
                             int(counts["naive"][b]) if "naive" in counts else None,
                             int(counts["bae"][b]) if "bae" in counts else None])
        io.write_csv(d / "histograms.csv", ["parameter", "bin_lower", "bin_upper", "prior", "naive", "bae"], rows)
        files = [d / "report.json", d / "histograms.csv"]
        if truth is not None:
            frows = []
            for j, name in enumerate(names):
                row = [name, float(truth[j])]
                for s in ("naive", "bae"):
                    post = summary["posteriors"][s]
                    if post is None:
                        row += [None] * 5
                        continue
                    f = post["feasibility"][j]
                    row += [f["mean"], f["sd"], f["intervals"]["0.95"]["lower"], f["intervals"]["0.95"]["upper"],
                            f["intervals"]["0.95"]["contains_truth"]]
                frows.append(row)
            header = ["parameter", "truth"] + [f"{s}_{c}" for s in ("naive", "bae")
                                               for c in ("mean", "sd", "lower_95", "upper_95", "contains_95")]
            io.write_csv(d / "feasibility.csv", header, frows)
            files.append(d / "feasibility.csv")
        return files

    def _write_timings(self):
        path = self.root / "report" / "timings.json"
        io.write_json(path, {k: {"wall_clock_s": v.get("wall_clock_s"), "started": v.get("started"),
                                 "finished": v.get("finished")} for k, v in self.manifest["stages"].items()})
        return path


def _pool_map(pool, f, items, chunksize=1):
    return pool.map(f, items, chunksize=chunksize)


def compare_moments(samples, model: GaussianModel) -> dict:
    """Sampled-vs-analytic moment deltas.

    ``mean_delta_sd`` is the mean error in units of the analytic marginal sd;
    ``cov_rel`` is the entrywise error relative to ``sqrt(S_ii S_jj)``.
    """
    samples = np.asarray(samples, dtype=float)
    sd = np.sqrt(np.diag(model.covariance))
    mean_delta = (samples.mean(axis=0) - model.mean) / sd
    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    cov_rel = (cov - model.covariance) / np.outer(sd, sd)
    return {"n_samples": samples.shape[0], "mean_delta_sd": mean_delta, "cov_rel": cov_rel,
            "max_abs_mean_delta_sd": float(np.abs(mean_delta).max()), "max_abs_cov_rel": float(np.abs(cov_rel).max())}


def _phenomenon(posts):
    """Parameters the naive posterior excludes at 95% while the BAE posterior covers at 99%."""
    if posts.get("naive") is None or posts.get("bae") is None:
        return None
    out = []
    for fn, fb in zip(posts["naive"]["feasibility"], posts["bae"]["feasibility"]):
        if not fn["intervals"]["0.95"]["contains_truth"] and fb["intervals"]["0.99"]["contains_truth"]:
            out.append(fn["name"])
    return out
