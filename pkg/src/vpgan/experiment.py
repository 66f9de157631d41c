"""Manifest-driven experiment runs: train, anonymize, evaluate, ablate, visualize.

A manifest is a JSON object; ``seed`` is mandatory and everything written
under ``output_dir`` is a function of the manifest alone::

    output_dir/
      checkpoints/   step_XXXXXXX.ckpt
      corpora/       generated and anonymized corpora
      mappings/      speaker -> target tables (JSONL)
      reports/       evaluation / ablation / visualization JSON
      figures/       SVG scatter plots and CSV point dumps
      logs/          diagnostics.csv
"""
from __future__ import annotations

import copy
import hashlib
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vpgan.anonymizer import AnonymizationMapping, PoolConfig, ScaleStats, anonymize_corpus, threshold_violations
from vpgan.checkpoint import load_generator
from vpgan.corpus import Corpus, SyntheticCorpusSpec, generate_pool, generate_synthetic, read_corpus, write_corpus
from vpgan.nn import predict
from vpgan.privacy import SCENARIOS, asv_score, group_eers
from vpgan.projection import ProjectionConfig, nn1_label_error, render_overlap, tsne, write_points_csv
from vpgan.toy import sample_ring
from vpgan.trainer import TrainConfig, checkpoint_iterations, checkpoint_path, latest_checkpoint, sample_noise, train
from vpgan.utility import gvd, median_bandwidth, mmd

log = logging.getLogger(__name__)

OUTPUT_ENV = "VPGAN_OUTPUT_DIR"
WER_NOTE = (
    "WER needs a speech recognizer and is not computed; GVD (distinctiveness) and "
    "MMD against real embeddings (naturalness) stand in as utility measures."
)


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


class EvaluationError(RuntimeError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


# -- manifest ------------------------------------------------------------------


@dataclass
class Manifest:
    raw: dict
    base_dir: Path

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def output_dir(self) -> Path:
        override = os.environ.get(OUTPUT_ENV)
        if override:
            return Path(override)
        return self._path(self.raw["output_dir"])

    def _path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name) or {})

    @property
    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()

    def train_config(self) -> TrainConfig:
        d = self.section("train")
        d.setdefault("seed", self.seed)
        try:
            return TrainConfig.from_dict(d)
        except KeyError as exc:
            raise ConfigError(f"missing config field: train.{exc.args[0]}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train config: {exc}") from None


def load_manifest(path_or_dict, base_dir=None) -> Manifest:
    if isinstance(path_or_dict, dict):
        raw = copy.deepcopy(path_or_dict)
        base = Path(base_dir or ".")
    else:
        path = Path(path_or_dict)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        base = Path(base_dir) if base_dir else path.parent
    m = Manifest(raw, base)
    validate_manifest(m)
    return m


def validate_manifest(m: Manifest):
    raw = m.raw
    for key in ("seed", "output_dir", "corpus"):
        if key not in raw:
            raise ConfigError(f"missing config field: {key}")
    if not isinstance(raw["seed"], int):
        raise ConfigError("seed must be an integer")
    corpus = raw["corpus"]
    kinds = [k for k in ("synthetic", "toy2d", "files") if k in corpus]
    if len(kinds) != 1:
        raise ConfigError("corpus must have exactly one of: synthetic, toy2d, files")
    if "files" in corpus:
        files = corpus["files"]
        if "train" not in files:
            raise ConfigError("missing config field: corpus.files.train")
        for role, p in files.items():
            if not m._path(p).exists():
                raise ConfigError(f"corpus.files.{role}: file not found: {m._path(p)}")
    if "synthetic" in corpus:
        try:
            SyntheticCorpusSpec.from_dict(corpus["synthetic"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid corpus.synthetic: {exc}") from None
    if "train" in raw:
        m.train_config()
    anon = raw.get("anonymize") or {}
    if "strategy" in anon and anon["strategy"] not in ("gan", "pool", "random", "identity"):
        raise ConfigError(f"unknown anonymize.strategy {anon['strategy']!r}")
    for s in (raw.get("evaluate") or {}).get("scenarios", []):
        if s not in SCENARIOS:
            raise ConfigError(f"unknown evaluate scenario {s!r}")


# -- corpora -------------------------------------------------------------------


@dataclass
class Corpora:
    train: np.ndarray
    held_out: np.ndarray | None = None
    train_corpus: Corpus | None = None
    enrollment: Corpus | None = None
    trial: Corpus | None = None
    pool: Corpus | None = None


def build_corpora(m: Manifest) -> Corpora:
    spec = m.raw["corpus"]
    if "toy2d" in spec:
        t = dict(spec["toy2d"])
        n = int(t.pop("samples", 20000))
        held = int(t.pop("held_out", 2000))
        data = sample_ring(n, np.random.default_rng([m.seed, 10]), **t)
        return Corpora(train=data, held_out=sample_ring(held, np.random.default_rng([m.seed, 11]), **t))
    if "synthetic" in spec:
        s = SyntheticCorpusSpec.from_dict(spec["synthetic"])
        enroll, trial = generate_synthetic(s, name=spec.get("name", "synthetic"))
        pool = generate_pool(
            s,
            speaker_count=int(spec.get("train_speakers", 400)),
            utterances_per_speaker=int(spec.get("train_utterances", 10)),
            name=f"{spec.get('name', 'synthetic')}-train",
        )
        return Corpora(train=pool.vectors, held_out=trial.vectors, train_corpus=pool, enrollment=enroll, trial=trial, pool=pool)
    files = spec["files"]
    try:
        loaded = {role: read_corpus(m._path(p)) for role, p in files.items()}
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    train_corpus = loaded["train"]
    trial = loaded.get("trial")
    return Corpora(
        train=train_corpus.vectors,
        held_out=trial.vectors if trial is not None else None,
        train_corpus=train_corpus,
        enrollment=loaded.get("enrollment"),
        trial=trial,
        pool=loaded.get("pool", train_corpus),
    )


def corpus_gen(m: Manifest, fmt: str = "vpemb") -> dict[str, Path]:
    c = build_corpora(m)
    if c.train_corpus is None:
        raise ConfigError("corpus-gen needs a synthetic or file corpus, not toy2d")
    out = m.output_dir / "corpora"
    ext = ".jsonl" if fmt == "jsonl" else ".vpemb"
    paths = {}
    for role in ("train_corpus", "enrollment", "trial"):
        corpus = getattr(c, role)
        if corpus is not None:
            paths[role.replace("_corpus", "")] = write_corpus(corpus, out / f"{role.replace('_corpus', '')}{ext}")
    return paths


def corpus_convert(src, dst) -> Path:
    try:
        return write_corpus(read_corpus(src), dst)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc


# -- training --------------------------------------------------------------------


def run_train(m: Manifest, resume: bool = False, callback=None):
    cfg = m.train_config()
    c = build_corpora(m)
    try:
        return train(c.train, cfg, out_dir=m.output_dir, held_out=c.held_out, resume=resume, callback=callback)
    except ValueError as exc:
        if "config differs" in str(exc):
            raise ConfigError(str(exc)) from exc
        raise DataError(str(exc)) from exc


def resolve_checkpoint(m: Manifest, checkpoint=None) -> Path:
    if checkpoint is not None:
        p = Path(checkpoint)
        p = p if p.is_absolute() or p.exists() else m._path(p)
        if not p.exists():
            raise DataError(f"checkpoint not found: {p}")
        return p
    last = latest_checkpoint(m.output_dir)
    if last is None:
        raise DataError(f"no checkpoint under {m.output_dir / 'checkpoints'}; run train first")
    return last


# -- anonymization -----------------------------------------------------------------


def _anon_settings(m: Manifest, overrides: dict | None = None) -> dict:
    a = {
        "strategy": "gan",
        "checkpoint": None,
        "threshold": 0.3,
        "max_attempts": 100,
        "seeds": {"enrollment": m.seed + 1, "trial": m.seed + 2},
        "pool": {},
    }
    a.update(m.section("anonymize"))
    for k, v in (overrides or {}).items():
        if v is not None:
            a[k] = v
    return a


def mapping_path(m: Manifest, dataset: str, strategy: str, seed: int) -> Path:
    return m.output_dir / "mappings" / f"{dataset}.{strategy}.seed{seed}.jsonl"


def anonymized_path(m: Manifest, dataset: str, strategy: str, seed: int) -> Path:
    return m.output_dir / "corpora" / f"{dataset}.{strategy}.seed{seed}.vpemb"


def make_anonymizer(m: Manifest, settings: dict, corpora: Corpora):
    """Return ``fn(corpus, seed) -> (anonymized, mapping)`` plus a provenance string."""
    strategy = settings["strategy"]
    kw = {"threshold": settings["threshold"], "max_attempts": settings["max_attempts"]}
    if strategy == "gan":
        ckpt = resolve_checkpoint(m, settings.get("checkpoint"))
        kw["generator"] = load_generator(ckpt)
        provenance = str(ckpt.relative_to(m.output_dir)) if ckpt.is_relative_to(m.output_dir) else str(ckpt)
    elif strategy == "pool":
        if corpora.pool is None:
            raise ConfigError("pool strategy needs a pool corpus (synthetic corpus or corpus.files.pool)")
        kw["pool"] = PoolConfig(corpora.pool, **settings.get("pool", {}))
        provenance = corpora.pool.name
    elif strategy == "random":
        ref = corpora.pool or corpora.train_corpus
        kw["stats"] = ScaleStats.of(ref)
        provenance = ref.name
    else:
        provenance = "identity"

    def fn(corpus: Corpus, seed: int):
        return anonymize_corpus(corpus, strategy, seed=seed, provenance=provenance, **kw)

    return fn, provenance


def run_anonymize(m: Manifest, corpus_path=None, strategy=None, checkpoint=None, seed=None, force: bool = False) -> dict:
    """Anonymize the manifest's enrollment and trial corpora (or one file)."""
    settings = _anon_settings(m, {"strategy": strategy, "checkpoint": checkpoint})
    corpora = build_corpora(m)
    fn, _ = make_anonymizer(m, settings, corpora)
    if corpus_path is not None:
        try:
            jobs = [(read_corpus(corpus_path), seed if seed is not None else m.seed)]
        except (OSError, ValueError) as exc:
            raise DataError(str(exc)) from exc
    else:
        if corpora.enrollment is None or corpora.trial is None:
            raise ConfigError("manifest provides no enrollment/trial corpora to anonymize")
        seeds = settings["seeds"]
        jobs = [(corpora.enrollment, seeds["enrollment"]), (corpora.trial, seeds["trial"])]
    results = {}
    for corpus, s in jobs:
        mpath = mapping_path(m, corpus.name, settings["strategy"], s)
        if mpath.exists() and not force:
            raise FileExistsError(f"refusing to overwrite existing mapping {mpath} (use --force)")
        anon, mapping = fn(corpus, s)
        apath = write_corpus(anon, anonymized_path(m, corpus.name, settings["strategy"], s))
        entry = {"corpus": str(apath), "mapping": None, "seed": s, "violations": None}
        if mapping is not None:
            mapping.save(mpath, overwrite=True)
            entry["mapping"] = str(mpath)
            entry["distinct_targets"] = mapping.distinct_targets()
            entry["speakers"] = len(corpus.speaker_ids())
        if settings["strategy"] == "gan":
            entry["violations"] = len(threshold_violations(corpus, anon, settings["threshold"]))
        results[corpus.split] = entry
    return results


# -- evaluation --------------------------------------------------------------------


def _per_group(fn, corpus: Corpus) -> dict:
    sex = corpus.sex_of()
    groups = sorted(set(sex.values()) - {"unspecified"})
    out = {}
    for g in groups:
        speakers = [s for s in corpus.speaker_ids() if sex[s] == g]
        if len(speakers) >= 2:
            out[g] = fn(speakers)
    if len(out) >= 2:
        out["all"] = float(np.mean(list(out.values())))
    else:
        out["all"] = fn(corpus.speaker_ids())
    return out


def one_per_speaker(corpus: Corpus) -> np.ndarray:
    return np.stack([corpus.vectors[idx[0]] for idx in corpus.speaker_rows().values()])


def evaluate_corpora(
    original_enroll: Corpus,
    original_trial: Corpus,
    anon_trial: Corpus,
    anon_enroll: Corpus | None = None,
    scenarios=SCENARIOS,
) -> dict:
    """The metric suite on already anonymized corpora (pure library call)."""
    report = {"original_eer": group_eers(asv_score(original_enroll, original_trial)), "eer": {}}
    for sc in scenarios:
        if sc == "ignorant":
            matrix = asv_score(original_enroll, anon_trial)
        else:
            if anon_enroll is None:
                raise EvaluationError("lazy-informed scenario needs anonymized enrollment data")
            matrix = asv_score(anon_enroll, anon_trial)
        report["eer"][sc] = group_eers(matrix, sc)
    report["gvd"] = _per_group(lambda spk: gvd(original_trial, anon_trial, speakers=spk), original_trial)
    a = one_per_speaker(anon_trial)
    b = one_per_speaker(original_trial)
    bw = median_bandwidth(a, b)
    report["mmd"] = mmd(a, b, bw)
    report["mmd_bandwidth"] = bw
    report["notes"] = WER_NOTE
    return report


def run_evaluate(m: Manifest, strategy=None, scenarios=None, write: bool = True) -> dict:
    settings = _anon_settings(m, {"strategy": strategy})
    corpora = build_corpora(m)
    if corpora.enrollment is None or corpora.trial is None:
        raise ConfigError("evaluation needs enrollment and trial corpora")
    ev = m.section("evaluate")
    scenarios = scenarios or ev.get("scenarios", list(SCENARIOS))
    strat = settings["strategy"]
    seeds = settings["seeds"]
    try:
        if strat == "identity":
            anon_trial, anon_enroll = corpora.trial, corpora.enrollment
        else:
            paths = {
                split: anonymized_path(m, c.name, strat, seeds[split])
                for split, c in (("enrollment", corpora.enrollment), ("trial", corpora.trial))
            }
            missing = [str(p) for p in paths.values() if not p.exists()]
            if missing:
                raise DataError(f"anonymized corpora missing (run anonymize first): {missing}")
            anon_trial = read_corpus(paths["trial"])
            anon_enroll = read_corpus(paths["enrollment"])
        report = evaluate_corpora(corpora.enrollment, corpora.trial, anon_trial, anon_enroll, scenarios)
    except (DataError, ConfigError):
        raise
    except (ValueError, ZeroDivisionError) as exc:
        raise EvaluationError(str(exc)) from exc
    report["strategy"] = strat
    report["scenarios"] = list(scenarios)
    report["config_digest"] = m.digest
    if strat == "gan":
        report["threshold_violations"] = len(threshold_violations(corpora.trial, anon_trial, settings["threshold"]))
        ckpt = resolve_checkpoint(m, settings.get("checkpoint"))
        gen = load_generator(ckpt)
        n = int(ev.get("mmd_samples", 500))
        fake = predict(gen, sample_noise(n, gen.spec.input_dim, np.random.default_rng([m.seed, 20])))
        real = corpora.held_out[np.random.default_rng([m.seed, 21]).choice(len(corpora.held_out), size=min(n, len(corpora.held_out)), replace=False)]
        report["generator_mmd"] = mmd(fake, real)
    if write:
        write_json(m.output_dir / "reports" / f"evaluate.{strat}.json", report)
    return report


# -- ablation --------------------------------------------------------------------------


GRID_KEYS = {"gamma": "gamma", "noise_dim": "noise_dim", "architecture": "architecture", "noise": "noise_dim"}


def expand_grid(grid: dict) -> list[dict]:
    axes = {k: v for k, v in grid.items() if k != "workers"}
    unknown = set(axes) - set(GRID_KEYS)
    if unknown:
        raise ConfigError(f"unknown grid axis {sorted(unknown)}")
    names = sorted(axes)
    cells = []
    for values in itertools.product(*(axes[n] if isinstance(axes[n], list) else [axes[n]] for n in names)):
        cells.append({GRID_KEYS[n]: v for n, v in zip(names, values)})
    return cells


def cell_manifest(m: Manifest, cell: dict, index: int) -> Manifest:
    raw = copy.deepcopy(m.raw)
    raw["seed"] = m.seed + index
    raw.setdefault("train", {})
    raw["train"].pop("seed", None)
    raw["train"].update(cell)
    raw["output_dir"] = str(m.output_dir / "ablation" / f"cell_{index:02d}")
    return Manifest(raw, m.base_dir)


def _run_cell(args):
    raw, base_dir, index, cell = args
    os.environ.pop(OUTPUT_ENV, None)
    cm = Manifest(raw, Path(base_dir))
    run_train(cm)
    run_anonymize(cm, strategy="gan", force=True)
    report = run_evaluate(cm, strategy="gan")
    return {"cell": index, "seed": cm.seed, **cell, "report": report}


def run_ablation(m: Manifest, grid: dict) -> list[dict]:
    cells = expand_grid(grid)
    jobs = []
    for i, cell in enumerate(cells):
        cm = cell_manifest(m, cell, i)
        jobs.append((cm.raw, str(cm.base_dir), i, cell))
    workers = int(grid.get("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_run_cell, jobs))
    else:
        rows = [_run_cell(j) for j in jobs]
    write_json(m.output_dir / "reports" / "ablation.json", {"config_digest": m.digest, "grid": grid, "rows": rows})
    return rows


# -- visualization ---------------------------------------------------------------------


def run_visualize(m: Manifest, checkpoints=None) -> dict:
    v = m.section("visualize")
    proj = ProjectionConfig.from_dict({"seed": m.seed, **v.get("projection", {})})
    corpora = build_corpora(m)
    if checkpoints is None:
        checkpoints = v.get("checkpoints")
    if checkpoints is None:
        cfg = m.train_config().resolve(corpora.train.shape[1])
        checkpoints = [checkpoint_path(m.output_dir, it) for it in checkpoint_iterations(cfg) if it > 0]
    paths = []
    for c in checkpoints:
        p = Path(c)
        p = p if p.is_absolute() or p.exists() else m._path(p)
        paths.append(p)
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise DataError(f"checkpoint file(s) not found: {', '.join(missing)}")
    if corpora.trial is not None:
        real = one_per_speaker(corpora.trial)
    else:
        real = corpora.held_out
    n_real = min(int(v.get("real_samples", 200)), len(real))
    real = real[np.random.default_rng([m.seed, 30]).choice(len(real), size=n_real, replace=False)]
    n_gen = int(v.get("generated_samples", n_real))
    fig_dir = m.output_dir / "figures"
    out = {"config_digest": m.digest, "projection": proj.__dict__, "checkpoints": []}
    for p in paths:
        gen = load_generator(p)
        fake = predict(gen, sample_noise(n_gen, gen.spec.input_dim, np.random.default_rng([m.seed, 31])))
        labels = ["real"] * len(real) + ["generated"] * len(fake)
        projection = tsne(np.vstack([real, fake]), proj, labels)
        stem = p.stem
        svg = render_overlap(projection, fig_dir / f"{stem}.svg", title=stem)
        csv_path = write_points_csv(projection, fig_dir / f"{stem}.csv")
        out["checkpoints"].append(
            {
                "checkpoint": p.name,
                "svg": svg.name,
                "csv": csv_path.name,
                "nn1_label_error": nn1_label_error(projection.points, labels),
                "final_kl": projection.kl_history[-1] if projection.kl_history else None,
            }
        )
    write_json(m.output_dir / "reports" / "visualize.json", out)
    return out
