"""Active-learning runs: single arms, the four-arm comparison, the ablation grid, plots.

An arm directory holds ``report.json``, ``log.csv``, ``selection_t{t}.json``,
``state_t{t}.json`` and ``ckpt_t{t}.bin`` per iteration, plus ``cluster.json``
and ``features.feat`` for representative arms. Pretrained reconstruction
weights and features are cached by content hash so arms sharing a pool and
pretraining config reuse them.
"""
from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from ._util import derive_seed, single_threaded
from .cluster import kmeans_best
from .config import ExperimentConfig
from .errors import BudgetError, DataError
from .features import FeatureMatrix, extract, read_features, write_features
from .imaging import Dataset, load_dir, load_manifest, split_ids, synth_dataset
from .net import UNet, build, load_checkpoint, save_checkpoint, transfer_weights
from .select import (
    SelectionState,
    random_result,
    rank_representatives,
    select_from_model,
    select_next_result,
    select_random,
)
from .seg import evaluate, train_seg
from .ssl import pretrain, write_loss_log

log = logging.getLogger(__name__)

TABLE1_ARMS = (("random", False), ("random", True), ("representative", False), ("representative", True))
TABLE2_GRID = ((5, 1), (5, 2), (10, 1), (10, 2))


@dataclass
class RunReport:
    arm: str
    config: dict
    records: list[dict] = field(default_factory=list)
    wall_times: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    split_hash: str = ""
    config_hash: str = ""
    status: str = "running"

    def to_dict(self) -> dict:
        return {
            "arm": self.arm,
            "status": self.status,
            "config_hash": self.config_hash,
            "split_hash": self.split_hash,
            "records": self.records,
            "wall_times": self.wall_times,
            "artifacts": self.artifacts,
            "config": self.config,
        }

    def save(self, path) -> Path:
        path = Path(path)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "RunReport":
        d = json.loads(Path(path).read_text())
        return cls(d["arm"], d["config"], d["records"], d.get("wall_times", {}), d.get("artifacts", {}),
                   d.get("split_hash", ""), d.get("config_hash", ""), d.get("status", "done"))

    def dice_by_t(self) -> list[float]:
        return [r["mean_dice"] for r in self.records]


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    dc = cfg.data
    if dc.source == "synth":
        return synth_dataset(dc.n, dc.size, dc.synth_seed)
    if dc.source == "dir":
        return load_dir(dc.images, dc.masks, dc.size, workers=dc.workers)
    return load_manifest(dc.manifest, dc.size, workers=dc.workers)


def _read_ids(path) -> list[str]:
    p = Path(path)
    if p.suffix == ".json":
        return [str(i) for i in json.loads(p.read_text())]
    return [line.strip() for line in p.read_text().splitlines() if line.strip()]


def make_split(cfg: ExperimentConfig, dataset: Dataset) -> tuple[Dataset, Dataset]:
    sc = cfg.split
    if sc.pool_ids_file and sc.test_ids_file:
        pool_ids, test_ids = _read_ids(sc.pool_ids_file), _read_ids(sc.test_ids_file)
        if set(pool_ids) & set(test_ids):
            raise DataError("pool and test ID lists overlap")
    else:
        pool_ids, test_ids = split_ids(dataset.ids, sc.pool_size, sc.test_size, cfg.seeds.resolve("split"))
    return dataset.subset(pool_ids, "pool"), dataset.subset(test_ids, "test")


def split_hash(pool: Dataset, test: Dataset) -> str:
    h = hashlib.sha256()
    h.update(pool.fingerprint().encode())
    h.update(b"|")
    h.update(test.fingerprint().encode())
    return h.hexdigest()[:16]


def _ssl_key(cfg: ExperimentConfig, pool: Dataset) -> str:
    blob = json.dumps({
        "pool": pool.fingerprint(),
        "net": cfg.net.to_dict(),
        "ssl": replace(cfg.ssl, seed=cfg.seeds.resolve("ssl")).to_dict(),
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def pretrained_model(cfg: ExperimentConfig, pool: Dataset, cache_dir: Path) -> tuple[UNet, Path]:
    """Reconstruction-pretrained U-Net for this pool, trained once per cache key."""
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = _ssl_key(cfg, pool)
    path = cache_dir / f"ssl_{key}.bin"
    if path.exists():
        return load_checkpoint(path), path
    net_cfg = replace(cfg.net, head="reconstruction")
    ssl_cfg = replace(cfg.ssl, seed=cfg.seeds.resolve("ssl"))
    model, history = pretrain(pool, net_cfg, ssl_cfg)
    write_loss_log(history, cache_dir / f"ssl_{key}_loss.csv")
    save_checkpoint(model, path, meta={"loss_history": history})
    return load_checkpoint(path), path


def pooled_features(cfg: ExperimentConfig, model: UNet, pool: Dataset, ssl_path: Path, cache_dir: Path) -> tuple[FeatureMatrix, Path]:
    path = cache_dir / f"{ssl_path.stem}_g{cfg.g}{'_std' if cfg.standardize_features else ''}.feat"
    if path.exists():
        return read_features(path), path
    fm = extract(model, pool, cfg.g, standardize=cfg.standardize_features)
    write_features(fm, path)
    return read_features(path), path


def _append_log(path: Path, record: dict) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(["t", "labeled_count", "mean_dice", "train_loss", "seconds"])
        w.writerow([record["t"], record["labeled_count"], repr(record["mean_dice"]),
                    repr(record["train_loss"]), f"{record['seconds']:.3f}"])


def run_arm(cfg: ExperimentConfig, out_dir, resume: bool = True, cache_dir=None,
            stop_after: int | None = None) -> RunReport:
    """Run (or resume) one active-learning arm and return its report.

    ``stop_after=t`` stops cleanly after iteration ``t`` has been persisted,
    which is what an interruption at that point leaves on disk.
    """
    ctx = single_threaded() if cfg.deterministic else contextlib.nullcontext()
    with ctx:
        return _run_arm(cfg, Path(out_dir), resume, Path(cache_dir) if cache_dir else None, stop_after)


def _run_arm(cfg: ExperimentConfig, out: Path, resume: bool, cache_dir: Path | None,
             stop_after: int | None) -> RunReport:
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = cache_dir or out / "cache"
    report_path = out / "report.json"
    report = RunReport(cfg.arm, cfg.to_dict(), config_hash=cfg.fingerprint())
    if resume and report_path.exists():
        prev = RunReport.load(report_path)
        if prev.config_hash == report.config_hash:
            report = prev
            report.status = "running"
        else:
            log.warning("config changed; restarting %s from scratch", out)
    if not report.records:
        for stale in ["log.csv", *(p.name for p in out.glob("*_t*.*"))]:
            (out / stale).unlink(missing_ok=True)

    t0 = time.perf_counter()
    dataset = load_dataset(cfg)
    pool, test = make_split(cfg, dataset)
    if not pool.labeled or not test.labeled:
        raise DataError("pool and test samples must all carry masks (annotations are read from mask files)")
    if cfg.C + cfg.T * cfg.batch > len(pool):
        raise BudgetError(f"C + T*batch = {cfg.C + cfg.T * cfg.batch} exceeds pool of {len(pool)}")
    report.split_hash = split_hash(pool, test)
    report.wall_times.setdefault("load", time.perf_counter() - t0)

    need_ssl = cfg.method == "representative" or cfg.warm_start
    ssl_model = features = None
    if need_ssl:
        t0 = time.perf_counter()
        ssl_model, ssl_path = pretrained_model(cfg, pool, cache_dir)
        report.artifacts["ssl_checkpoint"] = str(ssl_path)
        if cfg.method == "representative":
            features, feat_path = pooled_features(cfg, ssl_model, pool, ssl_path, cache_dir)
            report.artifacts["features"] = str(feat_path)
        report.wall_times.setdefault("pretrain_and_extract", time.perf_counter() - t0)

    training_seed = cfg.seeds.resolve("training")
    seg_cfg = replace(cfg.seg, seed=training_seed)
    start_t = len(report.records)
    if start_t == 0:
        state = None
        model = build(replace(cfg.net, head="segmentation"), derive_seed(training_seed, "seg-init"),
                      input_size=cfg.data.size)
        if cfg.warm_start:
            transfer_weights(ssl_model, model, cfg.transfer_scope)
    else:
        state = SelectionState.load(out / f"state_t{start_t - 1}.json")
        model = load_checkpoint(out / f"ckpt_t{start_t - 1}.bin")

    for t in range(start_t, cfg.T + 1):
        tick = time.perf_counter()
        result, state = _select(cfg, t, state, pool, features, out)
        result.save(out / f"selection_t{t}.json")
        state.save(out / f"state_t{t}.json")

        labeled = pool.subset(state.labeled_ids, "labeled")
        epochs = cfg.seg.base_epochs if t == 0 else cfg.seg.iter_epochs
        model, history = train_seg(model, labeled, seg_cfg, epochs, stage=t)
        dice = evaluate(model, test, cfg.seg.threshold)
        save_checkpoint(model, out / f"ckpt_t{t}.bin", meta={"t": t, "arm": cfg.arm})

        record = {"t": t, "labeled_count": len(state.labeled_ids), "mean_dice": dice,
                  "train_loss": history[-1], "seconds": time.perf_counter() - tick}
        expected = cfg.C + t * cfg.batch
        if record["labeled_count"] != expected:
            raise RuntimeError(f"labeled count {record['labeled_count']} != {expected} at t={t}")
        _append_log(out / "log.csv", record)
        report.records.append({k: record[k] for k in ("t", "labeled_count", "mean_dice", "train_loss")})
        report.wall_times[f"t{t}"] = record["seconds"]
        report.artifacts[f"t{t}"] = {"selection": f"selection_t{t}.json", "checkpoint": f"ckpt_t{t}.bin"}
        report.save(out / "report.json")
        log.info("%s t=%d labeled=%d dice=%.4f", cfg.arm, t, record["labeled_count"], dice)
        if stop_after is not None and t >= stop_after and t < cfg.T:
            report.status = "stopped"
            report.save(out / "report.json")
            return report

    report.status = "done"
    report.save(out / "report.json")
    return report


def _select(cfg: ExperimentConfig, t: int, state: SelectionState | None, pool: Dataset,
            features: FeatureMatrix | None, out: Path):
    kseed = cfg.seeds.resolve("kmeans")
    sseed = cfg.seeds.resolve("selection")
    if cfg.method == "random":
        if t == 0:
            ids = select_random(pool.ids, cfg.C, derive_seed(sseed, "random", 0))
            taken = set(ids)
            state = SelectionState(tuple(ids), tuple(i for i in pool.ids if i not in taken), (), 0, "random")
            return random_result(ids, 0), state
        ids = select_random(state.pool_ids, cfg.batch, derive_seed(sseed, "random", t))
        return random_result(ids, t), state.advance(ids)

    if t == 0:
        cmodel = kmeans_best(features, cfg.k, kseed, cfg.restarts, cfg.kmeans_max_iter, cfg.kmeans_init)
        cmodel.save(out / "cluster.json")
        return select_from_model(features, cmodel, cfg.C)
    if cfg.recluster:
        cmodel = kmeans_best(features, cfg.k, derive_seed(kseed, "recluster", t), cfg.restarts,
                             cfg.kmeans_max_iter, cfg.kmeans_init)
        cmodel.save(out / f"cluster_t{t}.json")
        state = replace(state, rankings=rank_representatives(features, cmodel))
    return select_next_result(state, cfg.batch)


def _arm_label(method: str, warm: bool) -> str:
    return f"{method}_{'warm' if warm else 'cold'}"


def write_table(path, columns: dict[str, RunReport], index_key: str = "labeled_count") -> Path:
    """CSV with one row per iteration and one Dice column per named report."""
    path = Path(path)
    names = list(columns)
    first = columns[names[0]]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", index_key, *names])
        for i, rec in enumerate(first.records):
            w.writerow([rec["t"], rec[index_key], *(repr(columns[n].records[i]["mean_dice"]) for n in names)])
    return path


def run_table1(base_cfg: ExperimentConfig, out_dir, resume: bool = True) -> dict[str, RunReport]:
    """Random vs representative selection, each with and without pretrained initialization."""
    out = Path(out_dir)
    reports = {}
    for method, warm in TABLE1_ARMS:
        cfg = replace(base_cfg, method=method, warm_start=warm)
        reports[_arm_label(method, warm)] = run_arm(cfg, out / _arm_label(method, warm), resume, out / "cache")
    hashes = {r.split_hash for r in reports.values()}
    if len(hashes) != 1:
        raise RuntimeError(f"arms saw different pool/test splits: {hashes}")
    write_table(out / "table1.csv", reports)
    return reports


def run_table2(base_cfg: ExperimentConfig, out_dir, resume: bool = True) -> dict[str, RunReport]:
    """Cold-start grid over cluster count k and pooling grid g, plus the random column."""
    out = Path(out_dir)
    cold = replace(base_cfg, warm_start=False)
    reports = {"random": run_arm(replace(cold, method="random"), out / "random", resume, out / "cache")}
    for k, g in TABLE2_GRID:
        name = f"k{k}_g{g}"
        reports[name] = run_arm(replace(cold, method="representative", k=k, g=g), out / name, resume, out / "cache")
    write_table(out / "table2.csv", reports)
    return reports


def run_seeds(fn, base_cfg: ExperimentConfig, out_dir, seeds: Sequence[int], resume: bool = True) -> dict:
    """Repeat a table run per seed and write mean/std summaries.

    Returns ``{seed: {column: RunReport}}``.
    """
    out = Path(out_dir)
    per_seed = {s: fn(base_cfg.with_seed(s), out / f"seed_{s}", resume) for s in seeds}
    columns = list(next(iter(per_seed.values())))
    first = per_seed[seeds[0]][columns[0]]
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "labeled_count", *(f"{c}_{s}" for c in columns for s in ("mean", "std"))])
        for i, rec in enumerate(first.records):
            row = [rec["t"], rec["labeled_count"]]
            for c in columns:
                vals = [per_seed[s][c].records[i]["mean_dice"] for s in seeds]
                row += [repr(statistics.fmean(vals)), repr(statistics.stdev(vals) if len(vals) > 1 else 0.0)]
            w.writerow(row)
    return per_seed


def plot(reports: Sequence[RunReport] | dict[str, RunReport], out_path) -> tuple[Path, Path]:
    """Mean Dice against labeled-set size, one line per arm, plus the plotted data as CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    items = list(reports.items()) if isinstance(reports, dict) else [(r.arm, r) for r in reports]
    if not items:
        raise DataError("no reports to plot")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out_path.with_suffix(".csv")
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["arm", "t", "labeled_count", "mean_dice"])
        for name, rep in items:
            for rec in rep.records:
                w.writerow([name, rec["t"], rec["labeled_count"], repr(rec["mean_dice"])])
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, rep in items:
        ax.plot([r["labeled_count"] for r in rep.records], rep.dice_by_t(), marker="o", label=name)
    ax.set_xlabel("labeled samples")
    ax.set_ylabel("mean Dice")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path, csv_path
