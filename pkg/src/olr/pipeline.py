"""Pipeline stages over one output directory.

Every stage reads and writes content-addressed artifacts under the output
root, so changing one config section only invalidates the stages that depend
on it. Finished artifacts are reused unless ``force`` is set.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import analytics as A
from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import ClassifierModel, label_accuracy, predict_probs, train_classifier
from .config import config_hash, dataset_config, occlusion_rule, siamese_config, ssim_params, stage_hash
from .dataset import (Dataset, generate_synthetic, load_image_directory, rule_pairs,
                      save_image_directory, split, write_ppm)
from .decoder import DecoderModel, decode, mean_image, montage, ssim_rgb_batch, train_decoder
from .editing import evaluate_edits, fit_all, parse_edit, edit_and_decode
from .siamese import SiameseModel, embed, pair_error, train_siamese
from .training import log


class MissingArtifact(FileNotFoundError):
    def __init__(self, path: Path, producer: str):
        super().__init__(f"missing prerequisite {path} (run `olr {producer}` first)")
        self.path = path


@dataclass
class Workspace:
    out: Path
    cfg: dict
    data_dir: Path | None = None       # external image directory replacing the synthetic set
    force: bool = False
    metrics: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict)

    def __post_init__(self):
        self.out = Path(self.out)
        self.out.mkdir(parents=True, exist_ok=True)

    @property
    def seed(self) -> int:
        return int(self.cfg["seed"])

    def path(self, stage: str, kind: str, suffix: str = "") -> Path:
        return self.out / f"{kind}-{stage_hash(self.cfg, stage)}{suffix}"

    @property
    def dataset_path(self) -> Path:
        return self.data_dir if self.data_dir is not None else self.path("data", "data")

    @property
    def classifier_path(self) -> Path:
        return self.path("classifier", "classifier", ".olr")

    @property
    def siamese_path(self) -> Path:
        return self.path("siamese", "siamese", ".olr")

    @property
    def embeddings_path(self) -> Path:
        return self.path("siamese", "embeddings", ".olr")

    @property
    def decoder_path(self) -> Path:
        return self.path("decoder", "decoder", ".olr")

    def analysis_dir(self) -> Path:
        d = self.out / f"analysis-{stage_hash(self.cfg, 'siamese')}"
        d.mkdir(exist_ok=True)
        return d

    def require(self, path: Path, producer: str) -> Path:
        if not path.exists():
            raise MissingArtifact(path, producer)
        return path

    def record(self, name: str, path: Path) -> None:
        self.artifacts[name] = str(path)

    # -- loaders --------------------------------------------------------------

    def dataset(self) -> tuple[Dataset, Dataset, Dataset]:
        if "data" not in self._cache:
            full = load_image_directory(self.require(self.dataset_path, "gen-data"))
            if len(full) == 0:
                raise ValueError(f"dataset directory {self.dataset_path} holds no images")
            train, test = split(full, self.cfg["dataset"]["split_fraction"], self.seed)
            self._cache["data"] = (full, train, test)
        return self._cache["data"]

    def classifier(self) -> ClassifierModel:
        full = self.dataset()[0]
        tensors = load_checkpoint(self.require(self.classifier_path, "train-classifier"))
        return ClassifierModel.from_tensors(tensors, full.label_names)

    def siamese(self) -> SiameseModel:
        return SiameseModel.from_tensors(load_checkpoint(self.require(self.siamese_path,
                                                                      "train-siamese")))

    def decoder(self) -> DecoderModel:
        return DecoderModel.from_tensors(load_checkpoint(self.require(self.decoder_path,
                                                                      "train-decoder")))

    def embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        """(train, test) embeddings from the embeddings checkpoint."""
        tensors = load_checkpoint(self.require(self.embeddings_path, "embed"))
        e, is_test = tensors["embeddings"], tensors["is_test"] > 0
        return e[~is_test], e[is_test]

    def manifest(self, subcommand: str, status: str, error: str | None = None) -> dict:
        return {"subcommand": subcommand, "status": status, "error": error,
                "config_hash": config_hash(self.cfg),
                "stage_hashes": {s: stage_hash(self.cfg, s)
                                 for s in ("data", "classifier", "siamese", "decoder", "probe")},
                "seeds": {"dataset": self.seed, "split": self.seed, "classifier": self.seed,
                          "siamese": self.seed, "decoder": self.seed, "probe": self.seed,
                          "evaluation": self.seed},
                "config": self.cfg, "metrics": self.metrics, "artifacts": self.artifacts}


def write_manifest(out: Path, manifest: dict) -> Path:
    path = Path(out) / "manifests" / f"{manifest['subcommand']}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
    os.replace(tmp, path)
    return path


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return "nan" if np.isnan(x) else repr(float(x))


def _stem(name: str) -> str:
    return Path(name).stem


# -- stages -------------------------------------------------------------------------

def gen_data(ws: Workspace) -> Path:
    if ws.data_dir is not None:
        ws.record("dataset", ws.require(ws.data_dir, "gen-data"))
        return ws.data_dir
    path = ws.dataset_path
    if not (path / "labels.csv").exists() or ws.force:
        ds = generate_synthetic(dataset_config(ws.cfg))
        save_image_directory(ds, path, ws.seed)
        log.info("wrote %d images to %s", len(ds), path)
    ws.record("dataset", path)
    ws.metrics["num_images"] = len(ws.dataset()[0])
    return path


def run_train_classifier(ws: Workspace) -> Path:
    full, train, test = ws.dataset()
    path = ws.classifier_path
    if not path.exists() or ws.force:
        t = ws.cfg["training"]
        c = t["classifier"]
        model = train_classifier(train, occlusion_rule(ws.cfg), c["epochs"], ws.seed,
                                 t["batch_size"], c["learning_rate"], c["occlusion_probability"],
                                 tuple(c["channels"]))
        save_checkpoint(model.to_tensors(), path)
    acc = label_accuracy(ws.classifier(), test)
    ws.metrics["classifier_accuracy"] = float(acc.mean())
    ws.metrics["classifier_label_accuracy"] = dict(zip(full.label_names, acc.tolist()))
    ws.record("classifier", path)
    return path


def run_predict(ws: Workspace) -> Path:
    _, _, test = ws.dataset()
    probs = predict_probs(ws.classifier(), test.images)
    path = ws.path("classifier", "predictions", ".csv")
    _write_csv(path, ["filename"] + [f"p_{i}" for i in range(probs.shape[1])],
               [[name, *(repr(float(p)) for p in row)] for name, row in zip(test.filenames, probs)])
    ws.record("predictions", path)
    return path


def run_train_siamese(ws: Workspace) -> Path:
    full, train, test = ws.dataset()
    clf = ws.classifier()
    path = ws.siamese_path
    rule = occlusion_rule(ws.cfg)
    if not path.exists() or ws.force:
        t = ws.cfg["training"]
        config = siamese_config(ws.cfg, full.num_labels)
        model = train_siamese(clf, train, config, t["siamese"]["epochs"], ws.seed, rule,
                              t["batch_size"], t["siamese"]["learning_rate"],
                              ws.cfg["siamese"]["temperature"])
        save_checkpoint(model.to_tensors(), path)
    ws.metrics["pair_error"] = pair_error(ws.siamese(), clf, test, rule,
                                          ws.cfg["evaluation"]["pair_triplets"], ws.seed)
    ws.record("siamese", path)
    return path


def run_embed(ws: Workspace) -> Path:
    full, _, test = ws.dataset()
    model = ws.siamese()
    path = ws.embeddings_path
    e = embed(model, full.images)
    is_test = np.isin(full.ids, test.ids).astype(np.float32)
    save_checkpoint({"embeddings": e.astype(np.float32), "is_test": is_test}, path)
    row = int(np.prod(e.shape[1:]))
    index = path.with_suffix(".csv")
    _write_csv(index, ["filename", "offset"],
               [[name, i * row] for i, name in enumerate(full.filenames)])
    ws.record("embeddings", path)
    ws.record("embeddings_index", index)
    return path


def run_train_decoder(ws: Workspace) -> Path:
    full, train, test = ws.dataset()
    siamese = ws.siamese()
    path = ws.decoder_path
    if not path.exists() or ws.force:
        d, t = ws.cfg["decoder"], ws.cfg["training"]
        emb_train = ws.embeddings()[0] if ws.embeddings_path.exists() else None
        model = train_decoder(siamese, train, d["a"], t["decoder"]["epochs"], ws.seed,
                              t["batch_size"], t["decoder"]["learning_rate"], ssim_params(ws.cfg),
                              tuple(d["channels"]), d["base_channels"], emb_train)
        save_checkpoint(model.to_tensors(), path)
    ws.record("decoder", path)
    return path


def run_analyze_corr(ws: Workspace) -> Path:
    full, _, test = ws.dataset()
    _, e_test = ws.embeddings()
    norms = A.norm_table(e_test)
    r = A.pearson_matrix(norms)
    names = full.label_names
    path = ws.analysis_dir() / "correlation.csv"
    _write_csv(path, ["label", *names], [[n, *(_fmt(v) for v in row)] for n, row in zip(names, r)])
    positive = test.labels > 0
    ratios = {}
    for l, name in enumerate(names):
        pos, neg = norms[positive[:, l], l], norms[~positive[:, l], l]
        ratios[name] = float(pos.mean() / neg.mean()) if len(pos) and len(neg) else float("nan")
    ws.metrics["norm_ratio"] = ratios
    ws.metrics["rule_correlations"] = {
        f"{names[i]}~{names[j]}": {"sign": s, "r": float(r[i, j])}
        for i, j, s in rule_pairs(dataset_config(ws.cfg)) if i < len(names) and j < len(names)}
    ws.record("correlation", path)
    return path


def run_analyze_pca(ws: Workspace, labels=None, montage_count: int = 8) -> list[Path]:
    full, _, test = ws.dataset()
    _, e_test = ws.embeddings()
    names = full.label_names
    picked = range(len(names)) if labels is None else [full.label_index(l) for l in labels]
    out_dir = ws.analysis_dir()
    written, summary = [], {}
    ratio_rows = []
    for l in picked:
        if not 0 <= l < len(names):
            raise IndexError(f"label index {l} out of range for {len(names)} labels")
        res = A.pca(e_test[:, l, :])
        pb = A.point_biserial(res.projections, test.labels[:, l])
        summary[names[l]] = {"explained_ratios": res.explained_ratios.tolist(),
                             "point_biserial": pb}
        ratio_rows.append([names[l], *(_fmt(v) for v in res.explained_ratios)])
        ranking = A.rank_by_projection(e_test, l, test.ids)
        path = out_dir / f"ranking-{names[l]}.csv"
        _write_csv(path, ["rank", "image_id", "projection"],
                   [[i, image_id, repr(p)] for i, (image_id, p) in enumerate(ranking)])
        written.append(path)
        if montage_count and len(ranking) >= 2:
            at = np.linspace(0, len(ranking) - 1, min(montage_count, len(ranking))).round().astype(int)
            by_id = {int(i): j for j, i in enumerate(test.ids)}
            strip = montage([test.images[by_id[ranking[i][0]]] for i in at])
            write_ppm(out_dir / f"ranking-{names[l]}.ppm", strip)
    k = e_test.shape[2]
    path = out_dir / ("pca.csv" if labels is None else f"pca-{'-'.join(names[l] for l in picked)}.csv")
    _write_csv(path, ["label", *(f"ratio_{i}" for i in range(k))], ratio_rows)
    written.insert(0, path)
    ws.metrics.setdefault("pca", {}).update(summary)
    ws.record("pca", path)
    return written


def run_analyze_probe(ws: Workspace) -> float:
    _, train, test = ws.dataset()
    e_train, e_test = ws.embeddings()
    p = ws.cfg["training"]["probe"]
    res = A.linear_probe(e_train, train.labels, e_test, test.labels, p["epochs"], ws.seed,
                         p["learning_rate"], ws.cfg["training"]["batch_size"])
    ws.metrics["probe_accuracy"] = res.accuracy
    ws.metrics["probe_label_accuracy"] = dict(zip(test.label_names, res.per_label.tolist()))
    if ws.classifier_path.exists():
        clf_acc = float(label_accuracy(ws.classifier(), test).mean())
        ws.metrics["classifier_accuracy"] = clf_acc
        ws.metrics["probe_gap"] = clf_acc - res.accuracy
    print(f"probe accuracy {res.accuracy:.4f}")
    return res.accuracy


def run_reconstruct(ws: Workspace, count: int | None = None) -> Path:
    _, train, test = ws.dataset()
    siamese, decoder = ws.siamese(), ws.decoder()
    rec = decode(decoder, embed(siamese, test.images))
    baseline = np.broadcast_to(mean_image(train), test.images.shape)
    ws.metrics["reconstruction_ssim"] = float(ssim_rgb_batch(rec, test.images).mean())
    ws.metrics["mean_image_ssim"] = float(ssim_rgb_batch(baseline, test.images).mean())
    out_dir = ws.out / f"reconstructions-{stage_hash(ws.cfg, 'decoder')}"
    out_dir.mkdir(exist_ok=True)
    count = ws.cfg["evaluation"]["num_reconstructions"] if count is None else count
    for i in range(min(count, len(test))):
        stem = _stem(test.filenames[i])
        write_ppm(out_dir / f"{stem}-recon.ppm", rec[i])
        write_ppm(out_dir / f"{stem}-pair.ppm", montage([test.images[i], rec[i]]))
    ws.record("reconstructions", out_dir)
    return out_dir


def _edits_dir(ws: Workspace) -> Path:
    d = ws.out / f"edits-{stage_hash(ws.cfg, 'decoder')}"
    d.mkdir(exist_ok=True)
    return d


def _safe(text: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "._" else {"+": "add_", "-": "del_"}.get(ch, "_")
                   for ch in text.strip())


def run_edit(ws: Workspace, edits: list[str], images=None) -> list[Path]:
    """Triptychs (original | reconstruction | edited reconstruction) for chosen test images."""
    full, train, test = ws.dataset()
    parsed = [parse_edit(e) for e in edits]
    for e in parsed:
        if isinstance(e.label, str) and e.label not in full.label_names:
            raise KeyError(f"unknown label {e.label!r}; labels are {full.label_names}")
    siamese, decoder = ws.siamese(), ws.decoder()
    e_train = ws.embeddings()[0] if ws.embeddings_path.exists() else embed(siamese, train.images)
    gaussians = fit_all(e_train, train.labels)
    if images is None:
        images = range(min(ws.cfg["evaluation"]["num_triptychs"], len(test)))
    out_dir, written = _edits_dir(ws), []
    tag = "_".join(_safe(e) for e in edits)
    for i in images:
        rec, edited = edit_and_decode(siamese, decoder, test.images[i], parsed, gaussians,
                                      ws.seed + int(i), full.label_names)
        path = out_dir / f"{_stem(test.filenames[i])}-{tag}.ppm"
        write_ppm(path, montage([test.images[i], rec, edited]))
        written.append(path)
    ws.record("edits", out_dir)
    return written


def run_edit_evaluation(ws: Workspace) -> dict:
    """Classifier-judged add/remove efficacy over held-out images."""
    _, train, test = ws.dataset()
    clf, siamese, decoder = ws.classifier(), ws.siamese(), ws.decoder()
    e_train = ws.embeddings()[0]
    gaussians = fit_all(e_train, train.labels)
    ev = ws.cfg["evaluation"]
    reports = {}
    for name, op, s in (("add", "+", ev["edit_scale"]), ("add_s1.5", "+", 1.5), ("remove", "-", 1.0)):
        r = evaluate_edits(clf, siamese, decoder, test, gaussians, op, ev["edit_images"], s, ws.seed)
        reports[name] = asdict(r)
    ws.metrics["editing"] = reports
    return reports


def auto_triptychs(ws: Workspace) -> list[Path]:
    """One add and one remove triptych per image, choosing labels the image lacks / has."""
    full, _, test = ws.dataset()
    rng = np.random.default_rng([ws.seed, 5])
    written = []
    for i in range(min(ws.cfg["evaluation"]["num_triptychs"], len(test))):
        have = np.flatnonzero(test.labels[i] > 0)
        lack = np.flatnonzero(test.labels[i] == 0)
        if len(lack):
            name = full.label_names[int(rng.choice(lack))]
            written += run_edit(ws, [f"+{name}:1.5"], [i])
        if len(have):
            name = full.label_names[int(rng.choice(have))]
            written += run_edit(ws, [f"-{name}"], [i])
    return written


def run_pipeline(ws: Workspace) -> dict:
    gen_data(ws)
    run_train_classifier(ws)
    run_predict(ws)
    run_train_siamese(ws)
    run_embed(ws)
    run_train_decoder(ws)
    run_analyze_corr(ws)
    run_analyze_pca(ws)
    run_analyze_probe(ws)
    run_reconstruct(ws)
    auto_triptychs(ws)
    run_edit_evaluation(ws)
    return ws.metrics
