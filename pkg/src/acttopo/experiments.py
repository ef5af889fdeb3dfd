"""End-to-end experiment drivers behind the CLI.

Every command reads a RunConfig, reuses the artifact store under
``config.out_dir`` (model bundle, adversary records, persistence artifacts,
reports) and returns a JSON-serializable report dict. Seeds are recorded in
every manifest; reruns with the same config are bit-for-bit reproducible.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import attacks, data, diagrams, graphs, learn, nn, persistence, vectors
from .errors import UsageError

logger = logging.getLogger(__name__)

# Reported full-scale accuracies for the reference architectures, kept in
# report headers for comparison with desk-scale runs.
REFERENCE_ACCURACY = {
    "subgraph_svm": {
        "mnist": {"ccff-relu": 0.893, "ccff-sigmoid": 0.891},
        "fashion-mnist": {"ccff-relu": 0.893, "ccff-sigmoid": 0.800},
    },
    "network": {
        "mnist": {"ccff-relu": 0.976, "ccff-sigmoid": 0.888},
        "fashion-mnist": {"ccff-relu": 0.900, "ccff-sigmoid": 0.802},
    },
    "recovery": {
        "mnist": {"ccff-relu": 0.703, "ccff-sigmoid": 0.834},
        "fashion-mnist": {"ccff-relu": 0.803, "ccff-sigmoid": 0.733},
    },
}


@dataclass
class RunConfig:
    out_dir: str = "runs/default"
    # data: either procedural digits or IDX files on disk
    data_source: str = "synthetic"  # "synthetic" | "idx"
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_size: int = 2000
    test_size: int = 500
    per_class_samples: int = 30  # subgraph samples per class for kernels
    # model / training
    preset: str = "ccff-relu"
    epochs: int = 5
    lr: float = 0.01
    batch: int = 32
    # attack
    attack_preset: str = "desk"
    eps: float | None = None  # override the preset when set
    step: float | None = None
    iters: int | None = None
    n_adversaries: int = 100
    # persistence / kernel knobs
    phi_threshold: float = 0.0
    pool_edges: str = "argmax"
    top_k_diagram: int = 512
    gamma: str | float = "auto"
    C: float = 1.0
    wasserstein_q: float = 2.0
    # seeds
    seed: int = 7

    @property
    def attack_params(self) -> dict:
        if self.attack_preset not in attacks.ATTACK_PRESETS:
            raise UsageError(f"unknown attack preset {self.attack_preset!r}")
        p = dict(attacks.ATTACK_PRESETS[self.attack_preset])
        if self.eps is not None:
            p["eps"] = self.eps
        if self.step is not None:
            p["step"] = self.step
        if self.iters is not None:
            p["iters"] = self.iters
        return p

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


# ---------------------------------------------------------------------------
# store paths and shared plumbing

def _paths(cfg: RunConfig) -> dict[str, Path]:
    out = Path(cfg.out_dir)
    return {
        "out": out,
        "model": out / "model",
        "adversaries": out / "adversaries",
        "graphs": out / "topo" / "graphs",
        "persistence": out / "topo" / "persistence",
        "reports": out / "reports",
        "tables": out / "tables",
    }


def _write_report(cfg: RunConfig, name: str, report: dict) -> Path:
    p = _paths(cfg)["reports"]
    p.mkdir(parents=True, exist_ok=True)
    report = dict(report)
    report["config"] = cfg.to_dict()
    path = p / f"{name}.json"
    path.write_text(json.dumps(report, indent=2, default=float))
    return path


def _write_csv(cfg: RunConfig, name: str, header: list[str], rows) -> Path:
    p = _paths(cfg)["tables"]
    p.mkdir(parents=True, exist_ok=True)
    path = p / f"{name}.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def load_datasets(cfg: RunConfig) -> tuple[data.LabeledDataset, data.LabeledDataset]:
    """Train/test datasets per config; sizes are seeded balanced subsets."""
    if cfg.data_source == "idx":
        for k in ("train_images", "train_labels", "test_images", "test_labels"):
            v = getattr(cfg, k)
            if v is None:
                raise UsageError(f"data_source 'idx' requires config key {k}")
            if not Path(v).exists():
                raise FileNotFoundError(f"dataset file not found: {v}")
        train = data.load_idx(cfg.train_images, cfg.train_labels)
        test = data.load_idx(cfg.test_images, cfg.test_labels)
    elif cfg.data_source == "synthetic":
        train = data.synthetic_digits(-(-cfg.train_size // 10), seed=cfg.seed)
        test = data.synthetic_digits(-(-cfg.test_size // 10), seed=cfg.seed + 1)
    else:
        raise UsageError(f"unknown data_source {cfg.data_source!r}")
    n_classes = max(train.num_classes, test.num_classes)
    train = data.subset_per_class(train, -(-cfg.train_size // n_classes), seed=cfg.seed + 2)
    test = data.subset_per_class(test, -(-cfg.test_size // n_classes), seed=cfg.seed + 3)
    return train, test


def load_model(cfg: RunConfig) -> tuple[nn.NetworkSpec, nn.NetworkWeights, dict]:
    mdir = _paths(cfg)["model"]
    if not (mdir / "manifest.json").exists():
        raise FileNotFoundError(f"no model bundle under {mdir}; run the train command first")
    return nn.load_bundle(mdir)


def _result_for(cfg, spec, weights, image, input_id) -> persistence.PersistenceResult:
    rec = nn.forward(spec, weights, image)
    g = graphs.build_induced_graph(spec, weights, rec, input_id=input_id,
                                   phi_threshold=cfg.phi_threshold, pool_edges=cfg.pool_edges)
    return persistence.persistence_of_graph(g)


def _items_for(cfg, spec, weights, image, input_id) -> vectors.EdgeItems:
    # compact form only; the full result is dropped as soon as it is reduced
    return vectors.edge_items(_result_for(cfg, spec, weights, image, input_id))


def _sampled_training_items(cfg, spec, weights, train):
    """Per-class sample of training images with their persistence edge items."""
    sample = data.subset_per_class(train, cfg.per_class_samples, seed=cfg.seed + 4)
    items = [_items_for(cfg, spec, weights, img, f"train-{i:05d}")
             for i, img in enumerate(sample.images)]
    return sample, items


# ---------------------------------------------------------------------------
# commands

def run_train(cfg: RunConfig) -> dict:
    """Train the preset architecture and store the model bundle; prints test accuracy."""
    train, test = load_datasets(cfg)
    spec = nn.preset(cfg.preset)
    w0 = nn.init_weights(spec, seed=cfg.seed + 10)
    t0 = time.time()
    w = nn.sgd_train(spec, w0, train, epochs=cfg.epochs, lr=cfg.lr, batch=cfg.batch,
                     seed=cfg.seed + 11)
    elapsed = time.time() - t0
    acc = nn.accuracy(spec, w, test)
    meta = {
        "preset": cfg.preset,
        "epochs": cfg.epochs, "lr": cfg.lr, "batch": cfg.batch,
        "seed": cfg.seed, "init_seed": cfg.seed + 10, "train_seed": cfg.seed + 11,
        "train_size": len(train), "test_size": len(test),
        "test_accuracy": acc, "train_seconds": elapsed,
        "data_source": cfg.data_source,
    }
    nn.save_bundle(_paths(cfg)["model"], spec, w, meta)
    print(f"test accuracy: {acc:.4f}  ({len(train)} train images, {cfg.epochs} epochs, "
          f"{elapsed:.0f}s)")
    report = {"test_accuracy": acc, "train_seconds": elapsed,
              "reference_network_accuracy": REFERENCE_ACCURACY["network"]}
    _write_report(cfg, "train", report)
    return report


def run_attack(cfg: RunConfig) -> dict:
    """PGD over correctly-classified test images until n_adversaries successes.

    Only successful records (prediction flipped) are stored, so the network's
    accuracy on the stored adversary set is 0% by construction.
    """
    spec, weights, _ = load_model(cfg)
    _, test = load_datasets(cfg)
    params = cfg.attack_params
    adir = _paths(cfg)["adversaries"]
    adir.mkdir(parents=True, exist_ok=True)
    ids, attempted, skipped = [], 0, 0
    for i, (img, lab) in enumerate(zip(test.images, test.labels)):
        if len(ids) >= cfg.n_adversaries:
            break
        if nn.forward(spec, weights, img).predicted_class != lab:
            skipped += 1
            continue
        attempted += 1
        rec = attacks.pgd_attack(spec, weights, img, lab, input_id=f"test-{i:05d}", **params)
        if not rec.success:
            continue
        ids.append(rec.original_id)
        np.savez_compressed(
            adir / f"{rec.original_id}.npz",
            original=rec.original_image, adversarial=rec.adversarial_image,
            original_label=np.int64(rec.original_label),
            clean_prediction=np.int64(rec.clean_prediction),
            predicted_class=np.int64(rec.predicted_class),
            perturbation_linf=np.float64(rec.perturbation_linf),
            perturbation_l2=np.float64(rec.perturbation_l2),
            iterations=np.int64(rec.iterations),
        )
    manifest = {"ids": ids, "params": params, "seed": cfg.seed,
                "attempted": attempted, "skipped_misclassified": skipped,
                "success_rate": len(ids) / attempted if attempted else 0.0}
    (adir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"stored {len(ids)} successful adversaries "
          f"({attempted} attempted, success rate {manifest['success_rate']:.2f})")
    _write_report(cfg, "attack", manifest)
    return manifest


def load_adversaries(cfg: RunConfig) -> list[attacks.AdversarialRecord]:
    adir = _paths(cfg)["adversaries"]
    mpath = adir / "manifest.json"
    if not mpath.exists():
        raise UsageError(f"no adversary store under {adir}; run the attack command first")
    manifest = json.loads(mpath.read_text())
    records = []
    for rid in manifest["ids"]:
        with np.load(adir / f"{rid}.npz") as z:
            records.append(attacks.AdversarialRecord(
                original_id=rid,
                original_label=int(z["original_label"]),
                original_image=z["original"],
                adversarial_image=z["adversarial"],
                clean_prediction=int(z["clean_prediction"]),
                predicted_class=int(z["predicted_class"]),
                perturbation_linf=float(z["perturbation_linf"]),
                perturbation_l2=float(z["perturbation_l2"]),
                success=True,
                iterations=int(z["iterations"]),
            ))
    if not records:
        raise UsageError("adversary store is empty")
    return records


def run_topo(cfg: RunConfig, n_inputs: int = 10) -> dict:
    """Persistence artifacts for the first test inputs, with an equivalence smoke check."""
    spec, weights, _ = load_model(cfg)
    _, test = load_datasets(cfg)
    p = _paths(cfg)
    p["graphs"].mkdir(parents=True, exist_ok=True)
    p["persistence"].mkdir(parents=True, exist_ok=True)
    ids = []
    dgms = []
    smoke_dev = None
    for i in range(min(n_inputs, len(test))):
        input_id = f"test-{i:05d}"
        rec = nn.forward(spec, weights, test.images[i])
        g = graphs.build_induced_graph(spec, weights, rec, input_id=input_id,
                                       phi_threshold=cfg.phi_threshold,
                                       pool_edges=cfg.pool_edges)
        if i == 0:
            smoke_dev = max(graphs.verify_forward_equivalence(g, spec, weights, rec).values())
        res = persistence.compute_persistence(persistence.build_filtration(g))
        g.save(p["graphs"] / f"{input_id}.npz")
        res.save(p["persistence"] / f"{input_id}.npz")
        dgms.append(res.diagram(cfg.top_k_diagram))
        ids.append(input_id)
    # pairwise diagram distances over the processed inputs, ids as headers
    w = np.zeros((len(ids), len(ids)))
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            w[i, j] = w[j, i] = diagrams.wasserstein(dgms[i], dgms[j], q=cfg.wasserstein_q)
    _write_csv(cfg, "diagram_pairwise", [""] + ids,
               [[ids[i]] + [f"{v:.8g}" for v in w[i]] for i in range(len(ids))])
    report = {"ids": ids, "equivalence_max_deviation": smoke_dev, "seed": cfg.seed}
    _write_report(cfg, "topo", report)
    print(f"stored {len(ids)} persistence artifact sets "
          f"(equivalence deviation {smoke_dev:.2e})")
    return report


def run_classify_subgraphs(cfg: RunConfig) -> dict:
    """10-fold CV accuracy of the subgraph SVM over per-class training samples."""
    spec, weights, _ = load_model(cfg)
    train, _ = load_datasets(cfg)
    sample, items = _sampled_training_items(cfg, spec, weights, train)
    universe = vectors.build_edge_universe(items)
    vecs = [vectors.vector_from_items(it, universe) for it in items]
    store = _paths(cfg)["out"] / "vectors.npz"
    vectors.save_vector_store(store, universe, vecs, sample.labels)
    report_cv = learn.cross_validate(vecs, sample.labels, folds=10, C=cfg.C,
                                     seed=cfg.seed + 5, gamma=cfg.gamma)
    report = {
        "reference_subgraph_svm_accuracy": REFERENCE_ACCURACY["subgraph_svm"],
        "mean_accuracy": report_cv.mean_accuracy,
        "fold_accuracies": report_cv.fold_accuracies,
        "skipped_folds": report_cv.skipped_folds,
        "n_samples": len(vecs),
        "universe_dimensions": len(universe),
        "seed": cfg.seed,
    }
    _write_report(cfg, "classify_subgraphs", report)
    print(f"subgraph SVM 10-fold CV mean accuracy: {report_cv.mean_accuracy:.4f}")
    return report


def run_recover_adversaries(cfg: RunConfig) -> dict:
    """Train on all unaltered subgraphs, recover true classes of stored adversaries."""
    records = load_adversaries(cfg)
    spec, weights, _ = load_model(cfg)
    train, _ = load_datasets(cfg)
    sample, items = _sampled_training_items(cfg, spec, weights, train)
    universe = vectors.build_edge_universe(items)
    train_vecs = [vectors.vector_from_items(it, universe) for it in items]
    adv_vecs = [
        vectors.vector_from_items(
            _items_for(cfg, spec, weights, r.adversarial_image, f"adv-{r.original_id}"),
            universe)
        for r in records
    ]

    d_train = vectors.pairwise_distance(train_vecs)
    g = vectors.auto_gamma(d_train) if cfg.gamma == "auto" else float(cfg.gamma)
    model = learn.ovo_train(np.exp(-g * d_train), sample.labels, cfg.C, seed=cfg.seed + 6)
    learn.save_ovo(_paths(cfg)["out"] / "svm_model.npz", model,
                   {"gamma": g, "C": cfg.C, "seed": cfg.seed,
                    "n_train": len(train_vecs)})
    preds = learn.ovo_predict(model, np.exp(-g * vectors.distance_rows(adv_vecs, train_vecs)))

    true = np.array([r.original_label for r in records])
    network_preds = np.array([r.predicted_class for r in records])
    recovery = float(np.mean(preds == true))
    network_acc = float(np.mean(network_preds == true))
    report = {
        "reference_recovery_accuracy": REFERENCE_ACCURACY["recovery"],
        "recovery_accuracy": recovery,
        "network_accuracy_on_adversaries": network_acc,
        "n_adversaries": len(records),
        "n_train_subgraphs": len(train_vecs),
        "gamma": g,
        "seed": cfg.seed,
    }
    _write_report(cfg, "recover_adversaries", report)
    print(f"recovery accuracy: {recovery:.4f} over {len(records)} adversaries "
          f"(network accuracy on them: {network_acc:.4f})")
    return report


def _class_mean_similarity(dist: np.ndarray, labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Class-by-class mean of 1/(1+d) over distinct item pairs."""
    sim = 1.0 / (1.0 + dist)
    out = np.zeros((n_classes, n_classes))
    for a in range(n_classes):
        ia = np.nonzero(labels == a)[0]
        for b in range(a, n_classes):
            ib = np.nonzero(labels == b)[0]
            block = sim[np.ix_(ia, ib)]
            if a == b:
                n = len(ia)
                total = block.sum() - np.trace(block)
                val = total / (n * (n - 1)) if n > 1 else 0.0
            else:
                val = block.mean() if block.size else 0.0
            out[a, b] = out[b, a] = val
    return out


def run_neighbors(cfg: RunConfig) -> dict:
    """Class-level mean similarity in input space vs persistent-subgraph space."""
    spec, weights, _ = load_model(cfg)
    train, _ = load_datasets(cfg)
    sample, items = _sampled_training_items(cfg, spec, weights, train)
    universe = vectors.build_edge_universe(items)
    vecs = [vectors.vector_from_items(it, universe) for it in items]
    labels = np.asarray(sample.labels)
    n_classes = int(labels.max()) + 1

    flat = np.stack([img.reshape(-1) for img in sample.images])
    d_pixel = np.sqrt(((flat[:, None, :] - flat[None, :, :]) ** 2).sum(axis=2))
    d_sub = vectors.pairwise_distance(vecs)
    m_pixel = _class_mean_similarity(d_pixel, labels, n_classes)
    m_sub = _class_mean_similarity(d_sub, labels, n_classes)

    header = [""] + [str(c) for c in range(n_classes)]
    _write_csv(cfg, "neighbors_input_space", header,
               [[str(c)] + [f"{v:.8g}" for v in m_pixel[c]] for c in range(n_classes)])
    _write_csv(cfg, "neighbors_subgraph_space", header,
               [[str(c)] + [f"{v:.8g}" for v in m_sub[c]] for c in range(n_classes)])
    off = ~np.eye(n_classes, dtype=bool)
    report = {
        "n_samples": len(vecs),
        # mean within-class similarity vs mean cross-class similarity
        "input_space_diagonally_dominant": bool(np.diag(m_pixel).mean() > m_pixel[off].mean()),
        "subgraph_space_diagonally_dominant": bool(np.diag(m_sub).mean() > m_sub[off].mean()),
        "seed": cfg.seed,
    }
    _write_report(cfg, "neighbors", report)
    print(f"wrote class similarity matrices for {n_classes} classes "
          f"({len(vecs)} samples)")
    return report


def run_perturb_compare(cfg: RunConfig) -> dict:
    """Compare original / matched-random / adversarial activation topology.

    Per adversary: lifetime-weighted distances to the unaltered input
    (vectorized over the union of each pair's edges), generator and edge
    counts, and the edge-set-difference similarity matrix against unaltered
    subgraphs by class.
    """
    spec, weights, _ = load_model(cfg)
    train, _ = load_datasets(cfg)
    records = load_adversaries(cfg)
    sample, sample_items = _sampled_training_items(cfg, spec, weights, train)
    labels = np.asarray(sample.labels)
    n_classes = int(max(labels.max(), max(r.original_label for r in records),
                        max(r.predicted_class for r in records))) + 1

    # per-class counts of how many unaltered subgraphs contain each universe edge;
    # mean overlap of an edge set with a class is then a single gather away
    universe = vectors.build_edge_universe(sample_items)
    class_counts = np.zeros((n_classes, len(universe)))
    for it, lab in zip(sample_items, labels):
        v = vectors.vector_from_items(it, universe, mode="binary")
        class_counts[lab][v.dims] += 1.0
    per_class_n = np.bincount(labels, minlength=n_classes).astype(np.float64)

    rows = []
    more_edges = 0
    sim_sum = np.zeros((n_classes, n_classes))
    sim_count = np.zeros(n_classes)
    for ri, rec in enumerate(records):
        it_o = _items_for(cfg, spec, weights, rec.original_image, f"orig-{rec.original_id}")
        it_a = _items_for(cfg, spec, weights, rec.adversarial_image, f"adv-{rec.original_id}")
        rand_img = attacks.matched_random_perturbation(rec.original_image, rec,
                                                       seed=cfg.seed + 20 + ri)
        it_r = _items_for(cfg, spec, weights, rand_img, f"rand-{rec.original_id}")
        d_adv = vectors.items_distance(it_o, it_a)
        d_rand = vectors.items_distance(it_o, it_r)
        more_edges += it_a.n_edges > it_o.n_edges
        added = np.setdiff1d(it_a.keys, it_o.keys, assume_unique=True)
        if added.size:
            pos = np.minimum(np.searchsorted(universe.keys, added), len(universe) - 1)
            dims = pos[universe.keys[pos] == added]
            mean_overlap = class_counts[:, dims].sum(axis=1) / np.maximum(per_class_n, 1.0)
            sim_sum[rec.clean_prediction] += mean_overlap / added.size
            sim_count[rec.clean_prediction] += 1
        rows.append([rec.original_id, rec.clean_prediction, rec.predicted_class,
                     f"{d_adv:.8g}", f"{d_rand:.8g}",
                     it_o.n_generators, it_r.n_generators, it_a.n_generators,
                     it_o.n_edges, it_r.n_edges, it_a.n_edges,
                     f"{rec.perturbation_linf:.8g}", f"{rec.perturbation_l2:.8g}"])

    _write_csv(cfg, "perturb_compare", [
        "id", "predicted_class", "target_class", "dist_adversarial", "dist_random",
        "generators_original", "generators_random", "generators_adversarial",
        "edges_original", "edges_random", "edges_adversarial", "linf", "l2"], rows)
    with np.errstate(invalid="ignore"):
        sim = sim_sum / np.maximum(sim_count[:, None], 1)
    header = ["predicted\\class"] + [str(c) for c in range(n_classes)]
    _write_csv(cfg, "edge_diff_similarity", header,
               [[str(r)] + [f"{v:.8g}" for v in sim[r]] for r in range(n_classes)])
    fraction = more_edges / len(records)
    report = {
        "n_adversaries": len(records),
        "fraction_adversaries_with_more_edges": fraction,
        "reference_fraction_more_edges": {"ccff-relu": 1.00, "ccff-sigmoid": 0.89, "alexnet": 0.80},
        "seed": cfg.seed,
    }
    _write_report(cfg, "perturb_compare", report)
    print(f"{fraction:.0%} of adversaries induce more edges than their originals")
    return report


def run_diagram_distance(cfg: RunConfig) -> dict:
    """Input-space L-infinity vs diagram Wasserstein distance per adversary."""
    spec, weights, _ = load_model(cfg)
    records = load_adversaries(cfg)
    rows = []
    linfs, wds = [], []
    for rec in records:
        res_o = _result_for(cfg, spec, weights, rec.original_image, f"orig-{rec.original_id}")
        res_a = _result_for(cfg, spec, weights, rec.adversarial_image, f"adv-{rec.original_id}")
        wd = diagrams.wasserstein(res_o.diagram(cfg.top_k_diagram),
                                  res_a.diagram(cfg.top_k_diagram), q=cfg.wasserstein_q)
        linfs.append(rec.perturbation_linf)
        wds.append(wd)
        rows.append([rec.original_id, f"{rec.perturbation_linf:.8g}", f"{wd:.8g}"])
    _write_csv(cfg, "diagram_distance", ["id", "linf", "wasserstein"], rows)
    rho = float(spearmanr(linfs, wds).statistic) if len(rows) > 1 else float("nan")
    if not np.isfinite(rho):
        rho = None  # degenerate (e.g. constant perturbation norms)
    report = {"n_adversaries": len(rows), "spearman_rho": rho,
              "wasserstein_q": cfg.wasserstein_q, "top_k": cfg.top_k_diagram,
              "seed": cfg.seed}
    _write_report(cfg, "diagram_distance", report)
    print(f"Spearman rho(linf, Wasserstein) = {rho:.3f} over {len(rows)} adversaries")
    return report
