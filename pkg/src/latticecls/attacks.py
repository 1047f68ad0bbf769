"""White-box attacks, the SOR defense, and the evaluation protocol.

Untargeted attacks (FGSM, the iterative joint-gradient attack) ascend the
true-label loss and only attack victims the pipeline classifies correctly.
Targeted attacks (perturbation, point addition) descend a target-label
loss plus a distance penalty over restarts with a trade-off schedule.
Success of an attack is always judged on the full defended pipeline.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .pointcloud import PointCloud, chamfer_distance, knn_mean_distance, pairwise_sq_distances
from .seeds import derive

JGBA_COMBINE_RULES = ("sum", "mean", "with-sor-only")
TRADEOFF_SCHEDULES = ("bisection", "random")


@dataclass
class SorConfig:
    """Statistical outlier removal: drop points with mean k-NN distance > mu + alpha*sigma."""

    k: int = 2
    alpha: float = 1.1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")


def sor_indices(points: np.ndarray, cfg: SorConfig) -> np.ndarray:
    """Indices of surviving points, in their original order."""
    points = np.asarray(points, dtype=np.float64)
    dbar = knn_mean_distance(PointCloud(points), cfg.k)
    threshold = dbar.mean() + cfg.alpha * dbar.std()
    keep = np.nonzero(dbar <= threshold)[0]
    if keep.size == 0:
        keep = np.array([int(np.argmin(dbar))])
    return keep


def sor_defense(pc: PointCloud, cfg: SorConfig) -> PointCloud:
    keep = sor_indices(pc.points, cfg)
    return PointCloud(pc.points[keep], label=pc.label)


class SorDefended:
    """A pipeline behind the SOR filter.

    Gradients are routed to surviving point indices; removed points get
    zero gradient.
    """

    def __init__(self, inner, sor_cfg: SorConfig):
        self.inner = inner
        self.sor_cfg = sor_cfg
        self.n_classes = inner.n_classes
        self.name = f"{inner.name}+sor"

    def logits(self, points: np.ndarray) -> np.ndarray:
        keep = sor_indices(points, self.sor_cfg)
        return self.inner.logits(points[keep])

    def predict(self, points: np.ndarray) -> int:
        return int(self.logits(points).argmax())

    def input_gradient(self, points: np.ndarray, label: int, mode: str = "exact") -> np.ndarray:
        keep = sor_indices(points, self.sor_cfg)
        grad = np.zeros_like(points)
        grad[keep] = self.inner.input_gradient(points[keep], label, mode)
        return grad


@dataclass
class AttackConfig:
    kind: str  # fgsm | jgba | perturb | add
    epsilon: float = 0.1
    iterations: int = 40
    step_size: float = 0.01
    restarts: int = 10
    targeted: bool = False
    target: int | None = None
    n_add: int = 60
    surrogate: str = "exact"  # gradient mode used against the victim
    combine: str = "sum"  # joint-gradient combination rule (jgba)
    schedule: str = "bisection"  # trade-off schedule for targeted attacks
    sor: SorConfig = field(default_factory=SorConfig)  # SOR simulated by jgba

    def __post_init__(self):
        if self.kind not in ("fgsm", "jgba", "perturb", "add"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.targeted and self.target is None and self.kind in ("fgsm", "jgba"):
            raise ValueError("targeted attack config needs a target class")
        if self.combine not in JGBA_COMBINE_RULES:
            raise ValueError(f"combine must be one of {JGBA_COMBINE_RULES}")
        if self.schedule not in TRADEOFF_SCHEDULES:
            raise ValueError(f"schedule must be one of {TRADEOFF_SCHEDULES}")

    @classmethod
    def defaults(cls, kind: str) -> "AttackConfig":
        """Protocol parameters: fgsm eps 0.1; jgba eps 0.1, 40 iters, step 0.01;
        targeted attacks lr 0.01, 10 restarts x 500 iterations; add appends 60 points."""
        if kind == "fgsm":
            return cls(kind="fgsm", epsilon=0.1, iterations=1)
        if kind == "jgba":
            return cls(kind="jgba", epsilon=0.1, iterations=40, step_size=0.01)
        if kind == "perturb":
            return cls(kind="perturb", targeted=True, iterations=500, step_size=0.01, restarts=10)
        if kind == "add":
            return cls(kind="add", targeted=True, iterations=500, step_size=0.01,
                       restarts=10, n_add=60)
        raise ValueError(f"unknown attack kind {kind!r}")


@dataclass
class AttackResult:
    success: bool
    adversarial: PointCloud
    perturbation_l2: float
    iterations_used: int
    best_iteration: int
    predicted: int
    restart_best: list | None = None  # best penalty value after each accepted restart

    def __post_init__(self):
        if self.perturbation_l2 < 0.0:
            raise ValueError("perturbation_l2 must be >= 0")


def fgsm(pipeline, points: np.ndarray, label: int, cfg: AttackConfig) -> AttackResult:
    """Single step x' = x + eps * sign(d loss / d x)."""
    points = np.asarray(points, dtype=np.float64)
    grad = pipeline.input_gradient(points, label, cfg.surrogate)
    adv = points + cfg.epsilon * np.sign(grad)
    predicted = pipeline.predict(adv)
    return AttackResult(
        success=predicted != label,
        adversarial=PointCloud(adv, label=label),
        perturbation_l2=float(np.linalg.norm(adv - points)),
        iterations_used=1,
        best_iteration=1,
        predicted=predicted,
    )


def _normalized(g: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(g))
    return g / norm if norm > 0.0 else g


def jgba(pipeline, points: np.ndarray, label: int, cfg: AttackConfig) -> AttackResult:
    """Iterative joint-gradient attack with an L2 perturbation budget.

    Each step combines the loss gradient of the raw classifier with the
    gradient routed through a simulated SOR pass (the linear approximation
    of the defense), moves along the normalized joint gradient, and
    projects the cumulative perturbation onto the epsilon ball. When the
    pipeline is SOR-defended the raw branch uses its inner classifier.
    """
    points = np.asarray(points, dtype=np.float64)
    inner = getattr(pipeline, "inner", pipeline)
    delta = np.zeros_like(points)
    used = 0
    for _ in range(cfg.iterations):
        used += 1
        x = points + delta
        g_plain = inner.input_gradient(x, label, cfg.surrogate)
        keep = sor_indices(x, cfg.sor)
        g_sor = np.zeros_like(x)
        g_sor[keep] = inner.input_gradient(x[keep], label, cfg.surrogate)
        if cfg.combine == "sum":
            joint = _normalized(g_plain) + _normalized(g_sor)
        elif cfg.combine == "mean":
            joint = 0.5 * (_normalized(g_plain) + _normalized(g_sor))
        else:
            joint = g_sor
        norm = float(np.linalg.norm(joint))
        if norm == 0.0:
            break  # zero joint gradient is a fixed point; later iterations cannot move
        delta = delta + cfg.step_size * joint / norm
        dnorm = float(np.linalg.norm(delta))
        if dnorm > cfg.epsilon:
            delta = delta * (cfg.epsilon / dnorm)
    adv = points + delta
    predicted = pipeline.predict(adv)
    return AttackResult(
        success=predicted != label,
        adversarial=PointCloud(adv, label=label),
        perturbation_l2=float(np.linalg.norm(delta)),
        iterations_used=used,
        best_iteration=used,
        predicted=predicted,
    )


def _tradeoff_schedule(cfg: AttackConfig):
    """Yields the distance-penalty weight per restart and absorbs outcomes."""
    lo, hi = -3.0, 3.0  # log10 bounds of the trade-off weight

    class Schedule:
        def __init__(self):
            self.lo, self.hi = lo, hi

        def weight(self, restart: int) -> float:
            if cfg.schedule == "random":
                return 1.0
            return 10.0 ** ((self.lo + self.hi) / 2.0)

        def report(self, success: bool):
            if cfg.schedule == "random":
                return
            mid = (self.lo + self.hi) / 2.0
            if success:
                self.lo = mid  # push the penalty up, look for smaller perturbations
            else:
                self.hi = mid

    return Schedule()


def targeted_perturb(pipeline, points: np.ndarray, label: int, target: int,
                     cfg: AttackConfig, seed: int) -> AttackResult:
    """L2-penalized targeted perturbation with restarts.

    Each restart starts from small Gaussian noise and runs gradient
    descent on [loss toward target + w * ||delta||], with w driven across
    restarts by the configured schedule. Returns the successful
    adversarial cloud of smallest perturbation norm.
    """
    points = np.asarray(points, dtype=np.float64)
    if target == label:
        raise ValueError("invalid pairing: target class equals the victim label")
    schedule = _tradeoff_schedule(cfg)
    best = None  # (norm, delta, restart, iteration)
    restart_best = []
    used = 0
    for restart in range(cfg.restarts):
        w = schedule.weight(restart)
        rng = np.random.default_rng(derive(seed, f"restart.{restart}"))
        delta = rng.normal(0.0, 0.01, points.shape)
        restart_success = False
        for it in range(1, cfg.iterations + 1):
            used += 1
            x = points + delta
            logits, grad = _loss_and_gradient(pipeline, x, target, cfg.surrogate)
            dnorm = float(np.linalg.norm(delta))
            if int(logits.argmax()) == target:
                restart_success = True
                if best is None or dnorm < best[0]:
                    best = (dnorm, delta.copy(), restart, it)
            grad_total = grad + w * delta / max(dnorm, 1e-12)
            delta = delta - cfg.step_size * grad_total
        x = points + delta
        if pipeline.predict(x) == target:
            restart_success = True
            dnorm = float(np.linalg.norm(delta))
            if best is None or dnorm < best[0]:
                best = (dnorm, delta.copy(), restart, cfg.iterations)
        schedule.report(restart_success)
        if best is not None:
            restart_best.append(best[0])
    if best is None:
        adv = points + delta
        return AttackResult(False, PointCloud(adv, label=label),
                            float(np.linalg.norm(delta)), used, 0,
                            pipeline.predict(adv), restart_best or None)
    norm, delta, _, iteration = best
    adv = points + delta
    return AttackResult(True, PointCloud(adv, label=label), norm, used, iteration,
                        pipeline.predict(adv), restart_best)


def _chamfer_added_gradient(added: np.ndarray, original: np.ndarray) -> np.ndarray:
    """d chamfer(added, original) / d added, nearest assignments held fixed."""
    d2 = pairwise_sq_distances(added, original)
    nearest_o = d2.argmin(axis=1)
    grad = 2.0 * (added - original[nearest_o]) / len(added)
    nearest_a = d2.argmin(axis=0)
    for j, o in zip(nearest_a, original):
        grad[j] += 2.0 * (added[j] - o) / len(original)
    return grad


def add_attack(pipeline, points: np.ndarray, label: int, target: int,
               cfg: AttackConfig, seed: int) -> AttackResult:
    """Append n_add new points and optimize only them toward the target class.

    The appended points start at randomly chosen existing points plus small
    noise; the penalty is the Chamfer distance between the added set and
    the original cloud. Original points are returned bit-unchanged.
    """
    points = np.asarray(points, dtype=np.float64)
    if target == label:
        raise ValueError("invalid pairing: target class equals the victim label")
    n = len(points)
    schedule = _tradeoff_schedule(cfg)
    best = None  # (chamfer, added, restart, iteration)
    restart_best = []
    used = 0
    for restart in range(cfg.restarts):
        w = schedule.weight(restart)
        rng = np.random.default_rng(derive(seed, f"restart.{restart}"))
        added = points[rng.integers(0, n, cfg.n_add)] + rng.normal(0.0, 0.01, (cfg.n_add, 3))
        restart_success = False
        for it in range(1, cfg.iterations + 1):
            used += 1
            combined = np.concatenate([points, added])
            logits, grad = _loss_and_gradient(pipeline, combined, target, cfg.surrogate)
            if int(logits.argmax()) == target:
                restart_success = True
                penalty = chamfer_distance(PointCloud(added), PointCloud(points))
                if best is None or penalty < best[0]:
                    best = (penalty, added.copy(), restart, it)
            grad_added = grad[n:] + w * _chamfer_added_gradient(added, points)
            added = added - cfg.step_size * grad_added
        combined = np.concatenate([points, added])
        if pipeline.predict(combined) == target:
            restart_success = True
            penalty = chamfer_distance(PointCloud(added), PointCloud(points))
            if best is None or penalty < best[0]:
                best = (penalty, added.copy(), restart, cfg.iterations)
        schedule.report(restart_success)
        if best is not None:
            restart_best.append(best[0])
    if best is None:
        adv = np.concatenate([points, added])
        return AttackResult(False, PointCloud(adv, label=label),
                            float(chamfer_distance(PointCloud(added), PointCloud(points))),
                            used, 0, pipeline.predict(adv), restart_best or None)
    penalty, added, _, iteration = best
    adv = np.concatenate([points, added])
    return AttackResult(True, PointCloud(adv, label=label), penalty, used, iteration,
                        pipeline.predict(adv), restart_best)


def _loss_and_gradient(pipeline, points: np.ndarray, label: int, mode: str):
    """(logits, d CE(label) / d points) in one pipeline evaluation."""
    logits = pipeline.logits(points)
    grad = pipeline.input_gradient(points, label, mode)
    return logits, grad


def run_attack(pipeline, points: np.ndarray, label: int, cfg: AttackConfig,
               seed: int, target: int | None = None) -> AttackResult:
    if cfg.kind == "fgsm":
        return fgsm(pipeline, points, label, cfg)
    if cfg.kind == "jgba":
        return jgba(pipeline, points, label, cfg)
    if cfg.kind == "perturb":
        return targeted_perturb(pipeline, points, label, target, cfg, seed)
    if cfg.kind == "add":
        return add_attack(pipeline, points, label, target, cfg, seed)
    raise ValueError(f"unknown attack kind {cfg.kind!r}")


@dataclass
class PairingConfig:
    """Targeted protocol: m random victims per ordered (source, target) class pair."""

    victims_per_pair: int = 3


def untargeted_campaign(pipeline, clouds, cfg: AttackConfig, seed: int,
                        threads: int = 1):
    """Attack every correctly-classified test cloud; returns (records, summary).

    accuracy-under-attack counts the whole test set: clouds that were
    already misclassified stay wrong, attacked clouds are re-scored on
    their adversarial versions.
    """
    labels = [pc.label for pc in clouds]
    predictions = [pipeline.predict(pc.points) for pc in clouds]
    victims = [i for i, (p, l) in enumerate(zip(predictions, labels)) if p == l]

    def attack_one(i):
        return i, run_attack(pipeline, clouds[i].points, labels[i], cfg,
                             seed=derive(seed, f"victim.{i}"))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = sorted(pool.map(attack_one, victims), key=lambda r: r[0])
    else:
        results = [attack_one(i) for i in victims]
    successes = sum(1 for _, r in results if r.success)
    clean_correct = len(victims)
    summary = {
        "n_attacked": len(victims),
        "n_success": successes,
        "success_rate": successes / len(victims) if victims else 0.0,
        "clean_accuracy": clean_correct / len(clouds),
        "accuracy_under_attack": (clean_correct - successes) / len(clouds),
    }
    return results, summary


def targeted_campaign(pipeline, clouds, cfg: AttackConfig, n_classes: int,
                      pairing: PairingConfig, seed: int, threads: int = 1):
    """Attack victim-target pairs; returns (records, summary)."""
    by_class = {c: [i for i, pc in enumerate(clouds) if pc.label == c]
                for c in range(n_classes)}
    pairs = []
    for source in range(n_classes):
        pool_idx = by_class[source]
        if not pool_idx:
            continue
        rng = np.random.default_rng(derive(seed, f"pairing.{source}"))
        m = min(pairing.victims_per_pair, len(pool_idx))
        chosen = rng.choice(len(pool_idx), size=m, replace=False)
        victims = [pool_idx[int(c)] for c in chosen]
        for target in range(n_classes):
            if target == source:
                continue
            for v in victims:
                pairs.append((v, target))

    def attack_one(pair):
        v, target = pair
        res = run_attack(pipeline, clouds[v].points, clouds[v].label, cfg,
                         seed=derive(seed, f"pair.{v}.{target}"), target=target)
        return (v, target), res

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = sorted(pool.map(attack_one, pairs), key=lambda r: r[0])
    else:
        results = [attack_one(p) for p in pairs]
    successes = sum(1 for _, r in results if r.success)
    summary = {
        "n_attacked": len(pairs),
        "n_success": successes,
        "success_rate": successes / len(pairs) if pairs else 0.0,
        "clean_accuracy": None,
        "accuracy_under_attack": None,
    }
    return results, summary


def evaluate_suite(models: dict, defenses: dict, attacks: list, dataset,
                   pairing: PairingConfig, seed: int, threads: int = 1,
                   record_sink=None):
    """Grid of model x defense x attack over the test split.

    ``models`` maps name -> pipeline, ``defenses`` maps name -> SorConfig or
    None, ``attacks`` is a list of (name, AttackConfig). Returns metric rows
    (model, defense, attack, accuracy, success_rate, n); a no-attack row per
    model x defense reports clean accuracy. ``record_sink(row_meta, results)``
    receives per-victim results when given.
    """
    rows = []
    clouds = dataset.test
    for model_name, pipeline in models.items():
        for defense_name, sor_cfg in defenses.items():
            defended = pipeline if sor_cfg is None else SorDefended(pipeline, sor_cfg)
            clean = np.mean([defended.predict(pc.points) == pc.label for pc in clouds])
            rows.append({
                "model": model_name, "defense": defense_name, "attack": "none",
                "accuracy": float(clean), "success_rate": 0.0, "n": len(clouds),
            })
            for attack_name, cfg in attacks:
                camp_seed = derive(seed, f"attack.{attack_name}.{model_name}.{defense_name}")
                if cfg.kind in ("fgsm", "jgba"):
                    results, summary = untargeted_campaign(
                        defended, clouds, cfg, camp_seed, threads)
                else:
                    results, summary = targeted_campaign(
                        defended, clouds, cfg, dataset.n_classes, pairing,
                        camp_seed, threads)
                row = {
                    "model": model_name, "defense": defense_name, "attack": attack_name,
                    "accuracy": summary["accuracy_under_attack"],
                    "success_rate": summary["success_rate"],
                    "n": summary["n_attacked"],
                }
                rows.append(row)
                if record_sink is not None:
                    record_sink(row, results)
    return rows


def write_metrics_csv(rows: list, path) -> None:
    lines = ["model,defense,attack,accuracy,success_rate,n"]
    for r in rows:
        acc = "" if r["accuracy"] is None else repr(float(r["accuracy"]))
        lines.append(f"{r['model']},{r['defense']},{r['attack']},{acc},"
                     f"{float(r['success_rate'])!r},{r['n']}")
    Path(path).write_text("\n".join(lines) + "\n")


def attack_record(meta: dict, key, result: AttackResult, include_cloud: bool = False) -> dict:
    """One JSON-lines record per victim (or victim-target pair)."""
    if isinstance(key, tuple):
        victim, target = key
    else:
        victim, target = key, None
    rec = {
        "model": meta["model"],
        "defense": meta["defense"],
        "attack": meta["attack"],
        "victim": int(victim),
        "target": None if target is None else int(target),
        "success": bool(result.success),
        "predicted": int(result.predicted),
        "perturbation_l2": float(result.perturbation_l2),
        "iterations_used": int(result.iterations_used),
        "best_iteration": int(result.best_iteration),
    }
    if include_cloud:
        rec["adversarial"] = result.adversarial.points.tolist()
    return rec


def write_attack_jsonl(records: list, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
