"""End-to-end federated round orchestration.

Each round: select a roster, designate adversaries, train locally, apply
the configured attack transform to adversarial contributions, aggregate,
apply the global update, and evaluate. Every stochastic site draws from a
stream derived from (master_seed, purpose, round, client), so runs are
reproducible bit-for-bit regardless of execution order; wall-clock timings
are the only nondeterministic report fields.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import aggregators as agg
from .attacks import (AttackKind, AttackStrategy, boost_update,
                      constrain_and_scale, gaussian_noise, pgd_project)
from .config import ExperimentConfig
from .data import (Dataset, TriggerSpec, apply_trigger, backdoor_eval_set,
                   dba_shards, edge_case_augment, partition_label_skew,
                   synth_blobs, load_idx, PartitionPlan)
from .rng import stream
from .training import (ModelSpec, TrainConfig, evaluate, extract_update,
                       init_model, local_train, predict)
from .truth import estimate_truth, estimate_truth_layered
from .vectors import LayeredUpdate


@dataclass
class RoundReport:
    round_index: int
    main_accuracy: float
    backdoor_accuracy: Optional[float]
    aggregation_wall_time: float
    fedtruth_iterations: Optional[int]
    weights: Optional[List[float]]  # aligned with client_ids, or None
    client_ids: List[int]
    adversary_ids: List[int]


def select_round_roster(total_clients: int, clients_per_round: int,
                        n_adversaries: int, round_index: int,
                        master_seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform roster and adversary subset for one round.

    The draw only depends on (master_seed, round_index); both id arrays come
    back sorted.
    """
    if clients_per_round > total_clients:
        raise ValueError("clients_per_round cannot exceed total_clients")
    if n_adversaries > clients_per_round:
        raise ValueError("n_adversaries cannot exceed clients_per_round")
    rng = stream(master_seed, "roster", round_index)
    roster = np.sort(rng.choice(total_clients, size=clients_per_round,
                                replace=False))
    adversaries = np.sort(rng.choice(roster, size=n_adversaries,
                                     replace=False))
    return roster, adversaries


def apply_global_update(w: LayeredUpdate, delta: LayeredUpdate,
                        eta: float) -> LayeredUpdate:
    """Server step w - eta * delta, layer by layer."""
    return LayeredUpdate.combine(w, delta, lambda a, b: a - eta * b)


def fltrust_server_step(root_ds: Dataset, w: LayeredUpdate, spec: ModelSpec,
                        cfg: TrainConfig,
                        rng: np.random.Generator) -> LayeredUpdate:
    """Server-side reference update trained on the benign root split."""
    if len(root_ds) == 0:
        raise ValueError("fltrust root split is empty")
    trained = local_train(w, root_ds, spec, cfg, rng)
    return extract_update(w, trained)


class _Experiment:
    """Mutable state for one run; see run_experiment."""

    def __init__(self, cfg: ExperimentConfig):
        cfg.validate()
        self.cfg = cfg
        self.seed = cfg.master_seed
        self.attack = cfg.attack.to_spec()
        self.train_cfg = cfg.fl.train_config()
        self._build_data()
        self.model_spec = cfg.model.to_spec(self.train_pool.n_features,
                                            self.train_pool.n_classes)
        self.global_model = init_model(self.model_spec,
                                       stream(self.seed, "init"))
        self._partition()

    # -- setup -----------------------------------------------------------

    def _build_data(self) -> None:
        ds_cfg = self.cfg.dataset
        if ds_cfg.source == "synth":
            s = ds_cfg.synth
            self.train_pool = synth_blobs(s.n_train, s.n_features,
                                          s.n_classes, s.spread,
                                          stream(self.seed, "data-train"))
            self.test_set = synth_blobs(s.n_test, s.n_features, s.n_classes,
                                        s.spread,
                                        stream(self.seed, "data-test"))
        else:
            idx = ds_cfg.idx
            self.train_pool = load_idx(idx.train_images, idx.train_labels)
            self.test_set = load_idx(idx.test_images, idx.test_labels)

        self.trigger: Optional[TriggerSpec] = None
        self.backdoor_test: Optional[Dataset] = None
        self.edge_pool: Optional[Dataset] = None
        bd = self.cfg.attack.backdoor
        if self.attack.kind is AttackKind.BACKDOOR:
            if bd.flavor in ("trigger", "dba"):
                self.trigger = TriggerSpec(
                    tuple(bd.resolve_indices(self.train_pool.n_features)),
                    bd.trigger_value, bd.target_label)
                self.backdoor_test = backdoor_eval_set(self.test_set,
                                                       self.trigger)
            else:  # edge: a shifted pool, relabelled to the target
                self.edge_pool, self.backdoor_test = self._edge_sets()

    def _edge_sets(self) -> Tuple[Dataset, Dataset]:
        """Edge-case pool (inverted-contrast blobs labelled target) plus an
        evaluation split of inverted samples whose true label differs."""
        if self.cfg.dataset.source != "synth":
            raise ValueError("edge-case attack needs the synth source")
        s = self.cfg.dataset.synth
        bd = self.cfg.attack.backdoor
        pool = synth_blobs(s.n_test, s.n_features, s.n_classes, s.spread,
                           stream(self.seed, "edge-pool"))
        pool = Dataset(1.0 - pool.features,
                       np.full(len(pool), bd.target_label), pool.n_classes)
        eval_src = synth_blobs(s.n_test, s.n_features, s.n_classes, s.spread,
                               stream(self.seed, "edge-eval"))
        keep = np.flatnonzero(eval_src.labels != bd.target_label)
        eval_set = Dataset(1.0 - eval_src.features[keep],
                           eval_src.labels[keep], eval_src.n_classes)
        return pool, eval_set

    def _partition(self) -> None:
        pool = self.train_pool
        self.root_ds: Optional[Dataset] = None
        if self.cfg.aggregator.kind == "fltrust":
            n_root = max(1, int(self.cfg.fltrust_root_fraction * len(pool)))
            rng = stream(self.seed, "root")
            root_idx = rng.choice(len(pool), size=n_root, replace=False)
            mask = np.ones(len(pool), dtype=bool)
            mask[root_idx] = False
            self.root_ds = pool.subset(root_idx)
            pool = pool.subset(np.flatnonzero(mask))
        plan = PartitionPlan(self.cfg.fl.total_clients,
                             self.cfg.dataset.noniid_bias,
                             self.cfg.dataset.samples_per_client)
        self.shards = partition_label_skew(pool, plan,
                                           stream(self.seed, "partition"))

    # -- per-round pieces ------------------------------------------------

    def _benign_update(self, round_index: int, client: int) -> LayeredUpdate:
        trained = local_train(self.global_model, self.shards[client],
                              self.model_spec, self.train_cfg,
                              stream(self.seed, "train", round_index, client))
        return extract_update(self.global_model, trained)

    def _poisoned_shard(self, round_index: int, client: int,
                        adv_position: int, n_adv: int) -> Dataset:
        bd = self.cfg.attack.backdoor
        rng = stream(self.seed, "poison", round_index, client)
        if bd.flavor == "edge":
            return edge_case_augment(self.shards[client], self.edge_pool,
                                     bd.edge_ratio, rng)
        trig = self.trigger
        if bd.flavor == "dba":
            trig = dba_shards(trig, n_adv)[adv_position]
        poisoned, _ = apply_trigger(self.shards[client], trig,
                                    bd.poison_fraction, rng)
        return poisoned

    def _adversarial_update(self, round_index: int, client: int,
                            adv_position: int, n_adv: int) -> LayeredUpdate:
        """Attack pipeline: train -> model transform -> projection ->
        update extraction -> update boosting."""
        atk = self.attack
        w = self.global_model
        factor = atk.resolve_factor(self.cfg.fl.clients_per_round, n_adv) \
            if n_adv else 1.0
        train_rng = stream(self.seed, "train", round_index, client)

        if atk.kind is AttackKind.NONE:
            return self._benign_update(round_index, client)

        if atk.kind is AttackKind.BACKDOOR:
            local_ds = self._poisoned_shard(round_index, client,
                                            adv_position, n_adv)
        else:
            local_ds = self.shards[client]
        model = local_train(w, local_ds, self.model_spec, self.train_cfg,
                            train_rng)

        if atk.kind is AttackKind.GAUSSIAN_NOISE:
            noise_rng = stream(self.seed, "noise", round_index, client)
            model = model.from_flat(
                gaussian_noise(model.flatten(), atk.sigma, noise_rng))
        elif (atk.kind is AttackKind.BACKDOOR
              and atk.strategy is AttackStrategy.CONSTRAIN_AND_SCALE):
            benign = local_train(w, self.shards[client], self.model_spec,
                                 self.train_cfg,
                                 stream(self.seed, "train-benign",
                                        round_index, client))
            model = model.from_flat(
                constrain_and_scale(benign.flatten(), model.flatten(),
                                    atk.alpha, factor))

        if atk.pgd_radius is not None:
            model = model.from_flat(
                pgd_project(model.flatten(), w.flatten(), atk.pgd_radius))

        delta = extract_update(w, model)
        if atk.kind is AttackKind.MODEL_BOOST \
                or atk.strategy is AttackStrategy.WITH_BOOSTING:
            delta = delta.map(lambda v: boost_update(v, factor))
        return delta

    def _aggregate(self, updates: List[LayeredUpdate],
                   counts: List[int], round_index: int):
        """Dispatch to the configured aggregator.

        Returns (layered delta, per-client weights or None, iterations or
        None). Weights align with the roster order.
        """
        kind = self.cfg.aggregator.kind
        template = updates[0]
        flats = [u.flatten() for u in updates]
        n = len(flats)
        if kind == "fedtruth":
            est = estimate_truth(flats, self.cfg.aggregator.fedtruth_config(),
                                 sample_counts=counts)
            return template.from_flat(est.truth), est.weights, est.iterations
        if kind == "fedtruth_layer":
            combined, ests = estimate_truth_layered(
                updates, self.cfg.aggregator.fedtruth_config(),
                sample_counts=counts)
            sizes = np.array([vec.size for _, vec in template.layers],
                             dtype=np.float64)
            stacked = np.stack([e.weights for e in ests])
            weights = (sizes[:, None] * stacked).sum(axis=0) / sizes.sum()
            return combined, weights, sum(e.iterations for e in ests)
        if kind == "fedavg":
            return template.from_flat(agg.fedavg(flats, counts)), \
                np.asarray(counts, dtype=float) / sum(counts), None
        if kind == "krum":
            f = self.cfg.aggregator.krum_f
            if f is None:
                f = self.cfg.attack.n_adversaries
            chosen = agg.krum_select(flats, f)
            weights = np.zeros(n)
            weights[chosen] = 1.0
            return template.from_flat(flats[chosen].copy()), weights, None
        if kind == "median":
            return template.from_flat(agg.coordinate_median(flats)), None, None
        if kind == "trimmed_mean":
            trim_k = self.cfg.aggregator.trim_k
            if trim_k is None:
                trim_k = agg.default_trim_k(n)
            return template.from_flat(agg.trimmed_mean(flats, trim_k)), \
                None, None
        if kind == "fltrust":
            server = fltrust_server_step(
                self.root_ds, self.global_model, self.model_spec,
                self.train_cfg, stream(self.seed, "fltrust", round_index))
            server_flat = server.flatten()
            if float(np.linalg.norm(server_flat)) == 0.0:
                # zero reference (e.g. lr = 0): fall back to the all-zero
                # trust rule and return the server update itself
                return server, None, None
            scores = agg.fltrust_trust_scores(flats, server_flat)
            result = agg.fltrust(flats, server_flat)
            weights = scores / scores.sum() if scores.sum() > 0 else None
            return template.from_flat(result), weights, None
        if kind == "flame":
            kept = agg.flame_survivors(flats)
            result = agg.flame(flats,
                               self.cfg.aggregator.flame_noise_factor,
                               stream(self.seed, "flame", round_index))
            weights = np.zeros(n)
            weights[kept] = 1.0 / len(kept)
            return template.from_flat(result), weights, None
        raise ValueError(f"unknown aggregator {kind!r}")

    # -- driver ----------------------------------------------------------

    def run(self) -> List[RoundReport]:
        reports = []
        for t in range(self.cfg.fl.rounds):
            roster, adversaries = select_round_roster(
                self.cfg.fl.total_clients, self.cfg.fl.clients_per_round,
                self.cfg.attack.n_adversaries, t, self.seed)
            adv_set = set(int(a) for a in adversaries)
            try:
                updates, counts = [], []
                adv_position = 0
                for client in roster:
                    client = int(client)
                    if client in adv_set \
                            and self.attack.kind is not AttackKind.NONE:
                        updates.append(self._adversarial_update(
                            t, client, adv_position, len(adv_set)))
                        adv_position += 1
                    else:
                        updates.append(self._benign_update(t, client))
                    counts.append(len(self.shards[client]))

                t0 = time.perf_counter()
                delta, weights, iterations = self._aggregate(updates,
                                                             counts, t)
                agg_time = time.perf_counter() - t0

                self.global_model = apply_global_update(
                    self.global_model, delta, self.cfg.fl.server_lr)
            except ValueError as err:
                # vector constructors reject NaN/Inf; report the round
                if "finite" in str(err):
                    raise RuntimeError(
                        f"non-finite model in round {t}") from err
                raise
            flat = self.global_model.flatten()
            if not np.all(np.isfinite(flat)):
                raise RuntimeError(f"non-finite model after round {t}")

            accuracy, _ = evaluate(self.global_model, self.test_set,
                                   self.model_spec)
            backdoor_acc = None
            if self.backdoor_test is not None:
                preds = predict(self.global_model, self.backdoor_test,
                                self.model_spec)
                backdoor_acc = float(
                    (preds == self.cfg.attack.backdoor.target_label).mean())

            reports.append(RoundReport(
                round_index=t,
                main_accuracy=accuracy,
                backdoor_accuracy=backdoor_acc,
                aggregation_wall_time=agg_time,
                fedtruth_iterations=iterations,
                weights=None if weights is None else [float(x) for x in weights],
                client_ids=[int(c) for c in roster],
                adversary_ids=sorted(adv_set),
            ))
        return reports


def run_experiment(cfg: ExperimentConfig) -> List[RoundReport]:
    """Run the configured experiment; one report per round."""
    return _Experiment(cfg).run()
