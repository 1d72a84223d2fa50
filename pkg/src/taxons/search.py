"""The search orchestrator: generation loop, metric alternation, observation
buffering, periodic autoencoder training with descriptor refresh, and
goal-conditioned policy retrieval from a finished archive.

Method presets:

=========  ==================  =========================  ==============
preset     observer            per-generation metric      autoencoder
=========  ==================  =========================  ==============
TAXONS     learned encoder     novelty or surprise (0.5)  trained online
TAXO-N     learned encoder     novelty                    trained online
TAXO-S     learned encoder     surprise                   trained online
NS         ground truth        novelty                    none
PNS        parameter vector    novelty                    none
RNS        cached random 10D   novelty                    none
RS         none                uniform-random scores      none
NT         frozen encoder      novelty                    random, frozen
=========  ==================  =========================  ==============
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import archive as archive_mod
from . import descriptors, envs, nn, policies
from .autoencoder import Autoencoder, build_autoencoder, encode_observation, observation_to_input
from .firewall import ground_truth_reads
from .metrics import CoverageGrid

log = logging.getLogger(__name__)

PRESETS = ("TAXONS", "TAXO-N", "TAXO-S", "NS", "PNS", "RNS", "RS", "NT")
LEARNED_OBSERVER_PRESETS = ("TAXONS", "TAXO-N", "TAXO-S", "NT")
TRAINING_PRESETS = ("TAXONS", "TAXO-N", "TAXO-S")

NOVELTY = "novelty"
SURPRISE = "surprise"
RANDOM_SCORES = "random"

# Named substreams fanned out from the master seed, in fixed spawn order.
_STREAMS = ("init", "mutation", "metric", "shuffle", "random_scores",
            "ae_init", "descriptor_noise")


@dataclass
class SearchConfig:
    """Resolved configuration of one run. Defaults are the full-scale search
    hyperparameters; experiment configs override them."""

    method: str
    generations: int
    population_size: int = 100      # M
    archive_best: int = 5           # Q
    neighbors: int = 15             # k
    mutation_prob: float = 0.2      # p_d
    mutation_sigma: float = 0.05
    train_interval: int = 30        # I
    train_epochs: int = 5           # J
    learning_rate: float = 0.001
    batch_size: int = 32
    horizon: int = 2000             # T
    observation_size: int = 32
    environment: str = envs.MAZE
    latent_dim: int = 10
    controller_hidden: int = 16
    seed: int = 1
    workers: int = 1
    coverage_resolution: int = 50
    arena: dict = field(default_factory=dict)   # overrides for the arena spec

    def validate(self):
        if self.method not in PRESETS:
            raise ValueError(f"method must be one of {', '.join(PRESETS)}; got {self.method!r}")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        m = self.population_size
        if m < 2:
            raise ValueError("population_size must be at least 2")
        if not 1 <= self.archive_best <= m // 2:
            raise ValueError(
                f"archive_best must satisfy 1 <= Q <= M/2, got Q={self.archive_best} M={m}")
        if self.neighbors < 1:
            raise ValueError("neighbors must be at least 1")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must be in [0, 1]")
        if self.mutation_sigma < 0.0:
            raise ValueError("mutation_sigma must be non-negative")
        if self.train_interval < 1:
            raise ValueError("train_interval must be at least 1")
        if self.train_epochs < 0:
            raise ValueError("train_epochs must be non-negative")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.observation_size < 16:
            raise ValueError("observation_size must be at least 16")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.environment not in (envs.MAZE, envs.DISK_PUSH):
            raise ValueError(f"environment must be maze or diskpush, got {self.environment!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def uses_autoencoder(self) -> bool:
        return self.method in LEARNED_OBSERVER_PRESETS

    @property
    def trains_autoencoder(self) -> bool:
        return self.method in TRAINING_PRESETS


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(child)
            for name, child in zip(_STREAMS, children)}


def choose_metric(rng: np.random.Generator, preset: str) -> str:
    """Selection metric for one generation. Only TAXONS consumes randomness."""
    if preset == "TAXONS":
        return SURPRISE if rng.random() < 0.5 else NOVELTY
    if preset == "TAXO-S":
        return SURPRISE
    if preset == "RS":
        return RANDOM_SCORES
    return NOVELTY


def surprise(ae: Autoencoder, observation) -> float:
    """Reconstruction error of the autoencoder on one observation: the mean
    squared difference between the image and its decode(encode(.)) round trip."""
    x = observation_to_input(observation)
    if x.shape != ae.net.input_shape:
        raise nn.ShapeError(
            f"observation shape {x.shape} does not match autoencoder input "
            f"{ae.net.input_shape}")
    return ae.net.loss(x, x)


def train_autoencoder(ae: Autoencoder, opt: nn.AdamState, images, epochs: int,
                      rng: np.random.Generator, batch_size: int = 32) -> list[float]:
    """Minibatch MSE training over the buffered frames, reshuffled per epoch.
    Returns the mean loss of each epoch."""
    history = []
    n = len(images)
    if n == 0 or epochs == 0:
        return history
    stack = np.stack([np.asarray(img) for img in images])
    if stack.dtype == np.uint8:
        stack = stack.astype(np.float64) / 255.0
    stack = stack.transpose(0, 3, 1, 2)
    for _ in range(epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            batch = stack[perm[start:start + batch_size]]
            loss, grads = ae.net.backward(batch, batch)
            nn.adam_step(ae.net, grads, opt)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


class RunRecorder:
    """Callbacks a run emits as it progresses; the CLI subclasses this to
    stream artifacts into the run directory."""

    def start(self, config: SearchConfig):
        pass

    def generation(self, gen: int, metric: str, archive_size: int, coverage: float):
        pass

    def training(self, gen: int, images: int, epoch_losses: list[float]):
        pass

    def checkpoint(self, gen: int, ae: Autoencoder):
        pass

    def finish(self, result: "SearchResult"):
        pass


@dataclass
class SearchResult:
    config: SearchConfig
    archive: archive_mod.Archive
    curve: list                      # (generation, archive size, coverage)
    metric_log: list[str]            # metric used per generation
    loss_history: list               # (generation, [epoch losses]) per training
    ae: Autoencoder | None
    ground_truth_reads: int          # monitored reads during this run
    invalid_rollouts: int = 0


def _evaluate(arena, cspec, genomes, horizon, size, workers):
    def run_one(genome):
        controller = policies.Controller(cspec, genome)
        return envs.rollout(arena, controller, horizon, size, seed=genome.id)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_one, genomes))
    return [run_one(g) for g in genomes]


def _make_observer(config: SearchConfig, ae, streams, cspec):
    method = config.method
    if method in LEARNED_OBSERVER_PRESETS:
        cls = descriptors.FrozenEncoderObserver if method == "NT" else descriptors.EncoderObserver
        return cls(ae)
    if method == "NS":
        return descriptors.GroundTruthObserver()
    if method == "PNS":
        return descriptors.ParameterObserver(cspec.parameter_count)
    if method == "RNS":
        return descriptors.RandomObserver(streams["descriptor_noise"])
    return None  # RS consults no descriptors at all


def controller_spec_for(arena: envs.ArenaSpec, hidden: int = 16) -> policies.ControllerSpec:
    return policies.ControllerSpec(input_dim=arena.sensor_dim, hidden=(hidden,),
                                   output_dim=arena.action_dim)


def run_search(config: SearchConfig, recorder: RunRecorder | None = None) -> SearchResult:
    """Executes the full search loop for config.generations generations."""
    config.validate()
    recorder = recorder or RunRecorder()
    streams = rng_streams(config.seed)
    gt_reads_before = ground_truth_reads.count

    arena = envs.make_arena(config.environment, config.arena or None)
    cspec = controller_spec_for(arena, config.controller_hidden)

    ae = None
    opt = None
    if config.uses_autoencoder:
        ae = build_autoencoder(config.observation_size, config.latent_dim,
                               streams["ae_init"])
        opt = nn.AdamState.for_network(ae.net, lr=config.learning_rate)
    observer = _make_observer(config, ae, streams, cspec)

    repertoire = archive_mod.Archive(observer.dim if observer else 0)
    grid = CoverageGrid(arena.bounds, config.coverage_resolution)

    next_id = iter(range(10 ** 9)).__next__
    population = [policies.random_genome(cspec, streams["init"], policy_id=next_id())
                  for _ in range(config.population_size)]

    recorder.start(config)
    if ae is not None:
        recorder.checkpoint(0, ae)

    buffer: list[np.ndarray] = []
    curve = []
    metric_log: list[str] = []
    loss_history = []
    invalid_rollouts = 0

    for gen in range(1, config.generations + 1):
        children = [policies.mutate(g, config.mutation_prob, config.mutation_sigma,
                                    streams["mutation"], child_id=next_id(),
                                    generation=gen)
                    for g in population]
        results = _evaluate(arena, cspec, children, config.horizon,
                            config.observation_size, config.workers)

        individuals = []
        for genome, result in zip(children, results):
            ind = archive_mod.Individual(genome=genome, result=result)
            if result.valid and observer is not None:
                ind.descriptor = observer.describe(genome, result)
            individuals.append(ind)
            if not result.valid:
                invalid_rollouts += 1

        if config.trains_autoencoder:
            buffer.extend(ind.result.observation_u8 for ind in individuals
                          if ind.result.valid)

        metric = choose_metric(streams["metric"], config.method)
        _score(individuals, metric, config, ae, streams, repertoire)

        population_inds, best = archive_mod.select_and_replace(
            individuals, config.archive_best)
        entries = []
        for ind in best:
            if not ind.result.valid:
                raise RuntimeError(
                    "an aborted rollout was selected for the archive; "
                    "the run cannot continue meaningfully")
            entries.append(archive_mod.ArchiveEntry(
                genome=ind.genome,
                observation_u8=ind.result.observation_u8,
                descriptor=(ind.descriptor if ind.descriptor is not None
                            else np.empty(0)),
                ground_truth=ind.result.eval_ground_truth,
                generation=gen,
                score=float(ind.score),
            ))
        repertoire.insert(entries)
        grid.add_points(e.ground_truth for e in entries)
        cov = grid.coverage()
        curve.append((gen, len(repertoire), cov))
        metric_log.append(metric)
        recorder.generation(gen, metric, len(repertoire), cov)

        population = [ind.genome for ind in population_inds]

        if config.trains_autoencoder and gen % config.train_interval == 0:
            expected = config.population_size * config.train_interval
            if invalid_rollouts == 0 and len(buffer) != expected:
                raise RuntimeError(
                    f"buffer holds {len(buffer)} observations at training time, "
                    f"expected M*I = {expected}")
            losses = train_autoencoder(ae, opt, buffer, config.train_epochs,
                                       streams["shuffle"], config.batch_size)
            loss_history.append((gen, losses))
            recorder.training(gen, len(buffer), losses)
            buffer.clear()
            repertoire.refresh_descriptors(lambda obs: encode_observation(ae, obs))
            recorder.checkpoint(gen, ae)

    result = SearchResult(
        config=config,
        archive=repertoire,
        curve=curve,
        metric_log=metric_log,
        loss_history=loss_history,
        ae=ae,
        ground_truth_reads=ground_truth_reads.count - gt_reads_before,
        invalid_rollouts=invalid_rollouts,
    )
    recorder.finish(result)
    return result


def _score(individuals, metric, config, ae, streams, repertoire):
    if metric == RANDOM_SCORES:
        scores = streams["random_scores"].random(len(individuals))
        for ind, s in zip(individuals, scores):
            if ind.result.valid:
                ind.score = float(s)
        return
    if metric == SURPRISE:
        for ind in individuals:
            if ind.result.valid:
                ind.score = surprise(ae, ind.result.observation)
        return
    valid = [i for i, ind in enumerate(individuals) if ind.descriptor is not None]
    if not valid:
        return
    pop_desc = np.stack([individuals[i].descriptor for i in valid])
    scores = archive_mod.novelty_scores(pop_desc, repertoire.descriptor_matrix(),
                                        config.neighbors)
    for i, s in zip(valid, scores):
        individuals[i].score = float(s)


def select_policy_for_goal(repertoire: archive_mod.Archive, ae: Autoencoder,
                           goal_observation) -> tuple[archive_mod.ArchiveEntry, float]:
    """Entry whose descriptor is closest to the encoding of the goal image;
    ties resolve to the earliest-inserted entry."""
    if len(repertoire) == 0:
        raise LookupError("the archive is empty; no policy can be selected")
    goal_desc = encode_observation(ae, goal_observation)
    dists = np.linalg.norm(repertoire.descriptor_matrix() - goal_desc, axis=1)
    idx = int(np.argmin(dists))
    return repertoire.entries[idx], float(dists[idx])
