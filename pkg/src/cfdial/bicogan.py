"""Adversarially learned transition dynamics with an inference encoder.

Three networks share one game: a generator G maps (s, a, L, eps) to the
next state, an encoder E maps the observed next state back to
(s_hat, a_hat, L_hat, eps_hat), and a discriminator D sees (latent, state)
pairs and scores whether the latent came from the encoder on real data or
was the generator's input.  D maximizes

    log D(E(s'), s') + log(1 - D(z, G(z)))

while G and E minimize the same expression plus a cycle regularizer
lambda * ||(s, a) - (s_hat, a_hat)||^2 that anchors the encoder to the
observed conditioning.  The default objective is the literal minimax; a
non-saturating flip is available behind a flag.

Counterfactual queries go through noise abduction: encode the factual
next state, keep its inferred noise, and rerun G with an alternative
action.  The trained consistency tolerance (a quantile of the training
set's reconstruction errors) is stored on the model so downstream checks
have a calibrated yardstick.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .dataset import Episode, TRAIT_DIM
from .dppr import TraitRegressor, progressive_trace, PRIOR_TRAIT
from .seeding import derive_seed


@dataclass
class BiCoGanConfig:
    hidden: int = 100
    batch_size: int = 100
    lr: float = 1e-4
    epochs: int = 10
    reg_weight: float = 1.0          # lambda on the cycle regularizer
    non_saturating: bool = False     # literal minimax by default
    leaky_slope: float = 0.2
    consistency_quantile: float = 0.95
    seed: int = 0


@dataclass
class ScmTransition:
    s: np.ndarray          # (d,)
    a: np.ndarray          # (d,)
    L: np.ndarray          # (5,) progressive trait estimate at this step
    s_next: np.ndarray     # (d,)
    eps: np.ndarray | None = None   # recorded true noise, synthetic episodes only


def transitions_from_episodes(episodes: list[Episode],
                              trait_model: TraitRegressor | None = None) -> list[ScmTransition]:
    """One transition per real exchange.  L_t comes from the progressive
    estimator when a trait model is given, otherwise from the episode's
    trait label (or the midpoint prior when unlabeled)."""
    out = []
    for ep in episodes:
        if trait_model is not None:
            trace = progressive_trace(trait_model, ep.states, ep.actions)
        for t in range(ep.n_turns):
            if trait_model is not None:
                L = trace[t]
            elif ep.traits is not None:
                L = ep.traits
            else:
                L = np.full(TRAIT_DIM, PRIOR_TRAIT)
            out.append(ScmTransition(
                s=ep.states[t], a=ep.actions[t], L=np.asarray(L, dtype=np.float64),
                s_next=ep.states[t + 1],
                eps=None if ep.noises is None else ep.noises[t + 1]))
    return out


def _stack(transitions: list[ScmTransition]):
    S = np.stack([tr.s for tr in transitions])
    A = np.stack([tr.a for tr in transitions])
    L = np.stack([tr.L for tr in transitions])
    S_next = np.stack([tr.s_next for tr in transitions])
    return S, A, L, S_next


class TransitionGan:
    """Generator, encoder, and discriminator over d-dimensional transitions."""

    def __init__(self, d: int, hidden: int, seed: int, leaky_slope: float = 0.2):
        self.d = d
        self.hidden = hidden
        self.seed = seed
        self.leaky_slope = leaky_slope
        self.noise_dim = d              # noise lives in the embedding space
        self.consistency_tol: float | None = None
        z_dim = 3 * d + TRAIT_DIM

        rng = np.random.default_rng(derive_seed(seed, "bicogan-init"))
        self.g_params = nn.ParamSet()
        self.g1 = nn.Dense(self.g_params, "g1", z_dim, hidden, rng, activation="tanh")
        self.g2 = nn.Dense(self.g_params, "g2", hidden, hidden, rng, activation="tanh")
        self.g3 = nn.Dense(self.g_params, "g3", hidden, d, rng)

        self.e_params = nn.ParamSet()
        self.e1 = nn.Dense(self.e_params, "e1", d, hidden, rng, activation="tanh")
        self.e2 = nn.Dense(self.e_params, "e2", hidden, hidden, rng, activation="tanh")
        self.e3 = nn.Dense(self.e_params, "e3", hidden, z_dim, rng)

        self.d_params = nn.ParamSet()
        self.d1 = nn.Dense(self.d_params, "d1", z_dim + d, hidden, rng,
                           activation="leaky_relu", leaky_slope=leaky_slope)
        self.d2 = nn.Dense(self.d_params, "d2", hidden, hidden, rng,
                           activation="leaky_relu", leaky_slope=leaky_slope)
        self.d3 = nn.Dense(self.d_params, "d3", hidden, 1, rng)

    # -- network forward passes (batch tensors) ----------------------------

    def generator(self, z: nn.Tensor) -> nn.Tensor:
        return self.g3(self.g2(self.g1(z)))

    def encoder(self, s_next: nn.Tensor) -> nn.Tensor:
        return self.e3(self.e2(self.e1(s_next)))

    def discriminator_logit(self, z: nn.Tensor, x: nn.Tensor) -> nn.Tensor:
        return self.d3(self.d2(self.d1(nn.concat_cols([z, x]))))

    def discriminate(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Public probability-of-real; always strictly inside (0, 1)."""
        logit = self.discriminator_logit(nn.tensor(z), nn.tensor(x))
        return nn.sigmoid(logit).data[:, 0].copy()

    # -- numpy-facing inference --------------------------------------------

    def encode(self, S_next: np.ndarray) -> np.ndarray:
        return self.encoder(nn.tensor(np.atleast_2d(S_next))).data.copy()

    def abduct_noise(self, S_next: np.ndarray) -> np.ndarray:
        """Inferred exogenous noise of the factual next state(s)."""
        S_next = np.asarray(S_next, dtype=np.float64)
        single = S_next.ndim == 1
        enc = self.encode(S_next)
        eps = enc[:, 2 * self.d + TRAIT_DIM:]
        return eps[0] if single else eps

    def generate(self, S: np.ndarray, A: np.ndarray, L: np.ndarray,
                 eps: np.ndarray) -> np.ndarray:
        z = np.concatenate([np.atleast_2d(S), np.atleast_2d(A),
                            np.atleast_2d(L), np.atleast_2d(eps)], axis=1)
        return self.generator(nn.tensor(z)).data.copy()

    # -- persistence --------------------------------------------------------

    def save(self, stem) -> None:
        stem = Path(stem)
        meta = {"kind": "transition-gan", "d": self.d, "hidden": self.hidden,
                "seed": self.seed, "leaky_slope": self.leaky_slope,
                "consistency_tol": self.consistency_tol}
        stem.with_suffix(".meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
        self.g_params.save(stem.with_suffix(".g.txt"))
        self.e_params.save(stem.with_suffix(".e.txt"))
        self.d_params.save(stem.with_suffix(".d.txt"))

    @classmethod
    def load(cls, stem) -> "TransitionGan":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".meta.json").read_text())
        if meta.get("kind") != "transition-gan":
            raise ValueError(f"{stem}: not a transition-gan checkpoint")
        model = cls(meta["d"], meta["hidden"], meta["seed"], meta["leaky_slope"])
        model.consistency_tol = meta["consistency_tol"]
        model.g_params.copy_values_from(nn.ParamSet.load(stem.with_suffix(".g.txt")))
        model.e_params.copy_values_from(nn.ParamSet.load(stem.with_suffix(".e.txt")))
        model.d_params.copy_values_from(nn.ParamSet.load(stem.with_suffix(".d.txt")))
        return model


def train_bicogan(transitions: list[ScmTransition],
                  config: BiCoGanConfig) -> tuple[TransitionGan, dict]:
    """Alternating optimization of the minimax game.

    Returns the model and per-step loss histories {d, g, r}.  The model's
    consistency tolerance is calibrated on the training set afterwards.
    """
    if not transitions:
        raise ValueError("no transitions to train on")
    S, A, L, S_next = _stack(transitions)
    d = S.shape[1]
    model = TransitionGan(d, config.hidden, config.seed, config.leaky_slope)
    g_opt = nn.Adam(model.g_params, lr=config.lr)
    e_opt = nn.Adam(model.e_params, lr=config.lr)
    d_opt = nn.Adam(model.d_params, lr=config.lr)
    rng = np.random.default_rng(derive_seed(config.seed, "bicogan-train"))
    history = {"d": [], "g": [], "r": []}
    n = S.shape[0]

    def forward_batch(idx):
        s = nn.tensor(S[idx])
        a = nn.tensor(A[idx])
        lt = nn.tensor(L[idx])
        x_real = nn.tensor(S_next[idx])
        eps = nn.tensor(rng.standard_normal((len(idx), d)))
        z_gen = nn.concat_cols([s, a, lt, eps])
        x_gen = model.generator(z_gen)
        z_enc = model.encoder(x_real)
        logit_enc = model.discriminator_logit(z_enc, x_real)
        logit_gen = model.discriminator_logit(z_gen, x_gen)
        sa = nn.concat_cols([s, a])
        sa_hat = nn.slice_cols(z_enc, 0, 2 * d)
        # mean over the batch of the squared L2 distance per row
        r_term = nn.smul(nn.tsum(nn.square(nn.sub(sa, sa_hat))), 1.0 / len(idx))
        return logit_enc, logit_gen, r_term

    def clear_all():
        model.g_params.zero_grad()
        model.e_params.zero_grad()
        model.d_params.zero_grad()

    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]

            # discriminator ascent step
            logit_enc, logit_gen, _ = forward_batch(idx)
            d_loss = nn.add(nn.tmean(nn.softplus(nn.neg(logit_enc))),
                            nn.tmean(nn.softplus(logit_gen)))
            nn.backward(d_loss)
            model.g_params.zero_grad()
            model.e_params.zero_grad()
            d_opt.step()

            # generator/encoder descent step (fresh noise draw)
            logit_enc, logit_gen, r_term = forward_batch(idx)
            if config.non_saturating:
                adv = nn.add(nn.tmean(nn.softplus(nn.neg(logit_gen))),
                             nn.tmean(nn.softplus(logit_enc)))
            else:
                # the literal game value: G and E descend on V itself
                adv = nn.neg(nn.add(nn.tmean(nn.softplus(nn.neg(logit_enc))),
                                    nn.tmean(nn.softplus(logit_gen))))
            ge_loss = nn.add(adv, nn.smul(r_term, config.reg_weight))
            nn.backward(ge_loss)
            model.d_params.zero_grad()
            g_opt.step()
            e_opt.step()

            history["d"].append(float(d_loss.data))
            history["g"].append(float(adv.data))
            history["r"].append(float(r_term.data))

    errs = consistency_errors(model, transitions)
    model.consistency_tol = float(np.quantile(errs, config.consistency_quantile)) if errs.size else None
    return model, history


def abduct_noise(model: TransitionGan, transition: ScmTransition) -> np.ndarray:
    return model.abduct_noise(transition.s_next)


def generate_counterfactual(model: TransitionGan, s: np.ndarray, a_alt: np.ndarray,
                            L: np.ndarray, noise_mode: str = "abducted",
                            s_next_factual: np.ndarray | None = None,
                            rng: np.random.Generator | None = None) -> np.ndarray:
    """Counterfactual next state for one step; see batch variant below."""
    out = generate_counterfactual_batch(
        model, np.atleast_2d(s), np.atleast_2d(a_alt), np.atleast_2d(L),
        noise_mode=noise_mode,
        S_next_factual=None if s_next_factual is None else np.atleast_2d(s_next_factual),
        rng=rng)
    return out[0]


def generate_counterfactual_batch(model: TransitionGan, S: np.ndarray, A_alt: np.ndarray,
                                  L: np.ndarray, noise_mode: str = "abducted",
                                  S_next_factual: np.ndarray | None = None,
                                  rng: np.random.Generator | None = None) -> np.ndarray:
    n = np.atleast_2d(S).shape[0]
    if noise_mode == "abducted":
        if S_next_factual is None:
            raise ValueError("abducted noise mode needs the factual next state")
        eps = model.abduct_noise(np.atleast_2d(S_next_factual))
    elif noise_mode == "zero":
        eps = np.zeros((n, model.noise_dim))
    elif noise_mode == "sampled":
        if rng is None:
            raise ValueError("sampled noise mode needs an rng")
        eps = rng.standard_normal((n, model.noise_dim))
    else:
        raise ValueError(f"unknown noise_mode {noise_mode!r}")
    return model.generate(S, A_alt, L, eps)


def consistency_errors(model: TransitionGan,
                       transitions: list[ScmTransition]) -> np.ndarray:
    """||G(s, a, L, abducted eps) - s'||_2 per transition (factual replay)."""
    if not transitions:
        return np.zeros(0)
    S, A, L, S_next = _stack(transitions)
    recon = generate_counterfactual_batch(model, S, A, L, "abducted",
                                          S_next_factual=S_next)
    return np.linalg.norm(recon - S_next, axis=1)
