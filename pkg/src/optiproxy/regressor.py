"""sklearn-style regressor around the graph proxy model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from . import proxy
from .errors import InvalidInput, NumericalFailure
from .optim import AdamW
from .space import Architecture, SpaceDescriptor
from .validation import ensure_rng

RANKED_HEAD = "accuracy"


def embed_architectures(space: SpaceDescriptor, archs) -> tuple[np.ndarray, np.ndarray]:
    """Stack hard (features, adjacency) inputs for a list of architectures."""
    feats = np.stack(
        [space.node_features(a.one_hot_ops(space.num_ops)) for a in archs]
    )
    adjs = np.stack([a.adj.astype(np.float64) for a in archs])
    return feats, adjs


class ProxyRegressor(BaseEstimator, RegressorMixin):
    """Graph regressor predicting oracle metrics from architecture encodings.

    Fit on (architecture, metric) pairs with an MSE + pairwise-hinge
    ranking objective; the ranking term applies to the primary head only.
    Targets are min-max normalized to [0, 1] internally and predictions are
    returned on the original scale.

    Parameters mirror the stock fitting configuration: two GCN layers of
    width ``gcn_hidden``, one hidden head layer of width ``linear_size``,
    AdamW at ``lr`` with exponential decay ``lr_gamma`` every ``lr_step``
    epochs, ``model_epochs`` passes over shuffled batches of
    ``batch_size``.
    """

    def __init__(
        self,
        space: SpaceDescriptor | None = None,
        gcn_hidden: int = 144,
        gcn_layers: int = 2,
        linear_size: int = 144,
        batch_size: int = 7,
        lr: float = 1e-3,
        model_epochs: int = 100,
        ranking_coe: float = 0.2,
        margin: float = 0.1,
        lr_gamma: float = 0.9,
        lr_step: int = 10,
        weight_decay: float = 0.01,
        heads: tuple[str, ...] = (RANKED_HEAD,),
        random_state: int = 0,
    ):
        self.space = space
        self.gcn_hidden = gcn_hidden
        self.gcn_layers = gcn_layers
        self.linear_size = linear_size
        self.batch_size = batch_size
        self.lr = lr
        self.model_epochs = model_epochs
        self.ranking_coe = ranking_coe
        self.margin = margin
        self.lr_gamma = lr_gamma
        self.lr_step = lr_step
        self.weight_decay = weight_decay
        self.heads = heads
        self.random_state = random_state

    # -- fitting -------------------------------------------------------------

    def _check_config(self):
        for name in ("gcn_hidden", "gcn_layers", "linear_size", "batch_size",
                     "lr", "model_epochs", "lr_gamma", "lr_step"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"{name} must be positive")
        if self.ranking_coe < 0 or self.margin < 0:
            raise InvalidInput("ranking_coe and margin must be >= 0")
        if self.space is None:
            raise InvalidInput("a space descriptor is required to embed inputs")

    def _targets_by_head(self, y, n: int) -> dict[str, np.ndarray]:
        heads = tuple(self.heads)
        if isinstance(y, dict):
            missing = set(heads) - set(y)
            if missing:
                raise InvalidInput(f"missing targets for heads {sorted(missing)}")
            table = {h: np.asarray(y[h], dtype=np.float64) for h in heads}
        else:
            y = np.asarray(y, dtype=np.float64)
            if y.ndim == 1:
                if len(heads) != 1:
                    raise InvalidInput("1-D targets given for a multi-head model")
                table = {heads[0]: y}
            else:
                if y.shape[1] != len(heads):
                    raise InvalidInput("target columns do not match heads")
                table = {h: y[:, i] for i, h in enumerate(heads)}
        for h, t in table.items():
            if t.shape != (n,):
                raise InvalidInput(f"targets for head {h!r} must have length {n}")
        return table

    def fit(self, X, y, init_model=None):
        """Fit on a sequence of architectures and their oracle metrics.

        ``init_model`` warm-starts from existing weights (copied) instead
        of a fresh initialization.
        """
        self._check_config()
        archs = list(X)
        if not archs:
            raise InvalidInput("cannot fit on an empty dataset")
        targets = self._targets_by_head(y, len(archs))

        rng = ensure_rng(self.random_state)
        feats, adjs = embed_architectures(self.space, archs)
        norm = {}
        normed = {}
        for head, t in targets.items():
            lo, hi = float(t.min()), float(t.max())
            scale = hi - lo if hi > lo else 1.0
            norm[head] = (lo, scale)
            normed[head] = (t - lo) / scale

        model = proxy.init_model(
            in_dim=self.space.num_ops,
            gcn_hidden=self.gcn_hidden,
            gcn_layers=self.gcn_layers,
            linear_size=self.linear_size,
            head_names=tuple(self.heads),
            rng=rng,
        )
        if init_model is not None:
            if init_model.head_names != tuple(self.heads):
                raise InvalidInput("warm-start model has different heads")
            model.set_weights(init_model.weights)
        opt = AdamW({"flat": model.flat}, lr=self.lr, weight_decay=self.weight_decay)

        n = len(archs)
        losses = []
        for epoch in range(self.model_epochs):
            lr_epoch = self.lr * self.lr_gamma ** (epoch // self.lr_step)
            order = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                outs, cache = proxy.forward_cached(model, feats[idx], adjs[idx])
                douts = {}
                batch_loss = 0.0
                for head in self.heads:
                    coe = self.ranking_coe if head == RANKED_HEAD else 0.0
                    value, dpred = proxy.fit_loss_grad(
                        outs[head], normed[head][idx], coe, self.margin
                    )
                    batch_loss += value
                    douts[head] = dpred
                grads, _, _ = proxy.backward(model, cache, douts, with_inputs=False)
                opt.step({"flat": model.flatten_grads(grads)}, lr=lr_epoch)
                if not np.all(np.isfinite(model.flat)):
                    raise NumericalFailure("non-finite weights after an update")
                epoch_loss += batch_loss * len(idx)
            losses.append(epoch_loss / n)

        self.model_ = model
        self.norm_ = norm
        self.loss_curve_ = losses
        return self

    # -- prediction ----------------------------------------------------------

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this ProxyRegressor is not fitted yet")

    def predict_heads(self, X) -> dict[str, np.ndarray]:
        """Denormalized predictions for every head."""
        self._require_fitted()
        feats, adjs = embed_architectures(self.space, list(X))
        outs = proxy.forward(self.model_, feats, adjs)
        return {
            head: outs[head] * self.norm_[head][1] + self.norm_[head][0]
            for head in self.heads
        }

    def predict(self, X) -> np.ndarray:
        """Denormalized predictions of the primary head."""
        return self.predict_heads(X)[self.heads[0]]

    def training_loss(self, X, y) -> float:
        """Current total loss on a dataset, using the stored normalization."""
        self._require_fitted()
        archs = list(X)
        targets = self._targets_by_head(y, len(archs))
        feats, adjs = embed_architectures(self.space, archs)
        outs = proxy.forward(self.model_, feats, adjs)
        total = 0.0
        for head in self.heads:
            lo, scale = self.norm_[head]
            coe = self.ranking_coe if head == RANKED_HEAD else 0.0
            total += proxy.fit_loss(
                outs[head], (targets[head] - lo) / scale, coe, self.margin
            )
        return total

    # -- frozen-model interface for the searcher ------------------------------

    def value_and_input_grads(self, feats, adj, objective=None):
        """Objective values and their gradients with respect to the inputs.

        Accepts a single (N, M)/(N, N) pair or a stack of them.
        ``objective`` maps the dict of denormalized head-output arrays to
        (values, d values / d outputs); the default reads the primary
        head. The model weights are left untouched.
        """
        self._require_fitted()
        outs_raw, cache = proxy.forward_cached(self.model_, feats, adj)
        denorm = {
            head: outs_raw[head] * self.norm_[head][1] + self.norm_[head][0]
            for head in self.heads
        }
        if objective is None:
            values = denorm[self.heads[0]]
            dvalues = {self.heads[0]: np.ones_like(values)}
        else:
            values, dvalues = objective(denorm)
        zeros = np.zeros_like(outs_raw[self.heads[0]])
        dout = {
            head: np.asarray(dvalues.get(head, zeros)) * self.norm_[head][1]
            for head in self.heads
        }
        _, d_feats, d_adj = proxy.backward(self.model_, cache, dout, with_weights=False)
        if cache["squeezed"]:
            values = float(np.asarray(values).reshape(-1)[0])
        return values, d_feats, d_adj

    def num_params(self) -> int:
        self._require_fitted()
        return self.model_.num_params()
