"""Scikit-learn-style facade over window building, training and scoring.

`TtfForecaster` takes the whole configuration surface as constructor
keyword arguments (stored verbatim, so `get_params` / `set_params` /
`clone` work), fits on an `LtvDataset`, and forecasts per-cohort LTV
curves.  Fitted state lives in trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .covariates import DYNAMIC_WIDTH
from .domain import LtvDataset, parse_date
from .errors import EmptyDataset, InvalidConfig
from .evaluation import EvalReport, cohort_records, evaluate_records
from .model import ModelConfig, MtFusionNet
from .trapezoid import WindowSpec
from .training import TrainConfig, temporal_split, train, prepare_training_batches


class TtfForecaster(BaseEstimator):
    """Channel-level LTV curve forecaster on trapezoid windows.

    Parameters mirror the model/training configuration:

    - window geometry: `m` observed days of the youngest cohort, horizon
      `n`, `k` stacked cohorts at spacing `stride`;
    - architecture: smoothing `scales`, `backbone` (linear / dlinear /
      mixer), `num_blocks`, `decomp_kernel`, `dropout`, `activation`,
      `fusion_hidden` (0 = use n), `positional_encoding`,
      `use_covariates`;
    - optimization: `loss` (utilitarian / mse), `learning_rate`,
      `batch_size`, `max_epochs`, `patience`, `val_fraction`,
      `window_stride` (train on every j-th start day), `seed`.
    """

    def __init__(self, m=10, n=60, k=20, stride=1, scales=(1, 3, 7, 14),
                 backbone="mixer", num_blocks=2, decomp_kernel=7, dropout=0.1,
                 activation="gelu", fusion_hidden=0, positional_encoding=True,
                 use_covariates=True, loss="utilitarian", learning_rate=1e-3,
                 batch_size=32, max_epochs=100, patience=10, val_fraction=0.1,
                 window_stride=1, seed=0):
        self.m = m
        self.n = n
        self.k = k
        self.stride = stride
        self.scales = scales
        self.backbone = backbone
        self.num_blocks = num_blocks
        self.decomp_kernel = decomp_kernel
        self.dropout = dropout
        self.activation = activation
        self.fusion_hidden = fusion_hidden
        self.positional_encoding = positional_encoding
        self.use_covariates = use_covariates
        self.loss = loss
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.window_stride = window_stride
        self.seed = seed

    # -- configuration assembly (validation happens here, not in __init__) --

    def _model_config(self, channels: list[str]) -> ModelConfig:
        return ModelConfig(
            spec=WindowSpec(m=self.m, n=self.n, k=self.k, s=self.stride),
            scales=tuple(self.scales),
            backbone=self.backbone,
            num_blocks=self.num_blocks,
            decomp_kernel=self.decomp_kernel,
            dropout=self.dropout,
            activation=self.activation,
            c_sta=len(channels) if self.use_covariates else 0,
            c_dyn=DYNAMIC_WIDTH if self.use_covariates else 0,
            fusion_hidden=self.fusion_hidden,
            use_positional_encoding=self.positional_encoding,
            seed=self.seed,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            loss=self.loss,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            val_fraction=self.val_fraction,
            window_stride=self.window_stride,
            seed=self.seed,
        )

    # -- estimator API -------------------------------------------------------

    def fit(self, dataset: LtvDataset, y=None, train_cutoff=None):
        """Train on all target-complete windows of `dataset`.

        `train_cutoff` (ISO date or ordinal) restricts training to windows
        whose target days all precede the first forecast day of a cohort
        activated at the cutoff — i.e. to data observable when that cohort
        is forecast.  Use it to keep an evaluation period untouched.
        """
        if not isinstance(dataset, LtvDataset):
            raise InvalidConfig(f"fit expects an LtvDataset, got {type(dataset).__name__}")
        if len(dataset) == 0:
            raise EmptyDataset("cannot fit on an empty dataset")
        channels = dataset.channels()
        config = self._model_config(channels)
        if train_cutoff is not None:
            if isinstance(train_cutoff, str):
                train_cutoff = parse_date(train_cutoff)
            # Last calendar day observable when the cutoff cohort is
            # forecast: cutoff + m - 1.  A window's targets end on
            # start + l + n - 1.
            max_start = int(train_cutoff) + self.m - config.spec.l - self.n
        else:
            max_start = None
        model = MtFusionNet(config)
        report = train(model, dataset, self._train_config(), max_start=max_start)
        self.model_ = model
        self.report_ = report
        self.channels_ = channels if self.use_covariates else None
        self.calendar_ = dataset.calendar
        return self

    def predict(self, dataset: LtvDataset, cohorts: dict[str, list[int]] | None = None):
        """PredictionRecords for the given cohorts (default: every cohort
        with at least m observed days whose window can be built)."""
        check_is_fitted(self, "model_")
        if cohorts is None:
            spec = self.model_.config.spec
            cohorts = {
                channel: [a for a in dataset.activations(channel)
                          if len(dataset.get(channel, a)) >= spec.m]
                for channel in dataset.channels()
            }
        return cohort_records(self.model_, dataset, cohorts, channels=self.channels_)

    def predict_curve(self, dataset: LtvDataset, channel: str, activation) -> np.ndarray:
        """Forecast one cohort; returns the (n,) horizon for days m..m+n-1."""
        if isinstance(activation, str):
            activation = parse_date(activation)
        records = self.predict(dataset, {channel: [int(activation)]})
        if not records:
            raise EmptyDataset(
                f"no window can be built for cohort ({channel}, {activation})"
            )
        return records[0].predicted

    def evaluate(self, dataset: LtvDataset, cohorts: dict[str, list[int]] | None = None,
                 n_total: int = 360) -> EvalReport:
        """Score predictions against realized actuals (cohorts need m+n days)."""
        records = [r for r in self.predict(dataset, cohorts) if r.actual is not None]
        fingerprint = self.model_.param_hash()[:12]
        return evaluate_records(records, n_total=n_total, fingerprint=fingerprint)

    def split_summary(self, dataset: LtvDataset) -> str:
        """Preview of the temporal train/validation split fit() would use."""
        windows, _ = prepare_training_batches(dataset, self._model_config(dataset.channels()))
        train_ws, val_ws = temporal_split(windows, self.val_fraction)
        from .training import describe_split

        return describe_split(train_ws, val_ws)
