"""scikit-learn style wrappers around degradation, training and inference."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .checkpoint import OptimState, load_checkpoint, save_checkpoint
from .config import DegradationSpec, ModelConfig, RunConfig, TrainConfig
from .data import SRDataset, degrade, mod_crop
from .metrics import EvalProtocol, psnr_y, ssim_y
from .model import HRAN
from .trainer import super_resolve, train
from .validation import check_image_pairs, check_images, check_is_fitted


class Degrader(TransformerMixin, BaseEstimator):
    """Stateless BI/BD degradation of HR images into LR images."""

    def __init__(self, kind="BI", scale=2, blur_size=7, blur_sigma=1.6, allow_any_scale=False):
        self.kind = kind
        self.scale = scale
        self.blur_size = blur_size
        self.blur_sigma = blur_sigma
        self.allow_any_scale = allow_any_scale

    def _spec(self):
        return DegradationSpec(self.kind, self.scale, self.blur_size, self.blur_sigma, self.allow_any_scale)

    def fit(self, X, y=None):
        self.spec_ = self._spec()
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        return [degrade(im, self.spec_) for im in check_images(X, min_size=self.spec_.scale)]


class HRANSuperResolver(BaseEstimator):
    """Train an HRAN on RGB images and super-resolve new ones.

    ``fit(X)`` treats ``X`` as HR images and synthesizes LR inputs with the
    configured degradation. ``fit(X, y)`` takes explicit LR images ``X`` and
    aligned HR targets ``y``. ``predict`` returns uint8 images; ``score`` is
    the mean Y-PSNR with a ``scale``-pixel border shave. With ``warm_start``
    a refit continues the previous run, so ``total_iters`` counts cumulatively.
    """

    def __init__(self, scale=2, num_rafgs=3, blocks_per_rafg=3, channels=48, attention="lca",
                 placement="parallel", banks=True, weight_norm=True, total_iters=1000, batch_size=16,
                 patch_size=24, base_lr=1e-3, halve_every=200_000, degradation="BI", seed=0,
                 warm_start=False):
        self.scale = scale
        self.num_rafgs = num_rafgs
        self.blocks_per_rafg = blocks_per_rafg
        self.channels = channels
        self.attention = attention
        self.placement = placement
        self.banks = banks
        self.weight_norm = weight_norm
        self.total_iters = total_iters
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.base_lr = base_lr
        self.halve_every = halve_every
        self.degradation = degradation
        self.seed = seed
        self.warm_start = warm_start

    def _model_config(self):
        return ModelConfig(num_rafgs=self.num_rafgs, blocks_per_rafg=self.blocks_per_rafg,
                           channels=self.channels, scale=self.scale, attention=self.attention,
                           placement=self.placement, banks=self.banks, weight_norm=self.weight_norm)

    def _train_config(self):
        return TrainConfig(total_iters=self.total_iters, seed=self.seed, batch_size=self.batch_size,
                           patch_size=self.patch_size, base_lr=self.base_lr, halve_every=self.halve_every,
                           log_every=max(1, self.total_iters // 20))

    def _spec(self):
        return DegradationSpec(self.degradation, self.scale, allow_any_scale=True)

    def fit(self, X, y=None):
        spec = self._spec()
        if y is None:
            hr = [mod_crop(im, self.scale) for im in check_images(X, min_size=self.patch_size * self.scale)]
            dataset = SRDataset(hr, [degrade(im, spec) for im in hr])
        else:
            lr, hr = check_image_pairs(X, y, self.scale)
            dataset = SRDataset(hr, lr)
        mcfg, tcfg = self._model_config(), self._train_config()
        model = optim = None
        if self.warm_start and hasattr(self, "model_") and self.model_.config == mcfg:
            model, optim = self.model_, self.optim_
        if model is None:
            model = HRAN(mcfg, seed=self.seed)
        if optim is None:
            optim = OptimState.zeros_like(model.params, beta1=tcfg.beta1, beta2=tcfg.beta2, eps=tcfg.eps,
                                          base_lr=tcfg.base_lr)
        optim, result = train(model, dataset, tcfg, optim=optim, degradation=spec)
        self.model_, self.optim_ = model, optim
        self.loss_curve_ = list(result.losses)
        self.n_iter_ = optim.t
        self.n_params_ = model.count_params().total
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return [super_resolve(self.model_, im) for im in check_images(X)]

    def _pairs(self, X, y):
        return check_image_pairs(X, y, self.scale)

    def score(self, X, y):
        """Mean Y-PSNR (dB) of ``predict(X)`` against ``y``."""
        lr, hr = self._pairs(X, y)
        protocol = EvalProtocol.for_scale(self.scale)
        return float(np.mean([psnr_y(sr, t, protocol) for sr, t in zip(self.predict(lr), hr)]))

    def score_ssim(self, X, y):
        lr, hr = self._pairs(X, y)
        protocol = EvalProtocol.for_scale(self.scale)
        return float(np.mean([ssim_y(sr, t, protocol) for sr, t in zip(self.predict(lr), hr)]))

    def save(self, path):
        check_is_fitted(self, "model_")
        run = RunConfig(self.model_.config, self._train_config(), self._spec())
        save_checkpoint(path, self.model_, self.optim_, run)

    @classmethod
    def load(cls, path) -> "HRANSuperResolver":
        model, optim, run = load_checkpoint(path)
        m = run.model
        kw = dict(scale=m.scale, num_rafgs=m.num_rafgs, blocks_per_rafg=m.blocks_per_rafg, channels=m.channels,
                  attention=m.attention, placement=m.placement, banks=m.banks, weight_norm=m.weight_norm,
                  degradation=run.degradation.kind)
        if run.train is not None:
            t = run.train
            kw.update(total_iters=t.total_iters, batch_size=t.batch_size, patch_size=t.patch_size,
                      base_lr=t.base_lr, halve_every=t.halve_every, seed=t.seed)
        est = cls(**kw)
        est.model_ = model
        est.optim_ = optim
        est.n_iter_ = optim.t if optim is not None else 0
        est.n_params_ = model.count_params().total
        est.loss_curve_ = []
        return est
