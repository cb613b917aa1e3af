"""scikit-learn style wrapper around the turbo autoencoder."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .channel import ChannelSpec, RngStream
from .checkpoint import load_model, save_model
from .codec import decode, encode, hard_decision
from .config import RunConfig
from .evaluation import EvalPoint, estimate
from .runs import build_models
from .tensor import Tensor, no_grad
from .training import TrainingState, train_epoch


class TurboAutoencoder(TransformerMixin, BaseEstimator):
    """Rate-1/2 learned code: minGRU/Mamba encoder, iterative CNN decoder.

    ``fit`` ignores ``X``; every batch draws fresh random messages and noise.
    ``transform`` encodes bit messages ``[n_messages, block_len]`` into
    unit-power codewords ``[n_messages, block_len, 2]``; ``predict`` and
    ``predict_proba`` decode received words of that same shape.
    """

    def __init__(self, block_len=64, enc_features=4, enc_blocks=2, dec_features=5, dec_layers=5,
                 dec_hidden=100, dec_kernel=5, iterations=6, epochs=500, samples_per_epoch=50000,
                 enc_batch=128, dec_batch=512, dec_train_ratio=5, learning_rate=2e-4,
                 weight_decay=0.01, train_ebn0=(1.0, 4.0), interleaver_seed=0, random_state=0,
                 warm_start=False, verbose=0):
        self.block_len = block_len
        self.enc_features = enc_features
        self.enc_blocks = enc_blocks
        self.dec_features = dec_features
        self.dec_layers = dec_layers
        self.dec_hidden = dec_hidden
        self.dec_kernel = dec_kernel
        self.iterations = iterations
        self.epochs = epochs
        self.samples_per_epoch = samples_per_epoch
        self.enc_batch = enc_batch
        self.dec_batch = dec_batch
        self.dec_train_ratio = dec_train_ratio
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.train_ebn0 = train_ebn0
        self.interleaver_seed = interleaver_seed
        self.random_state = random_state
        self.warm_start = warm_start
        self.verbose = verbose

    def _run_config(self) -> RunConfig:
        if np.isscalar(self.train_ebn0):
            snr = dict(train_ebn0_fixed=float(self.train_ebn0))
        else:
            low, high = self.train_ebn0
            snr = dict(train_ebn0_low=float(low), train_ebn0_high=float(high))
        return RunConfig(
            k=self.block_len, enc_features=self.enc_features, enc_blocks=self.enc_blocks,
            dec_features=self.dec_features, dec_layers=self.dec_layers, dec_hidden=self.dec_hidden,
            dec_kernel=self.dec_kernel, iterations=self.iterations, epochs=self.epochs,
            samples_per_epoch=self.samples_per_epoch, enc_batch=self.enc_batch,
            dec_batch=self.dec_batch, dec_train_ratio=self.dec_train_ratio, lr=self.learning_rate,
            weight_decay=self.weight_decay, seed=int(self.random_state or 0),
            interleaver_seed=self.interleaver_seed, **snr)

    def fit(self, X=None, y=None):
        cfg = self._run_config()
        if not (self.warm_start and hasattr(self, "state_")):
            enc, dec = build_models(cfg)
            self.state_ = TrainingState.create(enc, dec, cfg.train_config())
        rng = RngStream(cfg.seed)
        target = self.state_.epoch + cfg.epochs
        while self.state_.epoch < target:
            rows = train_epoch(self.state_, rng)
            if self.verbose:
                for r in rows:
                    print(f"[{r.epoch}] {r.phase:7s} loss={r.mean_loss:.4f} ber={r.train_ber:.4f}")
        self._set_models(self.state_.enc, self.state_.dec)
        self.history_ = list(self.state_.history)
        return self

    def _set_models(self, enc, dec) -> None:
        self.encoder_ = enc
        self.decoder_ = dec
        self.interleaver_ = enc.interleaver
        self.n_features_in_ = enc.interleaver.k

    def _check_messages(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float32)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected messages of length {self.n_features_in_}, got {X.shape[1]}")
        return X

    def _check_received(self, Y) -> np.ndarray:
        Y = check_array(Y, dtype=np.float32, allow_nd=True)
        if Y.ndim == 2 and Y.shape[1] == 2 * self.n_features_in_:
            Y = Y.reshape(len(Y), self.n_features_in_, 2)
        if Y.ndim != 3 or Y.shape[1:] != (self.n_features_in_, 2):
            raise ValueError(f"expected received words [n, {self.n_features_in_}, 2], got {Y.shape}")
        return Y

    def transform(self, X):
        check_is_fitted(self, "encoder_")
        with no_grad():
            return encode(self._check_messages(X), self.encoder_).data

    def predict_proba(self, Y):
        check_is_fitted(self, "decoder_")
        with no_grad():
            return decode(Tensor(self._check_received(Y)), self.decoder_).data

    def predict(self, Y):
        return hard_decision(self.predict_proba(Y))

    def score(self, Y, U):
        """Bit accuracy, i.e. ``1 - BER``, of decoding ``Y`` against messages ``U``."""
        U = np.asarray(U)
        return float(np.mean(self.predict(Y) == U))

    def evaluate(self, ebn0_db: float, blocks: int, seed: int = 0) -> EvalPoint:
        check_is_fitted(self, "encoder_")
        return estimate(self.encoder_, self.decoder_, ChannelSpec(0.5, ebn0_db), blocks, RngStream(seed))

    def save(self, path) -> None:
        check_is_fitted(self, "encoder_")
        save_model(path, self.encoder_, self.decoder_)

    @classmethod
    def load(cls, path) -> "TurboAutoencoder":
        enc, dec = load_model(path)
        first = dec.blocks[0][0]
        est = cls(block_len=enc.interleaver.k, enc_features=enc.features, enc_blocks=len(enc.branch1),
                  dec_features=dec.features, dec_layers=len(first.kernels),
                  dec_hidden=first.kernels[0].shape[2], dec_kernel=first.kernels[0].shape[0],
                  iterations=dec.iterations, interleaver_seed=enc.interleaver.seed)
        est._set_models(enc, dec)
        return est
