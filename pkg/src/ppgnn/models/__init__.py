"""Dense models trained on pre-propagated hop features, with manual backprop."""
from ._base import Model
from .checkpoint import load_checkpoint, save_checkpoint
from .hoga import HOGA
from .loss import cross_entropy, softmax
from .optim import AdamState, adam_step
from .sgc import SGC
from .sign import SIGN

MODEL_CLASSES = {"sgc": SGC, "sign": SIGN, "hoga": HOGA}


def build_model(kind, in_dim, num_classes, num_hops, hidden=64, heads=4, mlp_layers=2,
                dropout=0.0, seed=0, dtype="float32"):
    """Construct a model by name, routing width options to the right class."""
    kind = str(kind).lower()
    if kind == "sgc":
        return SGC(in_dim, num_classes, num_hops, seed=seed, dtype=dtype)
    if kind == "sign":
        return SIGN(in_dim, num_classes, num_hops, hidden=hidden, mlp_layers=mlp_layers,
                    dropout=dropout, seed=seed, dtype=dtype)
    if kind == "hoga":
        return HOGA(in_dim, num_classes, num_hops, d_model=hidden, heads=heads,
                    dropout=dropout, seed=seed, dtype=dtype)
    from ..errors import ConfigError
    raise ConfigError(f"unknown model kind {kind!r} (expected sgc, sign or hoga)")


def forward(model, batch, train_mode=False, dropout_seed=None):
    return model.forward(batch, train=train_mode, dropout_seed=dropout_seed)


def backward(model, tape, dlogits):
    return model.backward(tape, dlogits)


__all__ = [
    "Model", "SGC", "SIGN", "HOGA", "MODEL_CLASSES", "build_model", "forward", "backward",
    "cross_entropy", "softmax", "AdamState", "adam_step", "save_checkpoint", "load_checkpoint",
]
