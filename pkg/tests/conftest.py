import numpy as np
import pytest

from lspc import nn


def const_net(layer_sizes, value, head="linear", dtype=np.float64):
    """Net with zero weights whose output is the constant final bias."""
    net = nn.MlpNet(layer_sizes, head=head, dtype=dtype)
    net.biases[-1] = np.full(layer_sizes[-1], value, dtype=dtype)
    return net


def const_gaussian_net(layer_sizes, mean, log_std, dtype=np.float64):
    net = nn.MlpNet(layer_sizes, head="gaussian", dtype=dtype)
    d = layer_sizes[-1] // 2
    # invert the sigmoid rescaling so the head emits exactly log_std
    frac = (log_std - nn.LOG_STD_MIN) / (nn.LOG_STD_MAX - nn.LOG_STD_MIN)
    raw = np.log(frac / (1.0 - frac))
    bias = np.concatenate([np.full(d, mean), np.full(d, raw)])
    net.biases[-1] = bias.astype(dtype)
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
