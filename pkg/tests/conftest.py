import pytest
import torch

from dmt.model import Transformer, TransformerConfig

torch.set_num_threads(1)


def tiny_model(seed=0, vocab_size=12, num_layers=1, d_model=8, num_heads=2, d_ff=16, **kw):
    torch.manual_seed(seed)
    cfg = TransformerConfig(vocab_size=vocab_size, num_layers=num_layers, d_model=d_model,
                            num_heads=num_heads, d_ff=d_ff, **kw)
    model = Transformer(cfg)
    model.eval()
    return model


@pytest.fixture
def model():
    return tiny_model()


@pytest.fixture
def model2():
    return tiny_model(seed=3, num_layers=2)
